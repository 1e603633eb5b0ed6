//! Posterior-cache serialization.
//!
//! Layout (little-endian): magic `APC1`, version u32, cell size f64, entry
//! count u64, then per cell: key as 3 x i64, observation count u32,
//! accumulated precision f64, accumulated weighted target 3 x f64, prior
//! mean 3 x f64, prior variance f64.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anerf_core::bayes::{CellStats, PosteriorCache};
use anerf_core::math::Rgb;
use anyhow::{bail, Context, Result};

const MAGIC: &[u8; 4] = b"APC1";
const VERSION: u32 = 1;

pub fn write_cache(cache: &PosteriorCache, path: &Path) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&cache.cell_size().to_le_bytes())?;
    w.write_all(&(cache.len() as u64).to_le_bytes())?;
    for (key, cell) in cache.iter() {
        for k in [key.0, key.1, key.2] {
            w.write_all(&k.to_le_bytes())?;
        }
        w.write_all(&cell.observations.to_le_bytes())?;
        w.write_all(&cell.precision_obs.to_le_bytes())?;
        for v in cell.weighted_target.to_array() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in cell.prior_mean.to_array() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&cell.prior_var.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<PosteriorCache> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        bail!("not a posterior cache: bad magic");
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != VERSION {
        bail!("unsupported cache version");
    }
    let mut b8 = [0u8; 8];
    let read_f64 = |r: &mut BufReader<fs::File>| -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let cell_size = read_f64(&mut r)?;
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8);
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut key = [0i64; 3];
        for k in key.iter_mut() {
            r.read_exact(&mut b8)?;
            *k = i64::from_le_bytes(b8);
        }
        r.read_exact(&mut b4)?;
        let observations = u32::from_le_bytes(b4);
        let precision_obs = read_f64(&mut r)?;
        let weighted_target = Rgb::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?);
        let prior_mean = Rgb::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?);
        let prior_var = read_f64(&mut r)?;
        entries.push((
            (key[0], key[1], key[2]),
            CellStats {
                observations,
                precision_obs,
                weighted_target,
                prior_mean,
                prior_var,
            },
        ));
    }
    Ok(PosteriorCache::from_entries(cell_size, entries))
}
