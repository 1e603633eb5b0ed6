//! Binary checkpoint container for the coarse/fine fields and optimizer.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic            4 bytes   "ANRF"
//! version          u32       1
//! l_position       u32
//! l_direction      u32
//! hidden_width     u32
//! color_hidden     u32
//! trunk_depth      u32
//! skip_layer       u32
//! sigma_activation u8        0 = relu, 1 = shifted softplus
//! sigma_shift      f64       shift of the softplus (0 for relu)
//! beta0_sq         f64
//! pos_scale        f64
//! dtype            u8        1 = f32, 2 = f64 parameter storage
//! step             u64       training-step counter
//! n_params         u64       per field
//! coarse theta     n_params floats (dtype)
//! fine theta       n_params floats (dtype)
//! has_optimizer    u8        0 or 1
//! [optimizer]      coarse m, coarse v, fine m, fine v; n_params f64 each
//! ```
//!
//! The writer stores f64 parameters (and always-f64 optimizer moments) so a
//! reloaded state replays the training trajectory bit-exactly; the f32 dtype
//! is accepted on read for compact exported checkpoints.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anerf_core::field::{EncodingConfig, FieldConfig, FieldParams, SigmaActivation};
use anerf_core::image::PosedImage;
use anerf_core::train::{AdamState, RayPool, TrainState};
use anyhow::{bail, Context, Result};

const MAGIC: &[u8; 4] = b"ANRF";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub field_config: FieldConfig,
    pub step: u64,
    pub coarse_theta: Vec<f64>,
    pub fine_theta: Vec<f64>,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub coarse: AdamState,
    pub fine: AdamState,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        Checkpoint {
            field_config: state.fine.config,
            step: state.step,
            coarse_theta: state.coarse.theta.clone(),
            fine_theta: state.fine.theta.clone(),
            optimizer: Some(OptimizerState {
                coarse: state.opt_coarse.clone(),
                fine: state.opt_fine.clone(),
            }),
        }
    }

    /// Field parameters for render-only use.
    pub fn fields(&self) -> (FieldParams, FieldParams) {
        let mut coarse = FieldParams::init(self.field_config, 0);
        coarse.theta = self.coarse_theta.clone();
        let mut fine = FieldParams::init(self.field_config, 0);
        fine.theta = self.fine_theta.clone();
        (coarse, fine)
    }

    /// Full training state; the ray pool is rebuilt from the given images.
    pub fn into_state(self, images: &[PosedImage]) -> TrainState {
        let (coarse, fine) = self.fields();
        let n = coarse.param_len();
        let (opt_coarse, opt_fine) = match self.optimizer {
            Some(opt) => (opt.coarse, opt.fine),
            None => (AdamState::new(n), AdamState::new(n)),
        };
        TrainState {
            coarse,
            fine,
            opt_coarse,
            opt_fine,
            step: self.step,
            pool: RayPool::from_images(images),
        }
    }
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_f32s_as_f64(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

pub fn write_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg = &checkpoint.field_config;
    for v in [
        cfg.encoding.l_position,
        cfg.encoding.l_direction,
        cfg.hidden_width as u32,
        cfg.color_hidden_width as u32,
        cfg.trunk_depth as u32,
        cfg.skip_layer as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    let (act_tag, shift) = match cfg.sigma_activation {
        SigmaActivation::Relu => (0u8, 0.0),
        SigmaActivation::ShiftedSoftplus { shift } => (1u8, shift),
    };
    w.write_all(&[act_tag])?;
    w.write_all(&shift.to_le_bytes())?;
    w.write_all(&cfg.beta0_sq.to_le_bytes())?;
    w.write_all(&cfg.pos_scale.to_le_bytes())?;
    w.write_all(&[2u8])?; // dtype f64
    w.write_all(&checkpoint.step.to_le_bytes())?;
    let n = checkpoint.coarse_theta.len();
    if checkpoint.fine_theta.len() != n {
        bail!("coarse/fine parameter counts differ");
    }
    w.write_all(&(n as u64).to_le_bytes())?;
    write_f64s(&mut w, &checkpoint.coarse_theta)?;
    write_f64s(&mut w, &checkpoint.fine_theta)?;
    match &checkpoint.optimizer {
        Some(opt) => {
            w.write_all(&[1u8])?;
            write_f64s(&mut w, &opt.coarse.m)?;
            write_f64s(&mut w, &opt.coarse.v)?;
            write_f64s(&mut w, &opt.fine.m)?;
            write_f64s(&mut w, &opt.fine.v)?;
        }
        None => w.write_all(&[0u8])?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        bail!("not a checkpoint: bad magic");
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        bail!("unsupported checkpoint version {version}");
    }
    let read_u32 = |r: &mut BufReader<fs::File>| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    };
    let l_position = read_u32(&mut r)?;
    let l_direction = read_u32(&mut r)?;
    let hidden_width = read_u32(&mut r)? as usize;
    let color_hidden_width = read_u32(&mut r)? as usize;
    let trunk_depth = read_u32(&mut r)? as usize;
    let skip_layer = read_u32(&mut r)? as usize;
    let mut byte = [0u8; 1];
    r.read_exact(&mut byte)?;
    let act_tag = byte[0];
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut f64buf)?;
    let shift = f64::from_le_bytes(f64buf);
    r.read_exact(&mut f64buf)?;
    let beta0_sq = f64::from_le_bytes(f64buf);
    r.read_exact(&mut f64buf)?;
    let pos_scale = f64::from_le_bytes(f64buf);
    let sigma_activation = match act_tag {
        0 => SigmaActivation::Relu,
        1 => SigmaActivation::ShiftedSoftplus { shift },
        other => bail!("unknown sigma activation tag {other}"),
    };
    r.read_exact(&mut byte)?;
    let dtype = byte[0];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let step = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    let (coarse_theta, fine_theta) = match dtype {
        2 => (read_f64s(&mut r, n)?, read_f64s(&mut r, n)?),
        1 => (read_f32s_as_f64(&mut r, n)?, read_f32s_as_f64(&mut r, n)?),
        other => bail!("unknown checkpoint dtype {other}"),
    };
    r.read_exact(&mut byte)?;
    let optimizer = if byte[0] == 1 {
        Some(OptimizerState {
            coarse: AdamState {
                m: read_f64s(&mut r, n)?,
                v: read_f64s(&mut r, n)?,
            },
            fine: AdamState {
                m: read_f64s(&mut r, n)?,
                v: read_f64s(&mut r, n)?,
            },
        })
    } else {
        None
    };

    let field_config = FieldConfig {
        encoding: EncodingConfig {
            l_position,
            l_direction,
        },
        hidden_width,
        color_hidden_width,
        trunk_depth,
        skip_layer,
        beta0_sq,
        sigma_activation,
        pos_scale,
        // Only used at initialization; the stored parameters carry the
        // actual bias.
        variance_head_bias: 0.0,
    };
    // Validate the parameter count against the declared architecture.
    let expected = FieldParams::init(field_config, 0).param_len();
    if expected != n {
        bail!("parameter count {n} does not match architecture (expected {expected})");
    }
    Ok(Checkpoint {
        field_config,
        step,
        coarse_theta,
        fine_theta,
        optimizer,
    })
}
