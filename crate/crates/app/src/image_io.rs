//! PNG output, raw float dumps, and variance-map files.
//!
//! Raw dump layout (little-endian): magic `RFD1`, then `width`, `height`,
//! `channels` as u32, then `width * height * channels` f32 values in
//! row-major order, channels interleaved.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anerf_core::image::{ImageBuf, ScalarImage};
use anerf_core::math::Rgb;
use anyhow::{bail, Context, Result};

const FLOAT_DUMP_MAGIC: &[u8; 4] = b"RFD1";

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8
}

/// 8-bit PNG of an RGB buffer; values clamp to `[0, 1]`.
pub fn write_png(img: &ImageBuf, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(img.len() * 3);
    for p in img.pixels() {
        bytes.extend_from_slice(&[to_u8(p.x), to_u8(p.y), to_u8(p.z)]);
    }
    let buffer: image::RgbImage =
        image::ImageBuffer::from_raw(img.width, img.height, bytes).expect("sized buffer");
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Loads an 8-bit PNG into the linear `[0, 1]` buffer used everywhere else.
pub fn read_png(path: &Path) -> Result<ImageBuf> {
    let img = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_rgb8();
    let (width, height) = img.dimensions();
    let mut out = ImageBuf::new(width, height);
    for (x, y, pixel) in img.enumerate_pixels() {
        out.set(
            x,
            y,
            Rgb::new(
                pixel[0] as f64 / 255.0,
                pixel[1] as f64 / 255.0,
                pixel[2] as f64 / 255.0,
            ),
        );
    }
    Ok(out)
}

/// Raw float32 dump with the documented header.
pub fn write_float_dump(
    path: &Path,
    width: u32,
    height: u32,
    channels: u32,
    data: &[f32],
) -> Result<()> {
    if data.len() != (width as usize) * (height as usize) * (channels as usize) {
        bail!("float dump payload does not match dimensions");
    }
    let mut file = fs::File::create(path)?;
    file.write_all(FLOAT_DUMP_MAGIC)?;
    file.write_all(&width.to_le_bytes())?;
    file.write_all(&height.to_le_bytes())?;
    file.write_all(&channels.to_le_bytes())?;
    let mut payload = Vec::with_capacity(data.len() * 4);
    for v in data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&payload)?;
    Ok(())
}

pub fn read_float_dump(path: &Path) -> Result<(u32, u32, u32, Vec<f32>)> {
    let mut file = fs::File::open(path)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)?;
    if &header[0..4] != FLOAT_DUMP_MAGIC {
        bail!("not a float dump: bad magic");
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let channels = u32::from_le_bytes(header[12..16].try_into().unwrap());
    let count = (width as usize) * (height as usize) * (channels as usize);
    let mut payload = vec![0u8; count * 4];
    file.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((width, height, channels, data))
}

/// RGB image as a 3-channel float dump.
pub fn write_image_dump(img: &ImageBuf, path: &Path) -> Result<()> {
    let mut data = Vec::with_capacity(img.len() * 3);
    for p in img.pixels() {
        data.extend_from_slice(&[p.x as f32, p.y as f32, p.z as f32]);
    }
    write_float_dump(path, img.width, img.height, 3, &data)
}

/// Variance map artifacts: `<base>.f32` raw dump, `<base>.png` min-max
/// normalized grayscale, and `<base>.range.txt` recording the normalization.
pub fn write_variance_map(map: &ScalarImage, base: &Path) -> Result<()> {
    let data: Vec<f32> = map.values().iter().map(|&v| v as f32).collect();
    write_float_dump(&base.with_extension("f32"), map.width, map.height, 1, &data)?;
    let (lo, hi) = map.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut gray = ImageBuf::new(map.width, map.height);
    for py in 0..map.height {
        for px in 0..map.width {
            let v = (map.get(px, py) - lo) / span;
            gray.set(px, py, Rgb::splat(v));
        }
    }
    write_png(&gray, &base.with_extension("png"))?;
    fs::write(
        base.with_extension("range.txt"),
        format!("min {lo}\nmax {hi}\n"),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn png_round_trip_is_exact_at_8_bits() {
        let dir = tempdir().unwrap();
        let mut img = ImageBuf::new(5, 4);
        for (i, p) in img.pixels_mut().iter_mut().enumerate() {
            *p = Rgb::new(
                (i % 5) as f64 / 4.0,
                (i % 3) as f64 / 2.0,
                (i % 7) as f64 / 6.0,
            );
        }
        let path = dir.path().join("img.png");
        write_png(&img, &path).unwrap();
        let back = read_png(&path).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a.x - b.x).abs() <= 0.5 / 255.0 + 1e-9);
            assert!((a.y - b.y).abs() <= 0.5 / 255.0 + 1e-9);
            assert!((a.z - b.z).abs() <= 0.5 / 255.0 + 1e-9);
        }
    }

    #[test]
    fn float_dump_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("map.f32");
        let data: Vec<f32> = (0..24).map(|i| (i as f32).sin()).collect();
        write_float_dump(&path, 4, 2, 3, &data).unwrap();
        let (w, h, c, back) = read_float_dump(&path).unwrap();
        assert_eq!((w, h, c), (4, 2, 3));
        assert_eq!(back, data);
    }

    #[test]
    fn variance_map_writes_all_artifacts() {
        let dir = tempdir().unwrap();
        let mut map = ScalarImage::new(3, 3);
        for py in 0..3 {
            for px in 0..3 {
                map.set(px, py, (px + 3 * py) as f64 * 0.01);
            }
        }
        let base = dir.path().join("var");
        write_variance_map(&map, &base).unwrap();
        assert!(base.with_extension("f32").exists());
        assert!(base.with_extension("png").exists());
        let range = fs::read_to_string(base.with_extension("range.txt")).unwrap();
        assert!(range.starts_with("min 0"));
    }
}
