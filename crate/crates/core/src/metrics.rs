//! Image-quality metrics: PSNR and SSIM.


use crate::image::ImageBuf;
use crate::math::fp;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricError {
    DimensionMismatch,
    /// SSIM needs both sides of the image to be at least 11 pixels.
    ImageTooSmall,
}

impl core::fmt::Display for MetricError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MetricError::DimensionMismatch => write!(f, "images have different dimensions"),
            MetricError::ImageTooSmall => write!(f, "ssim needs min(side) >= 11"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MetricError {}

/// PSNR above which two images are reported as identical.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Mean squared error over all pixels and channels.
pub fn mse(a: &ImageBuf, b: &ImageBuf) -> Result<f64, MetricError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricError::DimensionMismatch);
    }
    let mut acc = 0.0;
    for (pa, pb) in a.pixels().iter().zip(b.pixels().iter()) {
        let d = *pa - *pb;
        acc += d.dot(d);
    }
    Ok(acc / (a.len() as f64 * 3.0))
}

/// Peak signal-to-noise ratio in dB: `10 log10(max_value^2 / MSE)`, capped at
/// [`PSNR_CAP_DB`] for (near-)identical images.
pub fn psnr(a: &ImageBuf, b: &ImageBuf, max_value: f64) -> Result<f64, MetricError> {
    let err = mse(a, b)?;
    if err <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * fp::log10(max_value * max_value / err)).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut total = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dx = x as f64 - half;
            let dy = y as f64 - half;
            let v = fp::exp(-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
            w[y * SSIM_WINDOW + x] = v;
            total += v;
        }
    }
    for v in w.iter_mut() {
        *v /= total;
    }
    w
}

/// Structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5), stability constants K1 = 0.01 and K2 = 0.03, dynamic range
/// 1.0. Windows are evaluated where they fit entirely inside the image and
/// the score is averaged over positions and channels.
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> Result<f64, MetricError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricError::DimensionMismatch);
    }
    if (a.width as usize) < SSIM_WINDOW || (a.height as usize) < SSIM_WINDOW {
        return Err(MetricError::ImageTooSmall);
    }
    let window = gaussian_window();
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let width = a.width as usize;
    let height = a.height as usize;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=height - SSIM_WINDOW {
        for x0 in 0..=width - SSIM_WINDOW {
            for ch in 0..3 {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for wy in 0..SSIM_WINDOW {
                    for wx in 0..SSIM_WINDOW {
                        let w = window[wy * SSIM_WINDOW + wx];
                        let pa = a.get((x0 + wx) as u32, (y0 + wy) as u32)[ch];
                        let pb = b.get((x0 + wx) as u32, (y0 + wy) as u32)[ch];
                        mu_a += w * pa;
                        mu_b += w * pb;
                        aa += w * pa * pa;
                        bb += w * pb * pb;
                        ab += w * pa * pb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let score = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                total += score;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}
