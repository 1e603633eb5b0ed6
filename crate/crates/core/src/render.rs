//! Ray generation and volume rendering with Gaussian mean/variance
//! compositing.
//!
//! A ray is rendered in two passes: a coarse pass with stratified samples and
//! plain color compositing, then a fine pass over the union of coarse samples
//! and samples drawn from the coarse weights, composited as a Gaussian
//! (`mean = sum alpha_i * c_i`, `variance = sum alpha_i^2 * beta_i^2`). The
//! fine pass keeps per-sample records so posterior updates can reuse them
//! without re-evaluating the field.

use alloc::vec::Vec;

use rand::Rng;

use crate::camera::CameraPose;
use crate::field::{EvalWorkspace, FieldParams};
use crate::image::{ImageBuf, ScalarImage};
use crate::math::{fp, Rgb, Vec3};
use crate::rng::{self, domain};

/// A camera ray with its integration bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn point_at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderError {
    /// Pixel coordinates outside the image.
    PixelOutOfBounds,
    /// sigmas/deltas/colors/variances length mismatch.
    LengthMismatch,
    /// Negative density or non-positive delta.
    InvalidInput,
    /// t values must be strictly ascending inside [t_near, t_far].
    NotAscending,
}

impl core::fmt::Display for RenderError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RenderError::PixelOutOfBounds => write!(f, "pixel outside the image"),
            RenderError::LengthMismatch => write!(f, "per-sample list lengths differ"),
            RenderError::InvalidInput => write!(f, "negative density or non-positive delta"),
            RenderError::NotAscending => write!(f, "sample t values must be strictly ascending"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for RenderError {}

/// Pinhole ray through the center of pixel `(px, py)`.
///
/// Camera space: `x` right, `y` up, looking along `-z`; pixel rows increase
/// downward, so the `y` offset is negated. The principal point is the image
/// center.
pub fn pixel_ray(pose: &CameraPose, px: u32, py: u32) -> Result<Ray, RenderError> {
    if px >= pose.width || py >= pose.height {
        return Err(RenderError::PixelOutOfBounds);
    }
    let cx = pose.width as f64 / 2.0;
    let cy = pose.height as f64 / 2.0;
    let dir_cam = Vec3::new(
        (px as f64 + 0.5 - cx) / pose.focal,
        -(py as f64 + 0.5 - cy) / pose.focal,
        -1.0,
    );
    Ok(Ray {
        origin: pose.position,
        direction: pose.rotation.mul_vec(dir_cam).normalized(),
        t_near: pose.t_near,
        t_far: pose.t_far,
    })
}

/// Strictly ascending sample depths along a ray with their spacings; the last
/// spacing runs to `t_far`.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub t_values: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl RaySamples {
    /// Builds samples from already-sorted t values.
    pub fn from_sorted(t_values: Vec<f64>, t_far: f64) -> Result<Self, RenderError> {
        if t_values.is_empty() {
            return Err(RenderError::InvalidInput);
        }
        let mut deltas = Vec::with_capacity(t_values.len());
        for i in 0..t_values.len() {
            let next = if i + 1 < t_values.len() {
                t_values[i + 1]
            } else {
                t_far
            };
            let d = next - t_values[i];
            if d <= 0.0 {
                return Err(RenderError::NotAscending);
            }
            deltas.push(d);
        }
        Ok(RaySamples { t_values, deltas })
    }

    pub fn len(&self) -> usize {
        self.t_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_values.is_empty()
    }
}

/// One uniform draw per equal-width bin of `[t_near, t_far]`.
pub fn stratified_samples(ray: &Ray, n: usize, seed: u64) -> RaySamples {
    assert!(n >= 1);
    let mut rng = rng::rng_from(seed);
    let span = ray.t_far - ray.t_near;
    let width = span / n as f64;
    let mut t_values = Vec::with_capacity(n);
    for i in 0..n {
        let jitter: f64 = rng.gen::<f64>();
        // Clamp away from the bin's right edge so values stay strictly
        // ascending even after floating-point rounding.
        let t = ray.t_near + (i as f64 + jitter.min(1.0 - 1e-12)) * width;
        t_values.push(t);
    }
    RaySamples::from_sorted(t_values, ray.t_far).expect("stratified draws are ascending")
}

/// Per-sample compositing weights `alpha_i = T_i (1 - exp(-sigma_i delta_i))`
/// and the residual transmittance past the last sample.
///
/// `alpha_i` is computed as `T_i - T_{i+1}`, which makes
/// `sum alpha + residual = 1` hold to rounding error by construction.
pub fn alpha_weights(sigmas: &[f64], deltas: &[f64]) -> Result<(Vec<f64>, f64), RenderError> {
    let (alphas, trans) = alpha_weights_with_transmittance(sigmas, deltas)?;
    let residual = *trans.last().expect("transmittance includes T_0");
    Ok((alphas, residual))
}

/// [`alpha_weights`] plus the transmittance ladder `T_0..T_n` (with
/// `T_0 = 1` and `T_n` the residual); the training backward pass needs the
/// intermediate values.
pub(crate) fn alpha_weights_with_transmittance(
    sigmas: &[f64],
    deltas: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), RenderError> {
    if sigmas.len() != deltas.len() {
        return Err(RenderError::LengthMismatch);
    }
    let mut alphas = Vec::with_capacity(sigmas.len());
    let mut trans = Vec::with_capacity(sigmas.len() + 1);
    let mut transmittance = 1.0_f64;
    trans.push(transmittance);
    for (&sigma, &delta) in sigmas.iter().zip(deltas.iter()) {
        if sigma < 0.0 || delta <= 0.0 {
            return Err(RenderError::InvalidInput);
        }
        let next = transmittance * fp::exp(-sigma * delta);
        alphas.push(transmittance - next);
        transmittance = next;
        trans.push(transmittance);
    }
    Ok((alphas, trans))
}

/// The composited ray color as a Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct RayGaussian {
    /// Composited mean color, including the background contribution.
    pub mean: Rgb,
    /// Composited variance `sum alpha_i^2 beta_i^2`; the background adds no
    /// variance.
    pub variance: f64,
    pub alphas: Vec<f64>,
    pub residual_transmittance: f64,
}

/// Composites per-sample Gaussians into the ray Gaussian; the background
/// color enters the mean weighted by the residual transmittance and
/// contributes zero variance.
pub fn composite_mean_var(
    alphas: &[f64],
    color_means: &[Rgb],
    variances: &[f64],
    residual_transmittance: f64,
    background: Rgb,
) -> Result<RayGaussian, RenderError> {
    if alphas.len() != color_means.len() || alphas.len() != variances.len() {
        return Err(RenderError::LengthMismatch);
    }
    let mut mean = background * residual_transmittance;
    let mut variance = 0.0;
    for ((&a, c), &v) in alphas.iter().zip(color_means.iter()).zip(variances.iter()) {
        mean += *c * a;
        variance += a * a * v;
    }
    Ok(RayGaussian {
        mean,
        variance,
        alphas: alphas.to_vec(),
        residual_transmittance,
    })
}

/// Draws `n_fine` depths by inverse-transform sampling from the piecewise
/// constant density proportional to the coarse alphas over the coarse bins
/// (`[t_i, t_i + delta_i)`), uniform over all bins when every alpha is zero.
/// Returns the sorted union of coarse and fine depths with exact duplicates
/// dropped.
pub fn hierarchical_resample(
    coarse: &RaySamples,
    coarse_alphas: &[f64],
    n_fine: usize,
    seed: u64,
) -> RaySamples {
    assert!(n_fine >= 1);
    assert_eq!(coarse.len(), coarse_alphas.len());
    let t_far = coarse.t_values[coarse.len() - 1] + coarse.deltas[coarse.len() - 1];
    let total: f64 = coarse_alphas.iter().sum();
    let uniform = total <= 0.0;
    let n_bins = coarse.len();
    let mut cdf = Vec::with_capacity(n_bins + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for i in 0..n_bins {
        let w = if uniform { 1.0 } else { coarse_alphas[i] };
        acc += w;
        cdf.push(acc);
    }
    let norm = acc;
    let mut rng = rng::rng_from(seed);
    let mut merged = coarse.t_values.clone();
    merged.reserve(n_fine);
    for _ in 0..n_fine {
        let u: f64 = rng.gen::<f64>() * norm;
        // First bin whose cumulative weight exceeds u.
        let mut bin = match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        bin = bin.min(n_bins - 1);
        let span = cdf[bin + 1] - cdf[bin];
        let frac = if span > 0.0 { (u - cdf[bin]) / span } else { 0.5 };
        let bin_lo = coarse.t_values[bin];
        merged.push(bin_lo + frac.clamp(0.0, 1.0 - 1e-12) * coarse.deltas[bin]);
    }
    merged.sort_by(|a, b| a.partial_cmp(b).unwrap());
    merged.dedup();
    RaySamples::from_sorted(merged, t_far).expect("merged samples are ascending")
}

/// Rendering knobs shared across passes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub background: Rgb,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            n_coarse: 64,
            n_fine: 128,
            background: Rgb::ZERO,
        }
    }
}

/// Everything the fine pass knows about one sample, kept for posterior use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRecord {
    pub t: f64,
    pub alpha: f64,
    pub position: Vec3,
    pub color_mean: Rgb,
    pub variance: f64,
}

/// Output of rendering one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedRay {
    /// Coarse-pass composite (plain colors, no variance).
    pub coarse_color: Rgb,
    /// Fine-pass Gaussian.
    pub fine: RayGaussian,
    pub per_sample: Vec<SampleRecord>,
}

/// Deterministic per-pass sample sets for one ray.
pub fn sample_ray(
    coarse_field: &FieldParams,
    ray: &Ray,
    cfg: &RenderConfig,
    ray_seed: u64,
) -> (RaySamples, RaySamples) {
    let mut ws = EvalWorkspace::default();
    let coarse_ts =
        stratified_samples(ray, cfg.n_coarse, rng::mix2(ray_seed, domain::COARSE_SAMPLES));
    let mut sigmas = Vec::with_capacity(coarse_ts.len());
    for &t in &coarse_ts.t_values {
        let (sigma, _, _) = coarse_field.eval_fast(ray.point_at(t), ray.direction, false, &mut ws);
        sigmas.push(sigma);
    }
    let (alphas, _) = alpha_weights(&sigmas, &coarse_ts.deltas).expect("valid samples");
    let fine_ts = hierarchical_resample(
        &coarse_ts,
        &alphas,
        cfg.n_fine,
        rng::mix2(ray_seed, domain::FINE_SAMPLES),
    );
    (coarse_ts, fine_ts)
}

/// Renders one ray through the coarse and fine fields. The coarse pass has no
/// uncertainty branch; the fine pass composites mean and variance over the
/// merged coarse+fine sample set. Deterministic given `ray_seed`.
pub fn render_ray(
    coarse: &FieldParams,
    fine: &FieldParams,
    ray: &Ray,
    cfg: &RenderConfig,
    ray_seed: u64,
) -> RenderedRay {
    let mut ws = EvalWorkspace::default();
    let coarse_ts =
        stratified_samples(ray, cfg.n_coarse, rng::mix2(ray_seed, domain::COARSE_SAMPLES));
    let mut c_sigmas = Vec::with_capacity(coarse_ts.len());
    let mut c_colors = Vec::with_capacity(coarse_ts.len());
    for &t in &coarse_ts.t_values {
        let (sigma, color, _) = coarse.eval_fast(ray.point_at(t), ray.direction, false, &mut ws);
        c_sigmas.push(sigma);
        c_colors.push(color);
    }
    let (c_alphas, c_resid) = alpha_weights(&c_sigmas, &coarse_ts.deltas).expect("valid samples");
    let mut coarse_color = cfg.background * c_resid;
    for (&a, c) in c_alphas.iter().zip(c_colors.iter()) {
        coarse_color += *c * a;
    }
    let fine_ts = hierarchical_resample(
        &coarse_ts,
        &c_alphas,
        cfg.n_fine,
        rng::mix2(ray_seed, domain::FINE_SAMPLES),
    );

    let mut f_sigmas = Vec::with_capacity(fine_ts.len());
    let mut f_colors = Vec::with_capacity(fine_ts.len());
    let mut f_vars = Vec::with_capacity(fine_ts.len());
    let mut positions = Vec::with_capacity(fine_ts.len());
    for &t in &fine_ts.t_values {
        let p = ray.point_at(t);
        let (sigma, color, variance) = fine.eval_fast(p, ray.direction, true, &mut ws);
        f_sigmas.push(sigma);
        f_colors.push(color);
        f_vars.push(variance);
        positions.push(p);
    }
    let (f_alphas, f_resid) = alpha_weights(&f_sigmas, &fine_ts.deltas).expect("valid samples");
    let fine_gaussian = composite_mean_var(&f_alphas, &f_colors, &f_vars, f_resid, cfg.background)
        .expect("matched lengths");
    let per_sample = fine_ts
        .t_values
        .iter()
        .enumerate()
        .map(|(i, &t)| SampleRecord {
            t,
            alpha: f_alphas[i],
            position: positions[i],
            color_mean: f_colors[i],
            variance: f_vars[i],
        })
        .collect();
    RenderedRay {
        coarse_color,
        fine: fine_gaussian,
        per_sample,
    }
}

/// Renders a ray with both sample sets fixed; rendering, training, and
/// posterior construction all share this path.
pub fn render_ray_given_samples(
    coarse: &FieldParams,
    fine: &FieldParams,
    ray: &Ray,
    coarse_ts: &RaySamples,
    fine_ts: &RaySamples,
    cfg: &RenderConfig,
) -> RenderedRay {
    let mut ws = EvalWorkspace::default();
    // Coarse pass: plain composite.
    let mut c_sigmas = Vec::with_capacity(coarse_ts.len());
    let mut c_colors = Vec::with_capacity(coarse_ts.len());
    for &t in &coarse_ts.t_values {
        let (sigma, color, _) = coarse.eval_fast(ray.point_at(t), ray.direction, false, &mut ws);
        c_sigmas.push(sigma);
        c_colors.push(color);
    }
    let (c_alphas, c_resid) = alpha_weights(&c_sigmas, &coarse_ts.deltas).expect("valid samples");
    let mut coarse_color = cfg.background * c_resid;
    for (&a, c) in c_alphas.iter().zip(c_colors.iter()) {
        coarse_color += *c * a;
    }

    // Fine pass with the uncertainty branch.
    let mut f_sigmas = Vec::with_capacity(fine_ts.len());
    let mut f_colors = Vec::with_capacity(fine_ts.len());
    let mut f_vars = Vec::with_capacity(fine_ts.len());
    let mut positions = Vec::with_capacity(fine_ts.len());
    for &t in &fine_ts.t_values {
        let p = ray.point_at(t);
        let (sigma, color, variance) = fine.eval_fast(p, ray.direction, true, &mut ws);
        f_sigmas.push(sigma);
        f_colors.push(color);
        f_vars.push(variance);
        positions.push(p);
    }
    let (f_alphas, f_resid) = alpha_weights(&f_sigmas, &fine_ts.deltas).expect("valid samples");
    let fine_gaussian =
        composite_mean_var(&f_alphas, &f_colors, &f_vars, f_resid, cfg.background)
            .expect("matched lengths");
    let per_sample = fine_ts
        .t_values
        .iter()
        .enumerate()
        .map(|(i, &t)| SampleRecord {
            t,
            alpha: f_alphas[i],
            position: positions[i],
            color_mean: f_colors[i],
            variance: f_vars[i],
        })
        .collect();
    RenderedRay {
        coarse_color,
        fine: fine_gaussian,
        per_sample,
    }
}

/// RGB render plus the per-pixel fine variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub rgb: ImageBuf,
    pub variance: ScalarImage,
}

/// Renders one pixel; the seed is derived per pixel so images are independent
/// of pixel evaluation order.
pub fn render_pixel(
    coarse: &FieldParams,
    fine: &FieldParams,
    pose: &CameraPose,
    px: u32,
    py: u32,
    cfg: &RenderConfig,
    image_seed: u64,
) -> Result<(Rgb, f64), RenderError> {
    let ray = pixel_ray(pose, px, py)?;
    let rendered = render_ray(coarse, fine, &ray, cfg, rng::pixel_seed(image_seed, px, py));
    Ok((rendered.fine.mean, rendered.fine.variance))
}

/// Full-frame render; rows fan out in parallel under the `parallel` feature
/// with identical output.
pub fn render_image(
    coarse: &FieldParams,
    fine: &FieldParams,
    pose: &CameraPose,
    cfg: &RenderConfig,
    image_seed: u64,
) -> RenderedImage {
    let width = pose.width;
    let row = |py: u32| -> Vec<(Rgb, f64)> {
        (0..width)
            .map(|px| render_pixel(coarse, fine, pose, px, py, cfg, image_seed).expect("in range"))
            .collect()
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<(Rgb, f64)>> = {
        use rayon::prelude::*;
        (0..pose.height).into_par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<(Rgb, f64)>> = (0..pose.height).map(row).collect();

    let mut rgb = ImageBuf::new(width, pose.height);
    let mut variance = ScalarImage::new(width, pose.height);
    for (py, row) in rows.into_iter().enumerate() {
        for (px, (color, var)) in row.into_iter().enumerate() {
            rgb.set(px as u32, py as u32, color);
            variance.set(px as u32, py as u32, var);
        }
    }
    RenderedImage { rgb, variance }
}
