//! Closed-form Gaussian posterior updates over scene locations, per-view
//! information gain, candidate selection, and the training-free posterior
//! cache.
//!
//! Each fine sample along a rendered ray carries a Gaussian color belief
//! (`prior_mean`, `prior_var`). Observing the ray's true color constrains the
//! sample through the linear model `C = alpha * c + b` with ray noise equal
//! to the composited ray variance, so the posterior is again Gaussian and its
//! variance shrinks by a closed-form factor independent of the observed
//! value. Summing that shrink over a candidate view's rays scores the view
//! without ever consulting its ground-truth image.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::index::sample as index_sample;

use crate::camera::CameraPose;
use crate::field::FieldParams;
use crate::image::PosedImage;
use crate::math::{fp, Rgb, Vec3};
use crate::render::{self, Ray, RenderConfig, RenderedRay};
use crate::rng::{self, domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BayesError {
    /// posterior_multi needs at least one observation.
    NoObservations,
    /// Priors and ray variances must be positive.
    NonPositiveVariance,
    /// k must satisfy 1 <= k <= number of candidates.
    KOutOfRange,
}

impl core::fmt::Display for BayesError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            BayesError::NoObservations => write!(f, "need at least one observation"),
            BayesError::NonPositiveVariance => write!(f, "variances must be positive"),
            BayesError::KOutOfRange => write!(f, "k out of range"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for BayesError {}

/// Gaussian belief about one sample location on one ray, before observing the
/// ray's true color.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePrior {
    pub position: Vec3,
    /// Compositing weight of this sample on its ray.
    pub alpha: f64,
    /// Prior mean color of the location.
    pub prior_mean: Rgb,
    /// Prior color variance of the location (> 0).
    pub prior_var: f64,
    /// Composited mean color of the whole ray.
    pub ray_mean: Rgb,
    /// Composited variance of the whole ray (0 only when `alpha` is 0).
    pub ray_var: f64,
}

impl SamplePrior {
    /// The ray-mean contribution of everything except this sample:
    /// `b = ray_mean - alpha * prior_mean` per channel.
    pub fn unrelated_mean(&self) -> Rgb {
        self.ray_mean - self.prior_mean * self.alpha
    }
}

/// Posterior update for one location after observing one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorUpdate {
    /// Blend weight of the observation, in `[0, 1)`.
    pub gamma: f64,
    /// Posterior mean; only defined when the observed ray color was supplied.
    pub post_mean: Option<Rgb>,
    /// Posterior variance, `<= prior_var` with equality iff `alpha == 0`.
    pub post_var: f64,
}

/// Closed-form single-ray posterior.
///
/// `gamma = alpha^2 v_x / (alpha^2 v_x + v_r)` and
/// `post_var = v_x v_r / (alpha^2 v_x + v_r)`; with an observed ray color
/// `C`, `post_mean = gamma (C - b)/alpha + (1 - gamma) prior_mean`. The
/// variance never needs the observation. A zero alpha leaves the prior
/// untouched.
pub fn posterior_single(
    prior: &SamplePrior,
    observed: Option<Rgb>,
) -> Result<PosteriorUpdate, BayesError> {
    if prior.prior_var <= 0.0 {
        return Err(BayesError::NonPositiveVariance);
    }
    if prior.alpha == 0.0 {
        return Ok(PosteriorUpdate {
            gamma: 0.0,
            post_mean: observed.map(|_| prior.prior_mean),
            post_var: prior.prior_var,
        });
    }
    if prior.ray_var <= 0.0 {
        return Err(BayesError::NonPositiveVariance);
    }
    let a2vx = prior.alpha * prior.alpha * prior.prior_var;
    let denom = a2vx + prior.ray_var;
    let gamma = a2vx / denom;
    let post_var = prior.prior_var * prior.ray_var / denom;
    let post_mean = observed.map(|c| {
        let b = prior.unrelated_mean();
        (c - b) * (gamma / prior.alpha) + prior.prior_mean * (1.0 - gamma)
    });
    Ok(PosteriorUpdate {
        gamma,
        post_mean,
        post_var,
    })
}

/// One observed ray constraining a shared location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub alpha: f64,
    pub ray_var: f64,
    /// Observed (ground-truth) ray color.
    pub observed: Rgb,
    /// Mean contribution of the rest of that ray.
    pub b: Rgb,
}

/// Joint posterior over one location given several observed rays.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiPosterior {
    pub post_mean: Rgb,
    pub post_var: f64,
    /// Blend weights: one per observation plus the prior weight last; they
    /// sum to 1.
    pub gammas: Vec<f64>,
}

/// Joint multi-observation posterior by precision addition:
/// `1/post_var = 1/prior_var + sum_i alpha_i^2 / ray_var_i`, with the mean a
/// gamma-weighted blend of the per-ray estimates `(C_i - b_i)/alpha_i` and
/// the prior mean.
pub fn posterior_multi(
    prior_mean: Rgb,
    prior_var: f64,
    observations: &[Observation],
) -> Result<MultiPosterior, BayesError> {
    if observations.is_empty() {
        return Err(BayesError::NoObservations);
    }
    if prior_var <= 0.0 {
        return Err(BayesError::NonPositiveVariance);
    }
    let prior_precision = 1.0 / prior_var;
    let mut total_precision = prior_precision;
    for obs in observations {
        if obs.ray_var <= 0.0 {
            return Err(BayesError::NonPositiveVariance);
        }
        total_precision += obs.alpha * obs.alpha / obs.ray_var;
    }
    let post_var = 1.0 / total_precision;
    let mut gammas = Vec::with_capacity(observations.len() + 1);
    let mut post_mean = Rgb::ZERO;
    for obs in observations {
        let gamma = (obs.alpha * obs.alpha / obs.ray_var) / total_precision;
        gammas.push(gamma);
        if obs.alpha != 0.0 {
            post_mean += (obs.observed - obs.b) * (gamma / obs.alpha);
        }
    }
    let gamma_prior = prior_precision / total_precision;
    gammas.push(gamma_prior);
    post_mean += prior_mean * gamma_prior;
    Ok(MultiPosterior {
        post_mean,
        post_var,
        gammas,
    })
}

/// Per-sample priors for one ray of the current model; reuses the fine-pass
/// records from `render_ray`.
pub fn ray_prior_terms(
    coarse: &FieldParams,
    fine: &FieldParams,
    ray: &Ray,
    cfg: &RenderConfig,
    ray_seed: u64,
) -> Vec<SamplePrior> {
    let rendered = render::render_ray(coarse, fine, ray, cfg, ray_seed);
    rendered_ray_priors(&rendered)
}

/// Priors extracted from an already-rendered ray.
pub fn rendered_ray_priors(rendered: &RenderedRay) -> Vec<SamplePrior> {
    rendered
        .per_sample
        .iter()
        .map(|s| SamplePrior {
            position: s.position,
            alpha: s.alpha,
            prior_mean: s.color_mean,
            prior_var: s.variance,
            ray_mean: rendered.fine.mean,
            ray_var: rendered.fine.variance,
        })
        .collect()
}

/// Total variance reduction along a ray: the ray's information gain.
pub fn info_gain_ray(priors: &[SamplePrior]) -> f64 {
    priors
        .iter()
        .map(|p| {
            let post = posterior_single(p, None).expect("valid prior");
            p.prior_var - post.post_var
        })
        .sum()
}

/// Score of one candidate view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcquisitionResult {
    pub view_id: usize,
    /// Summed variance reduction over the evaluated rays, >= 0.
    pub score: f64,
    pub rays_evaluated: u64,
    pub stride: u32,
}

/// Scores a candidate view by summing per-ray information gain over the
/// pixel grid subsampled with `stride` (pixels `(i*stride, j*stride)`).
///
/// Ground truth is never consulted: only prior and posterior variances enter.
/// Deterministic given `seed` and independent of pixel evaluation order.
pub fn acquisition_score(
    coarse: &FieldParams,
    fine: &FieldParams,
    pose: &CameraPose,
    view_id: usize,
    stride: u32,
    cfg: &RenderConfig,
    seed: u64,
) -> AcquisitionResult {
    acquisition_score_with_cache(coarse, fine, pose, view_id, stride, cfg, seed, None)
}

/// [`acquisition_score`] with already-captured observations folded in: where
/// a sample's cell has cache entries, the cached posterior variance replaces
/// the model prior, so later rounds favor still-unobserved regions.
#[allow(clippy::too_many_arguments)]
pub fn acquisition_score_with_cache(
    coarse: &FieldParams,
    fine: &FieldParams,
    pose: &CameraPose,
    view_id: usize,
    stride: u32,
    cfg: &RenderConfig,
    seed: u64,
    cache: Option<&PosteriorCache>,
) -> AcquisitionResult {
    assert!(stride >= 1);
    let nx = pose.width.div_ceil(stride);
    let ny = pose.height.div_ceil(stride);
    let pixels: Vec<(u32, u32)> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i * stride, j * stride)))
        .collect();
    let gain_at = |&(px, py): &(u32, u32)| -> f64 {
        let ray = render::pixel_ray(pose, px, py).expect("stride grid in range");
        let mut priors = ray_prior_terms(coarse, fine, &ray, cfg, rng::pixel_seed(seed, px, py));
        if let Some(cache) = cache {
            for prior in priors.iter_mut() {
                if let Some((_, cached_var)) = cache.lookup(prior.position) {
                    prior.prior_var = cached_var;
                }
            }
        }
        info_gain_ray(&priors)
    };
    #[cfg(feature = "parallel")]
    let gains: Vec<f64> = {
        use rayon::prelude::*;
        pixels.par_iter().map(gain_at).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let gains: Vec<f64> = pixels.iter().map(gain_at).collect();
    // Fixed summation order regardless of scheduling.
    let score = gains.iter().sum();
    AcquisitionResult {
        view_id,
        score,
        rays_evaluated: nx as u64 * ny as u64,
        stride,
    }
}

/// Scores every candidate and returns the top `k` as `(view_id, score)`,
/// sorted by descending score with ties broken by the lower view id.
///
/// Each candidate's seed derives from its view id, so scores do not depend on
/// the composition of the pool.
#[allow(clippy::too_many_arguments)]
pub fn select_topk(
    coarse: &FieldParams,
    fine: &FieldParams,
    candidates: &[(usize, CameraPose)],
    k: usize,
    stride: u32,
    cfg: &RenderConfig,
    seed: u64,
    cache: Option<&PosteriorCache>,
) -> Result<Vec<(usize, f64)>, BayesError> {
    if k == 0 || k > candidates.len() {
        return Err(BayesError::KOutOfRange);
    }
    let mut scored = score_candidates(coarse, fine, candidates, stride, cfg, seed, cache);
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.view_id.cmp(&b.view_id))
    });
    Ok(scored
        .into_iter()
        .take(k)
        .map(|r| (r.view_id, r.score))
        .collect())
}

/// Scores all candidates (parallel under the `parallel` feature), in input
/// order.
pub fn score_candidates(
    coarse: &FieldParams,
    fine: &FieldParams,
    candidates: &[(usize, CameraPose)],
    stride: u32,
    cfg: &RenderConfig,
    seed: u64,
    cache: Option<&PosteriorCache>,
) -> Vec<AcquisitionResult> {
    let score_one = |&(view_id, ref pose): &(usize, CameraPose)| {
        let cand_seed = rng::mix3(seed, domain::CANDIDATE, view_id as u64);
        acquisition_score_with_cache(coarse, fine, pose, view_id, stride, cfg, cand_seed, cache)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        candidates.par_iter().map(score_one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        candidates.iter().map(score_one).collect()
    }
}

/// Heuristic selection baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineStrategy {
    /// Uniform without replacement.
    Random,
    /// Greedy furthest view: maximize the minimum camera distance to the
    /// training cameras and already-picked candidates.
    FurthestView,
}

/// Picks `k` candidate ids with a heuristic baseline. Deterministic given
/// `seed` (the furthest-view rule is deterministic regardless).
pub fn baseline_select(
    strategy: BaselineStrategy,
    candidates: &[(usize, Vec3)],
    training_positions: &[Vec3],
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, BayesError> {
    if k == 0 || k > candidates.len() {
        return Err(BayesError::KOutOfRange);
    }
    match strategy {
        BaselineStrategy::Random => {
            let mut rng = rng::stream(seed, domain::BASELINE, 0);
            let picks = index_sample(&mut rng, candidates.len(), k);
            Ok(picks.iter().map(|i| candidates[i].0).collect())
        }
        BaselineStrategy::FurthestView => {
            let mut reference: Vec<Vec3> = training_positions.to_vec();
            let mut remaining: Vec<(usize, Vec3)> = candidates.to_vec();
            let mut picked = Vec::with_capacity(k);
            for _ in 0..k {
                let (best_idx, _) = remaining
                    .iter()
                    .enumerate()
                    .map(|(i, &(_, pos))| {
                        let min_dist = reference
                            .iter()
                            .map(|r| (pos - *r).norm())
                            .fold(f64::INFINITY, f64::min);
                        (i, min_dist)
                    })
                    // Max min-distance; ties go to the lower list position.
                    .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, d)| {
                        if d > acc.1 {
                            (i, d)
                        } else {
                            acc
                        }
                    });
                let (id, pos) = remaining.remove(best_idx);
                reference.push(pos);
                picked.push(id);
            }
            Ok(picked)
        }
    }
}

/// Voxel key of a position at a given cell size.
pub type CellKey = (i64, i64, i64);

/// Accumulated observation terms for one voxel cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellStats {
    pub observations: u32,
    /// `sum_i alpha_i^2 / ray_var_i`.
    pub precision_obs: f64,
    /// `sum_i (alpha_i / ray_var_i) (C_i - b_i)` per channel.
    pub weighted_target: Rgb,
    /// Prior snapshot taken from the first observation landing in the cell.
    pub prior_mean: Rgb,
    pub prior_var: f64,
}

/// Spatial hash of ground-truth-conditioned posterior terms over voxel
/// cells.
///
/// Accumulation is precision addition, so merging rays is commutative up to
/// floating-point reassociation; rays are always inserted in a fixed order
/// for bit determinism. Only samples with `alpha > 0` carry information and
/// are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorCache {
    cell_size: f64,
    cells: BTreeMap<CellKey, CellStats>,
}

impl PosteriorCache {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        PosteriorCache {
            cell_size,
            cells: BTreeMap::new(),
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn key(&self, p: Vec3) -> CellKey {
        (
            fp::floor(p.x / self.cell_size) as i64,
            fp::floor(p.y / self.cell_size) as i64,
            fp::floor(p.z / self.cell_size) as i64,
        )
    }

    /// Folds one sample of one observed ray into its cell.
    pub fn insert_observation(&mut self, prior: &SamplePrior, observed: Rgb) {
        if prior.alpha <= 0.0 || prior.ray_var <= 0.0 || prior.prior_var <= 0.0 {
            return;
        }
        let key = self.key(prior.position);
        let entry = self.cells.entry(key).or_insert(CellStats {
            observations: 0,
            precision_obs: 0.0,
            weighted_target: Rgb::ZERO,
            prior_mean: prior.prior_mean,
            prior_var: prior.prior_var,
        });
        entry.observations += 1;
        entry.precision_obs += prior.alpha * prior.alpha / prior.ray_var;
        let b = prior.unrelated_mean();
        entry.weighted_target += (observed - b) * (prior.alpha / prior.ray_var);
    }

    /// Renders every pixel ray of a captured image and folds all its samples
    /// in. Ray priors come from the current model; observations are the image
    /// pixels.
    pub fn insert_image(
        &mut self,
        coarse: &FieldParams,
        fine: &FieldParams,
        image: &PosedImage,
        cfg: &RenderConfig,
        seed: u64,
    ) {
        let pose = &image.pose;
        let ray_jobs: Vec<(u32, u32)> = (0..pose.height)
            .flat_map(|py| (0..pose.width).map(move |px| (px, py)))
            .collect();
        let priors_at = |&(px, py): &(u32, u32)| -> Vec<SamplePrior> {
            let ray = render::pixel_ray(pose, px, py).expect("in range");
            ray_prior_terms(coarse, fine, &ray, cfg, rng::pixel_seed(seed, px, py))
        };
        #[cfg(feature = "parallel")]
        let all_priors: Vec<Vec<SamplePrior>> = {
            use rayon::prelude::*;
            ray_jobs.par_iter().map(priors_at).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let all_priors: Vec<Vec<SamplePrior>> = ray_jobs.iter().map(priors_at).collect();
        // Single-threaded merge in pixel order keeps accumulation bit stable.
        for ((px, py), priors) in ray_jobs.into_iter().zip(all_priors) {
            let observed = image.pixels.get(px, py);
            for prior in &priors {
                self.insert_observation(prior, observed);
            }
        }
    }

    /// Reconstructed posterior (mean, variance) of a cell.
    pub fn posterior_of(&self, key: CellKey) -> Option<(Rgb, f64)> {
        self.cells.get(&key).map(|cell| {
            let precision = 1.0 / cell.prior_var + cell.precision_obs;
            let var = 1.0 / precision;
            let mean = (cell.weighted_target + cell.prior_mean * (1.0 / cell.prior_var)) * var;
            (mean, var)
        })
    }

    /// Posterior of the cell containing a position, if observed.
    pub fn lookup(&self, p: Vec3) -> Option<(Rgb, f64)> {
        self.posterior_of(self.key(p))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellKey, &CellStats)> {
        self.cells.iter()
    }

    /// Rebuilds a cache from serialized entries.
    pub fn from_entries(cell_size: f64, entries: impl IntoIterator<Item = (CellKey, CellStats)>) -> Self {
        PosteriorCache {
            cell_size,
            cells: entries.into_iter().collect(),
        }
    }
}

/// Builds a posterior cache from freshly captured images.
pub fn bayesian_cache_build(
    coarse: &FieldParams,
    fine: &FieldParams,
    new_images: &[PosedImage],
    cell_size: f64,
    cfg: &RenderConfig,
    seed: u64,
) -> PosteriorCache {
    let mut cache = PosteriorCache::new(cell_size);
    for (i, image) in new_images.iter().enumerate() {
        cache.insert_image(coarse, fine, image, cfg, rng::mix3(seed, domain::CACHE, i as u64));
    }
    cache
}

/// Renders a ray, substituting cached posterior means for prior means at
/// samples whose cells have observations; compositing (alphas, background,
/// residual) is otherwise unchanged. Returns the mean color.
pub fn render_with_posterior(
    coarse: &FieldParams,
    fine: &FieldParams,
    cache: &PosteriorCache,
    ray: &Ray,
    cfg: &RenderConfig,
    ray_seed: u64,
) -> Rgb {
    let rendered = render::render_ray(coarse, fine, ray, cfg, ray_seed);
    let mut mean = cfg.background * rendered.fine.residual_transmittance;
    for s in &rendered.per_sample {
        let color = match cache.lookup(s.position) {
            Some((post_mean, _)) => post_mean,
            None => s.color_mean,
        };
        mean += color * s.alpha;
    }
    mean
}

/// Full-frame posterior-substituted render (parallel under the `parallel`
/// feature with identical output). Pixel seeds match [`render::render_image`]
/// so the two differ only by the mean substitution.
pub fn render_image_with_posterior(
    coarse: &FieldParams,
    fine: &FieldParams,
    cache: &PosteriorCache,
    pose: &CameraPose,
    cfg: &RenderConfig,
    image_seed: u64,
) -> crate::image::ImageBuf {
    let width = pose.width;
    let row = |py: u32| -> Vec<Rgb> {
        (0..width)
            .map(|px| {
                let ray = render::pixel_ray(pose, px, py).expect("in range");
                render_with_posterior(
                    coarse,
                    fine,
                    cache,
                    &ray,
                    cfg,
                    rng::pixel_seed(image_seed, px, py),
                )
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<Rgb>> = {
        use rayon::prelude::*;
        (0..pose.height).into_par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<Rgb>> = (0..pose.height).map(row).collect();
    let mut data = Vec::with_capacity((width as usize) * (pose.height as usize));
    for r in rows {
        data.extend(r);
    }
    crate::image::ImageBuf::from_data(width, pose.height, data)
}
