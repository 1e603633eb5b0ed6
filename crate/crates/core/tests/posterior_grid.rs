//! Grid-integration oracle for the closed-form posterior.
//!
//! The posterior of one location given one observed ray is the normalized
//! product of two Gaussians: the prior over the location's color and the
//! observation likelihood `N(C; alpha * c + b, ray_var)` seen as a function
//! of `c`. Integrating that product numerically on a dense grid gives
//! reference means and variances independent of the closed form.

use anerf_core::bayes::{posterior_single, SamplePrior};
use anerf_core::math::{Rgb, Vec3};
use anerf_core::rng;
use rand::Rng;

/// Posterior mean and variance by trapezoid integration of the unnormalized
/// density over a wide grid.
fn grid_posterior(
    prior_mean: f64,
    prior_var: f64,
    alpha: f64,
    ray_var: f64,
    observed: f64,
    b: f64,
) -> (f64, f64) {
    // Cover both the prior and the observation-implied estimate generously.
    let est = if alpha > 0.0 {
        (observed - b) / alpha
    } else {
        prior_mean
    };
    let spread = prior_var.sqrt().max(ray_var.sqrt() / alpha.max(1e-3)) * 12.0;
    let lo = prior_mean.min(est) - spread;
    let hi = prior_mean.max(est) + spread;
    let n = 40_001;
    let dx = (hi - lo) / (n - 1) as f64;
    let mut mass = 0.0;
    let mut first = 0.0;
    let mut second = 0.0;
    for i in 0..n {
        let c = lo + i as f64 * dx;
        let r_obs = observed - alpha * c - b;
        let r_pri = c - prior_mean;
        let log_density =
            -r_obs * r_obs / (2.0 * ray_var) - r_pri * r_pri / (2.0 * prior_var);
        let w = log_density.exp() * if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        mass += w;
        first += w * c;
        second += w * c * c;
    }
    let mean = first / mass;
    let var = second / mass - mean * mean;
    (mean, var)
}

fn make_prior(alpha: f64, prior_mean: f64, prior_var: f64, ray_var: f64, b: f64) -> SamplePrior {
    SamplePrior {
        position: Vec3::ZERO,
        alpha,
        prior_mean: Rgb::splat(prior_mean),
        prior_var,
        ray_mean: Rgb::splat(b + alpha * prior_mean),
        ray_var,
    }
}

#[test]
fn worked_example_matches_grid_integration() {
    let prior = make_prior(0.5, 0.2, 1.0, 0.25, 0.6);
    let update = posterior_single(&prior, Some(Rgb::splat(1.0))).unwrap();
    let (mean, var) = grid_posterior(0.2, 1.0, 0.5, 0.25, 1.0, 0.6);
    assert!((update.post_mean.unwrap().x - mean).abs() < 1e-4);
    assert!((update.post_var - var).abs() < 1e-4);
    // Frozen closed-form values for the worked numbers.
    assert!((update.post_mean.unwrap().x - 0.5).abs() < 1e-12);
    assert!((update.post_var - 0.5).abs() < 1e-12);
    assert!((update.gamma - 0.5).abs() < 1e-12);
}

#[test]
fn random_configurations_match_grid_integration() {
    let mut rng = rng::stream(1717, 0x61, 0);
    for case in 0..60 {
        let alpha = 0.05 + 0.95 * rng.gen::<f64>();
        let prior_mean = rng.gen::<f64>() * 2.0 - 0.5;
        let prior_var = 0.05 + rng.gen::<f64>() * 1.5;
        let ray_var = 0.05 + rng.gen::<f64>() * 1.5;
        let b = rng.gen::<f64>() * 0.8;
        let observed = rng.gen::<f64>() * 1.5 - 0.2;
        let prior = make_prior(alpha, prior_mean, prior_var, ray_var, b);
        let update = posterior_single(&prior, Some(Rgb::splat(observed))).unwrap();
        let (mean, var) = grid_posterior(prior_mean, prior_var, alpha, ray_var, observed, b);
        assert!(
            (update.post_mean.unwrap().x - mean).abs() < 1e-4,
            "case {case}: closed-form mean {} vs grid {mean}",
            update.post_mean.unwrap().x
        );
        assert!(
            (update.post_var - var).abs() < 1e-4,
            "case {case}: closed-form var {} vs grid {var}",
            update.post_var
        );
    }
}
