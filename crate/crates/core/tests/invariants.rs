//! Property tests for the core math invariants.

use anerf_core::bayes::{posterior_single, SamplePrior};
use anerf_core::field::{positional_encode, variance_activation};
use anerf_core::math::{Rgb, Vec3};
use anerf_core::render::{
    alpha_weights, composite_mean_var, hierarchical_resample, stratified_samples, Ray, RaySamples,
};
use proptest::prelude::*;

fn sigma_delta_lists() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..48).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.0f64..40.0, n),
            proptest::collection::vec(1e-6f64..0.8, n),
        )
    })
}

proptest! {
    #[test]
    fn encoding_has_exact_length_and_range(
        values in proptest::collection::vec(-8.0f64..8.0, 1..6),
        l in 1u32..12,
    ) {
        let out = positional_encode(&values, l);
        prop_assert_eq!(out.len(), 2 * l as usize * values.len());
        for v in out {
            prop_assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn alpha_weights_partition_unity((sigmas, deltas) in sigma_delta_lists()) {
        let (alphas, residual) = alpha_weights(&sigmas, &deltas).unwrap();
        let total: f64 = alphas.iter().sum::<f64>() + residual;
        prop_assert!((total - 1.0).abs() < 1e-12);
        for a in alphas {
            prop_assert!((0.0..=1.0).contains(&a));
        }
        prop_assert!((0.0..=1.0).contains(&residual));
    }

    #[test]
    fn variance_activation_exceeds_floor(raw in -30.0f64..30.0, beta0 in 1e-4f64..2.0) {
        let v = variance_activation(raw, beta0);
        prop_assert!(v > beta0);
        prop_assert!(variance_activation(raw + 0.5, beta0) > v);
    }

    #[test]
    fn posterior_precision_identity(
        alpha in 0.0f64..1.0,
        prior_var in 1e-3f64..4.0,
        ray_var in 1e-3f64..4.0,
    ) {
        let prior = SamplePrior {
            position: Vec3::ZERO,
            alpha,
            prior_mean: Rgb::splat(0.4),
            prior_var,
            ray_mean: Rgb::splat(0.6),
            ray_var,
        };
        let update = posterior_single(&prior, None).unwrap();
        let direct = 1.0 / (1.0 / prior_var + alpha * alpha / ray_var);
        prop_assert!((update.post_var - direct).abs() <= 1e-12 * direct.max(1.0));
        prop_assert!(update.post_var <= prior_var);
        if alpha > 0.0 {
            prop_assert!(update.post_var < prior_var);
        }
        prop_assert!((0.0..1.0).contains(&update.gamma));
    }

    #[test]
    fn composited_variance_is_exact_quadratic_form(
        (sigmas, deltas) in sigma_delta_lists(),
    ) {
        let n = sigmas.len();
        let (alphas, residual) = alpha_weights(&sigmas, &deltas).unwrap();
        let colors: Vec<Rgb> = (0..n).map(|i| Rgb::splat(i as f64 / n as f64)).collect();
        let vars: Vec<f64> = (0..n).map(|i| 0.01 + 0.02 * i as f64).collect();
        let g = composite_mean_var(&alphas, &colors, &vars, residual, Rgb::splat(0.5)).unwrap();
        let direct: f64 = alphas.iter().zip(&vars).map(|(a, v)| a * a * v).sum();
        prop_assert_eq!(g.variance, direct);
        // Raising any single sample variance cannot lower the composite.
        let mut bumped = vars.clone();
        if n > 0 {
            bumped[n / 2] += 1.0;
            let g2 =
                composite_mean_var(&alphas, &colors, &bumped, residual, Rgb::splat(0.5)).unwrap();
            prop_assert!(g2.variance >= g.variance);
        }
    }

    #[test]
    fn resample_is_strictly_ascending_and_bounded(
        weights in proptest::collection::vec(0.0f64..1.0, 4..32),
        n_fine in 1usize..64,
        seed in 0u64..1000,
    ) {
        let n = weights.len();
        let ray = Ray {
            origin: Vec3::ZERO,
            direction: Vec3::new(0.0, 1.0, 0.0),
            t_near: 1.0,
            t_far: 3.0,
        };
        let coarse = stratified_samples(&ray, n, seed);
        let merged = hierarchical_resample(&coarse, &weights, n_fine, seed ^ 0x5555);
        for w in merged.t_values.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
        prop_assert!(*merged.t_values.first().unwrap() >= ray.t_near);
        prop_assert!(*merged.t_values.last().unwrap() < ray.t_far);
        for d in &merged.deltas {
            prop_assert!(*d > 0.0);
        }
    }

    #[test]
    fn ray_samples_reject_non_ascending(ts in proptest::collection::vec(0.1f64..5.0, 2..10)) {
        let mut sorted = ts.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        prop_assume!(sorted.len() >= 2);
        let mut swapped = sorted.clone();
        swapped.swap(0, sorted.len() - 1);
        prop_assert!(RaySamples::from_sorted(swapped, 10.0).is_err());
        prop_assert!(RaySamples::from_sorted(sorted, 10.0).is_ok());
    }
}
