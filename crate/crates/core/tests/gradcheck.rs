//! Finite-difference oracle for the training loss gradients.
//!
//! The analytic reverse-mode gradients of the full per-ray loss (coarse
//! squared error + fine NLL with density regularizer) are compared against
//! central differences on small networks, separately for the position,
//! color, and variance parameter groups of both fields. Sample positions are
//! frozen so the loss is a smooth function of the parameters.

use anerf_core::field::{FieldConfig, FieldParams};
use anerf_core::math::{Rgb, Vec3};
use anerf_core::render::{stratified_samples, Ray, RaySamples};
use anerf_core::rng;
use anerf_core::train::{ray_loss_frozen, PoolRay, TrainConfig};

struct Setup {
    coarse: FieldParams,
    fine: FieldParams,
    rays: Vec<PoolRay>,
    coarse_ts: Vec<RaySamples>,
    fine_ts: Vec<RaySamples>,
    cfg: TrainConfig,
}

fn build_setup(seed: u64, width: usize, vanilla: bool) -> Setup {
    let mut cfg = TrainConfig::desk(seed);
    cfg.field = FieldConfig::tiny(width);
    cfg.vanilla = vanilla;
    cfg.lambda_reg = 0.02;
    cfg.background = Rgb::new(0.1, 0.2, 0.05);
    cfg.n_coarse = 5;
    cfg.n_fine = 6;
    let coarse = FieldParams::init(cfg.field, rng::mix2(seed, 0));
    let fine = FieldParams::init(cfg.field, rng::mix2(seed, 1));
    let mut rays = Vec::new();
    let mut coarse_ts = Vec::new();
    let mut fine_ts = Vec::new();
    for i in 0..2u64 {
        let dir = Vec3::new(0.2 + 0.1 * i as f64, 0.9, -0.3).normalized();
        let ray = Ray {
            origin: Vec3::new(0.05 * i as f64, -2.0, 0.1),
            direction: dir,
            t_near: 1.0,
            t_far: 4.0,
        };
        rays.push(PoolRay {
            ray,
            target: Rgb::new(0.8, 0.3, 0.4 + 0.1 * i as f64),
        });
        // Frozen sample sets: the coarse grid and an independent finer grid.
        coarse_ts.push(stratified_samples(&ray, cfg.n_coarse, rng::mix2(seed, 10 + i)));
        fine_ts.push(stratified_samples(&ray, cfg.n_fine, rng::mix2(seed, 20 + i)));
    }
    Setup {
        coarse,
        fine,
        rays,
        coarse_ts,
        fine_ts,
        cfg,
    }
}

fn batch_loss(setup: &Setup, coarse: &FieldParams, fine: &FieldParams) -> f64 {
    let scale = 1.0 / setup.rays.len() as f64;
    setup
        .rays
        .iter()
        .enumerate()
        .map(|(i, ray)| {
            ray_loss_frozen(
                coarse,
                fine,
                ray,
                &setup.coarse_ts[i],
                &setup.fine_ts[i],
                &setup.cfg,
                scale,
                None,
            )
            .total()
        })
        .sum::<f64>()
        * scale
}

fn batch_grads(setup: &Setup) -> (Vec<f64>, Vec<f64>) {
    let scale = 1.0 / setup.rays.len() as f64;
    let mut gc = setup.coarse.zero_grads();
    let mut gf = setup.fine.zero_grads();
    for (i, ray) in setup.rays.iter().enumerate() {
        ray_loss_frozen(
            &setup.coarse,
            &setup.fine,
            ray,
            &setup.coarse_ts[i],
            &setup.fine_ts[i],
            &setup.cfg,
            scale,
            Some((&mut gc, &mut gf)),
        );
    }
    (gc, gf)
}

/// Central finite difference of the batch loss for one parameter of one
/// field.
fn fd_at(setup: &Setup, which: Field, index: usize, h: f64) -> f64 {
    let mut coarse = setup.coarse.clone();
    let mut fine = setup.fine.clone();
    let theta = match which {
        Field::Coarse => &mut coarse.theta,
        Field::Fine => &mut fine.theta,
    };
    theta[index] += h;
    let plus = batch_loss(setup, &coarse, &fine);
    let theta = match which {
        Field::Coarse => &mut coarse.theta,
        Field::Fine => &mut fine.theta,
    };
    theta[index] -= 2.0 * h;
    let minus = batch_loss(setup, &coarse, &fine);
    (plus - minus) / (2.0 * h)
}

#[derive(Clone, Copy)]
enum Field {
    Coarse,
    Fine,
}

fn check_group(
    setup: &Setup,
    which: Field,
    analytic: &[f64],
    ranges: &[std::ops::Range<usize>],
    label: &str,
) -> usize {
    let h = 1e-4;
    let mut checked = 0;
    for range in ranges {
        for i in range.clone().step_by(7) {
            let fd = fd_at(setup, which, i, h);
            let got = analytic[i];
            let denom = fd.abs().max(got.abs()).max(1e-6);
            assert!(
                (fd - got).abs() / denom < 1e-4,
                "{label} param {i}: fd {fd:.10e} vs analytic {got:.10e}"
            );
            checked += 1;
        }
    }
    checked
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut total = 0;
    for seed in [3u64, 11, 29] {
        let setup = build_setup(seed, 5, false);
        let (gc, gf) = batch_grads(&setup);
        let layout_f = &setup.fine.layout;
        total += check_group(
            &setup,
            Field::Fine,
            &gf,
            &layout_f.position_branch_ranges(),
            "fine position branch",
        );
        total += check_group(
            &setup,
            Field::Fine,
            &gf,
            &layout_f.color_branch_ranges(),
            "fine color branch",
        );
        total += check_group(
            &setup,
            Field::Fine,
            &gf,
            &layout_f.variance_branch_ranges(),
            "fine variance branch",
        );
        let layout_c = &setup.coarse.layout;
        total += check_group(
            &setup,
            Field::Coarse,
            &gc,
            &layout_c.position_branch_ranges(),
            "coarse position branch",
        );
        total += check_group(
            &setup,
            Field::Coarse,
            &gc,
            &layout_c.color_branch_ranges(),
            "coarse color branch",
        );
    }
    assert!(total > 200, "checked only {total} parameters");
}

#[test]
fn vanilla_loss_gradients_match_finite_differences() {
    let setup = build_setup(7, 4, true);
    let (gc, gf) = batch_grads(&setup);
    let mut total = 0;
    total += check_group(
        &setup,
        Field::Fine,
        &gf,
        &setup.fine.layout.position_branch_ranges(),
        "vanilla fine position",
    );
    total += check_group(
        &setup,
        Field::Coarse,
        &gc,
        &setup.coarse.layout.color_branch_ranges(),
        "vanilla coarse color",
    );
    // The variance head receives no gradient in vanilla mode.
    for range in setup.fine.layout.variance_branch_ranges() {
        assert!(gf[range].iter().all(|&g| g == 0.0));
    }
    assert!(total > 30);
}
