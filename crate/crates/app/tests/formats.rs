//! File-format integration: checkpoint resume fidelity and cache-backed
//! rendering after a round trip through disk.

use anerf::cache_io;
use anerf::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use anerf::scene_file;
use anerf_core::bayes::{self, PosteriorCache};
use anerf_core::camera::sample_sphere_views;
use anerf_core::field::FieldConfig;
use anerf_core::math::Vec3;
use anerf_core::render;
use anerf_core::rng;
use anerf_core::scene;
use anerf_core::train::{train_step, TrainConfig, TrainState};
use tempfile::tempdir;

fn tiny_train_cfg(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk(seed);
    cfg.field = FieldConfig::tiny(8);
    cfg.field.pos_scale = 1.0 / 2.5;
    cfg.batch_rays = 32;
    cfg.n_coarse = 8;
    cfg.n_fine = 8;
    cfg.total_steps = 40;
    cfg.grad_chunks = 4;
    cfg
}

fn tiny_dataset(n: usize, seed: u64) -> Vec<anerf_core::image::PosedImage> {
    let scene = scene_file::preset("gradient-sphere").unwrap();
    let poses = sample_sphere_views(
        n,
        4.0,
        Vec3::ZERO,
        false,
        seed,
        anerf_core::camera::Intrinsics {
            focal: 8.0,
            width: 8,
            height: 8,
            t_near: 1.5,
            t_far: 6.5,
        },
    );
    scene::generate_dataset(&scene, &poses, 96)
}

/// Training resumed from a checkpoint file replays the uninterrupted
/// trajectory bit-exactly (parameters, moments, and step counter).
#[test]
fn checkpoint_resume_is_bit_exact() {
    let dir = tempdir().unwrap();
    let cfg = tiny_train_cfg(5);
    let images = tiny_dataset(2, 3);

    let mut uninterrupted = TrainState::new(&cfg, &images);
    for _ in 0..10 {
        train_step(&mut uninterrupted, &cfg).unwrap();
    }

    let mut first_half = TrainState::new(&cfg, &images);
    for _ in 0..5 {
        train_step(&mut first_half, &cfg).unwrap();
    }
    let path = dir.path().join("mid.ckpt");
    write_checkpoint(&Checkpoint::from_state(&first_half), &path).unwrap();
    drop(first_half);

    let mut resumed = read_checkpoint(&path).unwrap().into_state(&images);
    assert_eq!(resumed.step, 5);
    for _ in 0..5 {
        train_step(&mut resumed, &cfg).unwrap();
    }

    assert_eq!(uninterrupted.step, resumed.step);
    assert_eq!(uninterrupted.fine.theta, resumed.fine.theta);
    assert_eq!(uninterrupted.coarse.theta, resumed.coarse.theta);
    assert_eq!(uninterrupted.opt_fine.m, resumed.opt_fine.m);
    assert_eq!(uninterrupted.opt_fine.v, resumed.opt_fine.v);
    assert_eq!(uninterrupted.opt_coarse.m, resumed.opt_coarse.m);
}

/// A reloaded posterior cache renders identically to the in-memory one.
#[test]
fn cache_round_trip_renders_identically() {
    let dir = tempdir().unwrap();
    let cfg = tiny_train_cfg(9);
    let images = tiny_dataset(2, 7);
    let state = TrainState::new(&cfg, &images);
    let render_cfg = cfg.render_config();

    let mut cache = PosteriorCache::new(2.5 / 64.0);
    cache.insert_image(&state.coarse, &state.fine, &images[0], &render_cfg, 31);
    assert!(!cache.is_empty());

    let path = dir.path().join("cache.apc");
    cache_io::write_cache(&cache, &path).unwrap();
    let reloaded = cache_io::read_cache(&path).unwrap();
    assert_eq!(reloaded, cache);

    let pose = &images[1].pose;
    for py in 0..pose.height {
        for px in 0..pose.width {
            let ray = render::pixel_ray(pose, px, py).unwrap();
            let seed = rng::pixel_seed(17, px, py);
            let a = bayes::render_with_posterior(
                &state.coarse,
                &state.fine,
                &cache,
                &ray,
                &render_cfg,
                seed,
            );
            let b = bayes::render_with_posterior(
                &state.coarse,
                &state.fine,
                &reloaded,
                &ray,
                &render_cfg,
                seed,
            );
            assert_eq!(a, b);
        }
    }
}
