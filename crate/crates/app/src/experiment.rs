//! The active-learning experiment loop: train on the initial views, then
//! repeatedly score the candidate pool, capture the winners, and fold them in
//! (by continued training or by posterior caching, depending on the mode).
//!
//! Every artifact lands in a run directory:
//!
//! ```text
//! run/
//!   config.toml          configuration snapshot
//!   checkpoints/         round_###.ckpt (model + optimizer)
//!   renders/             final eval renders + uncertainty maps
//!   metrics.csv          per-round psnr/ssim/mean variance (deterministic)
//!   timing.csv           per-round wall time
//!   acquisition.csv      every scored candidate, per round
//!   train_log.csv        per-step loss log
//!   selected_views.txt   picked view ids per round
//!   cache.apc            posterior cache (Bayesian-estimation mode)
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anerf_core::bayes::{
    self, baseline_select, score_candidates, BaselineStrategy, PosteriorCache,
};
use anerf_core::camera::{CameraPose, Intrinsics};
use anerf_core::image::{ImageBuf, PosedImage};
use anerf_core::math::Vec3;
use anerf_core::metrics;
use anerf_core::render::{self, RenderConfig};
use anerf_core::rng;
use anerf_core::scene::{self, Scene};
use anerf_core::train::{self, TrainConfig, TrainState};
use anyhow::{bail, Result};

use crate::cache_io;
use crate::checkpoint::{write_checkpoint, Checkpoint};
use crate::config::{CaptureMode, ExperimentConfig, Mode};
use crate::image_io;
use crate::report::{
    write_acquisition, write_report, write_timing, AcquisitionRow, MetricRecord, TrainLogWriter,
};
use crate::scene_file;

/// Stride-comparison record for one selection round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrideAudit {
    pub round: u32,
    pub live_top1: usize,
    pub audit_top1: usize,
    pub live_rays_per_candidate: u64,
    pub audit_rays_per_candidate: u64,
}

/// Everything a caller needs to assert on a finished run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub records: Vec<MetricRecord>,
    pub selected: Vec<Vec<usize>>,
    pub final_step: u64,
    pub steps_after_initial: u64,
    pub stride_audit: Vec<StrideAudit>,
    pub total_observations: usize,
    pub run_dir: PathBuf,
}

impl RunSummary {
    pub fn final_psnr(&self) -> f64 {
        self.records.last().expect("at least the initial round").psnr
    }

    pub fn wall_time_after_initial(&self) -> f64 {
        self.records.iter().skip(1).map(|r| r.wall_time_s).sum()
    }
}

/// Camera intrinsics for a scene: the camera sphere radius scales with the
/// bounding radius, the focal length frames the bounding sphere with a small
/// margin, and the depth range brackets it.
pub fn scene_intrinsics(config: &ExperimentConfig, scene: &Scene) -> (f64, Intrinsics) {
    let radius = config.camera_radius_factor * scene.bounding_radius;
    let tan_half = 1.15 * scene.bounding_radius / radius;
    let focal = (config.image_width.min(config.image_height) as f64 / 2.0) / tan_half;
    let t_near = (radius - 1.25 * scene.bounding_radius).max(0.05 * radius);
    let t_far = radius + 1.25 * scene.bounding_radius;
    (
        radius,
        Intrinsics {
            focal,
            width: config.image_width,
            height: config.image_height,
            t_near,
            t_far,
        },
    )
}

struct Evaluation {
    psnr: f64,
    ssim: f64,
    mean_variance: f64,
}

fn clamp_image(mut img: ImageBuf) -> ImageBuf {
    for p in img.pixels_mut() {
        *p = p.clamp01();
    }
    img
}

/// PSNR/SSIM against the oracle eval renders, plus the mean predicted
/// variance. In Bayesian-estimation mode the color render substitutes cached
/// posterior means; the variance map is the model prior either way.
fn evaluate_model(
    state: &TrainState,
    eval_images: &[PosedImage],
    render_cfg: &RenderConfig,
    cache: Option<&PosteriorCache>,
    seed: u64,
) -> Result<Evaluation> {
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut var_sum = 0.0;
    for (i, gt) in eval_images.iter().enumerate() {
        let image_seed = rng::mix3(seed, rng::domain::EVAL_VIEWS, i as u64);
        let rendered =
            render::render_image(&state.coarse, &state.fine, &gt.pose, render_cfg, image_seed);
        let rgb = match cache {
            Some(cache) if !cache.is_empty() => clamp_image(bayes::render_image_with_posterior(
                &state.coarse,
                &state.fine,
                cache,
                &gt.pose,
                render_cfg,
                image_seed,
            )),
            _ => clamp_image(rendered.rgb.clone()),
        };
        psnr_sum += metrics::psnr(&rgb, &gt.pixels, 1.0)?;
        ssim_sum += metrics::ssim(&rgb, &gt.pixels)?;
        var_sum += rendered.variance.mean();
    }
    let n = eval_images.len().max(1) as f64;
    Ok(Evaluation {
        psnr: psnr_sum / n,
        ssim: ssim_sum / n,
        mean_variance: var_sum / n,
    })
}

struct Candidate {
    id: usize,
    pose: CameraPose,
    /// Pre-rendered image in hold-out capture mode.
    image: Option<PosedImage>,
}

/// Per-candidate heuristic scores for the acquisition report of baseline
/// modes: 0 for random, min distance to the current training cameras for
/// furthest-view.
fn baseline_report_scores(
    mode: Mode,
    candidates: &[Candidate],
    training_positions: &[Vec3],
) -> Vec<f64> {
    candidates
        .iter()
        .map(|c| match mode {
            Mode::NerfFvs => training_positions
                .iter()
                .map(|t| (c.pose.position - *t).norm())
                .fold(f64::INFINITY, f64::min),
            _ => 0.0,
        })
        .collect()
}

/// Runs one experiment into `run_dir`.
pub fn run_experiment(config: &ExperimentConfig, run_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    let scene = scene_file::load_scene(&config.scene)?;
    fs::create_dir_all(run_dir)?;
    let checkpoints_dir = run_dir.join("checkpoints");
    let renders_dir = run_dir.join("renders");
    fs::create_dir_all(&checkpoints_dir)?;
    fs::create_dir_all(&renders_dir)?;
    config.save(&run_dir.join("config.toml"))?;

    let (radius, intrinsics) = scene_intrinsics(config, &scene);
    let center = Vec3::ZERO;
    let seed = config.seed;
    let initial_poses = anerf_core::camera::sample_sphere_views(
        config.n_initial_views,
        radius,
        center,
        config.hemisphere,
        rng::mix3(seed, rng::domain::INIT_VIEWS, 0),
        intrinsics,
    );
    let candidate_poses = anerf_core::camera::sample_sphere_views(
        config.candidate_count,
        radius,
        center,
        config.hemisphere,
        rng::mix3(seed, rng::domain::CAND_VIEWS, 0),
        intrinsics,
    );
    let eval_poses = anerf_core::camera::sample_sphere_views(
        config.eval_view_count.max(1),
        radius,
        center,
        config.hemisphere,
        rng::mix3(seed, rng::domain::EVAL_VIEWS, 0),
        intrinsics,
    );

    let initial_images = scene::generate_dataset(&scene, &initial_poses, config.oracle_steps);
    let eval_images = scene::generate_dataset(&scene, &eval_poses, config.oracle_steps);
    let mut candidates: Vec<Candidate> = candidate_poses
        .iter()
        .enumerate()
        .map(|(id, pose)| Candidate {
            id,
            pose: *pose,
            image: match config.capture {
                CaptureMode::Holdout => {
                    Some(scene::oracle_render(&scene, pose, config.oracle_steps))
                }
                CaptureMode::Oracle => None,
            },
        })
        .collect();

    let train_cfg: TrainConfig = config.train_config(scene.background, scene.bounding_radius)?;
    let render_cfg = train_cfg.render_config();
    let mut state = TrainState::new(&train_cfg, &initial_images);
    let mut cache = PosteriorCache::new(scene.bounding_radius / config.cell_size_divisor);

    let mut train_log = TrainLogWriter::create(&run_dir.join("train_log.csv"))?;
    let run_start = Instant::now();
    let mut records: Vec<MetricRecord> = Vec::new();
    let mut acquisition_rows: Vec<AcquisitionRow> = Vec::new();
    let mut selected_per_round: Vec<Vec<usize>> = Vec::new();
    let mut stride_audit: Vec<StrideAudit> = Vec::new();
    let mut n_train_views = config.n_initial_views;

    let log_every = (config.steps_per_round / 4).max(1);
    let run_phase = |state: &mut TrainState,
                         steps: u64,
                         log: &mut TrainLogWriter|
     -> Result<()> {
        train::train_loop(state, &train_cfg, steps, None, log_every, &mut |row| {
            let _ = log.append(
                row.step,
                row.loss,
                row.psnr_eval,
                row.mean_variance,
                run_start.elapsed().as_secs_f64(),
            );
        })?;
        log.flush()?;
        Ok(())
    };

    // Initial phase.
    let round_start = Instant::now();
    run_phase(&mut state, config.steps_per_round, &mut train_log)?;
    let initial_steps = state.step;
    let eval = evaluate_model(&state, &eval_images, &render_cfg, None, seed)?;
    records.push(MetricRecord {
        round: 0,
        n_train_views: n_train_views as u32,
        psnr: eval.psnr,
        ssim: eval.ssim,
        mean_variance: eval.mean_variance,
        wall_time_s: round_start.elapsed().as_secs_f64(),
    });
    write_checkpoint(
        &Checkpoint::from_state(&state),
        &checkpoints_dir.join("round_000.ckpt"),
    )?;

    for round in 1..=config.effective_rounds() {
        let round_start = Instant::now();
        if candidates.len() < config.k_per_round {
            bail!("candidate pool exhausted at round {round}");
        }
        let pool: Vec<(usize, CameraPose)> = candidates.iter().map(|c| (c.id, c.pose)).collect();
        let selection_seed = rng::mix3(seed, rng::domain::CANDIDATE, round as u64);

        let picked: Vec<usize> = match config.mode {
            Mode::ActivenerfCl | Mode::ActivenerfBe => {
                let cache_for_scoring =
                    (config.mode == Mode::ActivenerfBe && !cache.is_empty()).then_some(&cache);
                let scored = score_candidates(
                    &state.coarse,
                    &state.fine,
                    &pool,
                    config.stride,
                    &render_cfg,
                    selection_seed,
                    cache_for_scoring,
                );
                let mut order: Vec<usize> = (0..scored.len()).collect();
                order.sort_by(|&a, &b| {
                    scored[b]
                        .score
                        .partial_cmp(&scored[a].score)
                        .unwrap()
                        .then(scored[a].view_id.cmp(&scored[b].view_id))
                });
                let picked: Vec<usize> = order
                    .iter()
                    .take(config.k_per_round)
                    .map(|&i| scored[i].view_id)
                    .collect();
                for result in &scored {
                    acquisition_rows.push(AcquisitionRow {
                        round: round as u32,
                        view_id: result.view_id,
                        score: result.score,
                        stride: result.stride,
                        rays_evaluated: result.rays_evaluated,
                        selected: picked.contains(&result.view_id),
                    });
                }
                if let Some(audit) = config.audit_stride {
                    let audited = score_candidates(
                        &state.coarse,
                        &state.fine,
                        &pool,
                        audit,
                        &render_cfg,
                        selection_seed,
                        cache_for_scoring,
                    );
                    let top = |results: &[anerf_core::bayes::AcquisitionResult]| {
                        results
                            .iter()
                            .max_by(|a, b| {
                                a.score
                                    .partial_cmp(&b.score)
                                    .unwrap()
                                    .then(b.view_id.cmp(&a.view_id))
                            })
                            .map(|r| (r.view_id, r.rays_evaluated))
                            .expect("non-empty pool")
                    };
                    let (live_top1, live_rays) = top(&scored);
                    let (audit_top1, audit_rays) = top(&audited);
                    stride_audit.push(StrideAudit {
                        round: round as u32,
                        live_top1,
                        audit_top1,
                        live_rays_per_candidate: live_rays,
                        audit_rays_per_candidate: audit_rays,
                    });
                }
                picked
            }
            Mode::NerfRandom | Mode::NerfFvs => {
                let training_positions: Vec<Vec3> =
                    initial_poses.iter().map(|p| p.position).collect();
                let mut training_positions = training_positions;
                for round_picks in &selected_per_round {
                    for &id in round_picks {
                        training_positions.push(candidate_poses[id].position);
                    }
                }
                let id_positions: Vec<(usize, Vec3)> =
                    candidates.iter().map(|c| (c.id, c.pose.position)).collect();
                let strategy = if config.mode == Mode::NerfRandom {
                    BaselineStrategy::Random
                } else {
                    BaselineStrategy::FurthestView
                };
                let picked = baseline_select(
                    strategy,
                    &id_positions,
                    &training_positions,
                    config.k_per_round,
                    selection_seed,
                )
                .map_err(|e| anyhow::anyhow!("baseline selection failed: {e}"))?;
                let scores = baseline_report_scores(config.mode, &candidates, &training_positions);
                for (c, score) in candidates.iter().zip(scores) {
                    acquisition_rows.push(AcquisitionRow {
                        round: round as u32,
                        view_id: c.id,
                        score,
                        stride: 0,
                        rays_evaluated: 0,
                        selected: picked.contains(&c.id),
                    });
                }
                picked
            }
            Mode::Static => unreachable!("static mode has no selection rounds"),
        };

        // Capture the picked views and remove them from the pool.
        let mut captured: Vec<PosedImage> = Vec::with_capacity(picked.len());
        for &id in &picked {
            let idx = candidates
                .iter()
                .position(|c| c.id == id)
                .expect("picked from pool");
            let candidate = candidates.remove(idx);
            let image = match candidate.image {
                Some(image) => image,
                None => scene::oracle_render(&scene, &candidate.pose, config.oracle_steps),
            };
            captured.push(image);
        }
        n_train_views += captured.len();
        selected_per_round.push(picked.clone());

        match config.mode {
            Mode::ActivenerfBe => {
                for (i, image) in captured.iter().enumerate() {
                    cache.insert_image(
                        &state.coarse,
                        &state.fine,
                        image,
                        &render_cfg,
                        rng::mix3(seed, rng::domain::CACHE, (round * 1000 + i) as u64),
                    );
                }
            }
            _ => {
                train::continuous_update(
                    &mut state,
                    &captured,
                    config.steps_per_round,
                    &train_cfg,
                )?;
                train_log.flush()?;
            }
        }

        let cache_ref = (config.mode == Mode::ActivenerfBe).then_some(&cache);
        let eval = evaluate_model(&state, &eval_images, &render_cfg, cache_ref, seed)?;
        records.push(MetricRecord {
            round: round as u32,
            n_train_views: n_train_views as u32,
            psnr: eval.psnr,
            ssim: eval.ssim,
            mean_variance: eval.mean_variance,
            wall_time_s: round_start.elapsed().as_secs_f64(),
        });
        write_checkpoint(
            &Checkpoint::from_state(&state),
            &checkpoints_dir.join(format!("round_{round:03}.ckpt")),
        )?;
    }

    // Final artifacts.
    write_report(&records, &run_dir.join("metrics.csv"))?;
    write_timing(&records, &run_dir.join("timing.csv"))?;
    write_acquisition(&acquisition_rows, &run_dir.join("acquisition.csv"))?;
    let mut selected_text = String::new();
    for (i, picks) in selected_per_round.iter().enumerate() {
        use std::fmt::Write as _;
        let ids: Vec<String> = picks.iter().map(|id| id.to_string()).collect();
        writeln!(selected_text, "{} {}", i + 1, ids.join(" ")).unwrap();
    }
    fs::write(run_dir.join("selected_views.txt"), selected_text)?;
    if config.mode == Mode::ActivenerfBe {
        cache_io::write_cache(&cache, &run_dir.join("cache.apc"))?;
    }
    for (i, gt) in eval_images.iter().take(3).enumerate() {
        let image_seed = rng::mix3(seed, rng::domain::EVAL_VIEWS, i as u64);
        let rendered =
            render::render_image(&state.coarse, &state.fine, &gt.pose, &render_cfg, image_seed);
        image_io::write_png(
            &clamp_image(rendered.rgb.clone()),
            &renders_dir.join(format!("eval_{i:02}.png")),
        )?;
        image_io::write_variance_map(
            &rendered.variance,
            &renders_dir.join(format!("eval_{i:02}_variance")),
        )?;
        image_io::write_png(&gt.pixels, &renders_dir.join(format!("eval_{i:02}_gt.png")))?;
        if config.mode == Mode::ActivenerfBe && !cache.is_empty() {
            let posterior = bayes::render_image_with_posterior(
                &state.coarse,
                &state.fine,
                &cache,
                &gt.pose,
                &render_cfg,
                image_seed,
            );
            image_io::write_png(
                &clamp_image(posterior),
                &renders_dir.join(format!("eval_{i:02}_posterior.png")),
            )?;
        }
    }

    Ok(RunSummary {
        records,
        selected: selected_per_round,
        final_step: state.step,
        steps_after_initial: state.step - initial_steps,
        stride_audit,
        total_observations: n_train_views,
        run_dir: run_dir.to_path_buf(),
    })
}
