//! Command-line interface: scene generation, training, view selection,
//! rendering, evaluation, and full experiment runs.

use std::path::PathBuf;

use anerf::checkpoint;
use anerf::config::{CaptureMode, ExperimentConfig, Mode};
use anerf::experiment;
use anerf::image_io;
use anerf::report;
use anerf::scene_file;
use anerf::transforms;
use anerf_core::bayes;
use anerf_core::camera::sample_sphere_views;
use anerf_core::math::Vec3;
use anerf_core::metrics;
use anerf_core::render::{self, RenderConfig};
use anerf_core::rng;
use anerf_core::scene;
use anerf_core::train::{self, TrainState};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "anerf",
    about = "Uncertainty-aware radiance fields with active view selection",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a built-in scene description to a TOML file.
    GenScene {
        /// Preset name; see --list.
        #[arg(long, default_value = "blobs")]
        preset: String,
        /// Output path.
        #[arg(long, required_unless_present = "list")]
        out: Option<PathBuf>,
        /// List available presets.
        #[arg(long)]
        list: bool,
    },
    /// Train a model on a fixed view set (a static-mode experiment).
    Train(TrainArgs),
    /// Score candidate views with the current model and print the table.
    Select(SelectArgs),
    /// Render an RGB image and uncertainty map from a checkpoint.
    Render(RenderArgs),
    /// Evaluate a checkpoint against oracle renders, or compare two images.
    Eval(EvalArgs),
    /// Summarize a run directory.
    Report {
        /// Run directory containing metrics.csv.
        #[arg(long)]
        run: PathBuf,
    },
    /// Run a full experiment from a configuration file.
    Run(RunArgs),
}

#[derive(Args)]
struct CommonOverrides {
    /// Image width and height in pixels.
    #[arg(long)]
    image_size: Option<u32>,
    /// Trunk hidden width.
    #[arg(long)]
    hidden_width: Option<usize>,
    /// Rays per training batch.
    #[arg(long)]
    batch_rays: Option<usize>,
    /// Coarse samples per ray.
    #[arg(long)]
    n_coarse: Option<usize>,
    /// Fine samples per ray.
    #[arg(long)]
    n_fine: Option<usize>,
    /// Density regularizer weight.
    #[arg(long)]
    lambda_reg: Option<f64>,
    /// Train with the plain squared-error baseline loss.
    #[arg(long)]
    vanilla: bool,
    /// Floor added to the ray variance inside the likelihood.
    #[arg(long)]
    min_ray_variance: Option<f64>,
    /// Initial bias of the variance head.
    #[arg(long)]
    variance_head_bias: Option<f64>,
}

impl CommonOverrides {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(size) = self.image_size {
            config.image_width = size;
            config.image_height = size;
        }
        if let Some(v) = self.hidden_width {
            config.train.hidden_width = Some(v);
        }
        if let Some(v) = self.batch_rays {
            config.train.batch_rays = Some(v);
        }
        if let Some(v) = self.n_coarse {
            config.train.n_coarse = Some(v);
        }
        if let Some(v) = self.n_fine {
            config.train.n_fine = Some(v);
        }
        if let Some(v) = self.lambda_reg {
            config.train.lambda_reg = Some(v);
        }
        if self.vanilla {
            config.train.vanilla = Some(true);
        }
        if let Some(v) = self.min_ray_variance {
            config.train.min_ray_variance = Some(v);
        }
        if let Some(v) = self.variance_head_bias {
            config.train.variance_head_bias = Some(v);
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Scene description (TOML).
    #[arg(long, required_unless_present = "transforms")]
    scene: Option<PathBuf>,
    /// Camera manifest replacing the simulator (transforms.json).
    #[arg(long)]
    transforms: Option<PathBuf>,
    /// Near/far bounds for manifest rays.
    #[arg(long, default_value_t = 2.0)]
    t_near: f64,
    #[arg(long, default_value_t = 6.0)]
    t_far: f64,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Number of training views generated from the scene.
    #[arg(long, default_value_t = 10)]
    views: usize,
    /// Optimization steps.
    #[arg(long, default_value_t = 5000)]
    steps: u64,
    /// Held-out eval views rendered by the oracle.
    #[arg(long, default_value_t = 4)]
    eval_views: usize,
    #[command(flatten)]
    overrides: CommonOverrides,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Candidate views sampled on the camera sphere.
    #[arg(long, default_value_t = 20)]
    candidates: usize,
    /// Views to pick.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Acquisition pixel stride r (scores H/r x W/r rays).
    #[arg(long, default_value_t = 4)]
    stride: u32,
    #[arg(long, default_value_t = 64)]
    image_size: u32,
    #[arg(long, default_value_t = 32)]
    n_coarse: usize,
    #[arg(long, default_value_t = 64)]
    n_fine: usize,
    /// Optional CSV output of the scored table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Base path for the uncertainty map artifacts (.f32/.png/.range.txt).
    #[arg(long)]
    variance_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Camera position on an orbit of `orbit_count` poses.
    #[arg(long, default_value_t = 0)]
    orbit_index: usize,
    #[arg(long, default_value_t = 8)]
    orbit_count: usize,
    #[arg(long, default_value_t = 64)]
    image_size: u32,
    #[arg(long, default_value_t = 32)]
    n_coarse: usize,
    #[arg(long, default_value_t = 64)]
    n_fine: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Compare a checkpoint against oracle renders of a scene.
    #[arg(long, requires = "scene")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    views: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    image_size: u32,
    #[arg(long, default_value_t = 32)]
    n_coarse: usize,
    #[arg(long, default_value_t = 64)]
    n_fine: usize,
    /// Or compare two images directly.
    #[arg(long, requires = "gt")]
    pred: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    k_per_round: Option<usize>,
    #[arg(long)]
    n_initial_views: Option<usize>,
    #[arg(long)]
    steps_per_round: Option<u64>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    stride: Option<u32>,
    #[arg(long)]
    eval_views: Option<usize>,
    #[arg(long, value_enum)]
    capture: Option<CaptureMode>,
    /// Re-score each round at this stride for comparison.
    #[arg(long)]
    audit_stride: Option<u32>,
    #[command(flatten)]
    overrides: CommonOverrides,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenScene { preset, out, list } => {
            if list {
                for name in scene_file::PRESET_NAMES {
                    println!("{name}");
                }
                return Ok(());
            }
            let out = out.expect("clap enforces --out without --list");
            let scene = scene_file::preset(&preset)?;
            scene_file::write_scene(&scene, &out)?;
            println!("wrote preset '{preset}' to {}", out.display());
            Ok(())
        }
        Command::Train(args) => cmd_train(args),
        Command::Select(args) => cmd_select(args),
        Command::Render(args) => cmd_render(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report { run } => cmd_report(&run),
        Command::Run(args) => cmd_run(args),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    if let Some(manifest) = &args.transforms {
        return train_from_transforms(&args, manifest.clone());
    }
    let scene = args.scene.clone().expect("clap enforces scene or transforms");
    let mut config = ExperimentConfig::new(scene, Mode::Static, args.seed);
    config.n_initial_views = args.views;
    config.steps_per_round = args.steps;
    config.eval_view_count = args.eval_views;
    args.overrides.apply(&mut config);
    let summary = experiment::run_experiment(&config, &args.out)?;
    let last = summary.records.last().expect("one record");
    println!(
        "trained {} steps on {} views: psnr {:.2} dB, ssim {:.4}, mean variance {:.5}",
        summary.final_step, args.views, last.psnr, last.ssim, last.mean_variance
    );
    println!("run directory: {}", summary.run_dir.display());
    Ok(())
}

/// Training from an external posed-image folder: every 8th frame is held out
/// for evaluation, the rest feed the ray pool.
fn train_from_transforms(args: &TrainArgs, manifest: PathBuf) -> Result<()> {
    let frames = transforms::load_transforms_dataset(&manifest, args.t_near, args.t_far)?;
    let (eval_images, train_images): (Vec<_>, Vec<_>) = frames
        .into_iter()
        .enumerate()
        .partition(|(i, _)| i % 8 == 7);
    let train_images: Vec<_> = train_images.into_iter().map(|(_, f)| f).collect();
    let eval_images: Vec<_> = eval_images.into_iter().map(|(_, f)| f).collect();
    if train_images.is_empty() {
        bail!("manifest yields no training frames");
    }
    // Scene bounds are unknown; scale positions by the camera orbit radius.
    let radius = train_images
        .iter()
        .map(|f| f.pose.position.norm())
        .fold(0.0, f64::max);
    let mut config = ExperimentConfig::new(PathBuf::new(), Mode::Static, args.seed);
    args.overrides.apply(&mut config);
    let mut train_cfg = config.train_config(anerf_core::math::Rgb::ZERO, (radius / 1.6).max(1.0))?;
    train_cfg.total_steps = args.steps;
    std::fs::create_dir_all(&args.out)?;
    let mut state = TrainState::new(&train_cfg, &train_images);
    let mut log = report::TrainLogWriter::create(&args.out.join("train_log.csv"))?;
    let start = std::time::Instant::now();
    let eval_set = (!eval_images.is_empty()).then(|| train::EvalSet {
        images: &eval_images,
        seed: args.seed,
    });
    train::train_loop(
        &mut state,
        &train_cfg,
        args.steps,
        eval_set.as_ref(),
        (args.steps / 4).max(1),
        &mut |row| {
            let _ = log.append(
                row.step,
                row.loss,
                row.psnr_eval,
                row.mean_variance,
                start.elapsed().as_secs_f64(),
            );
        },
    )?;
    log.flush()?;
    checkpoint::write_checkpoint(
        &checkpoint::Checkpoint::from_state(&state),
        &args.out.join("model.ckpt"),
    )?;
    println!(
        "trained {} steps on {} manifest frames ({} held out)",
        state.step,
        train_images.len(),
        eval_images.len()
    );
    Ok(())
}

fn cmd_select(args: SelectArgs) -> Result<()> {
    let ckpt = checkpoint::read_checkpoint(&args.checkpoint)?;
    let (coarse, fine) = ckpt.fields();
    let scene = scene_file::load_scene(&args.scene)?;
    let mut config = ExperimentConfig::new(args.scene.clone(), Mode::ActivenerfCl, args.seed);
    config.image_width = args.image_size;
    config.image_height = args.image_size;
    let (radius, intrinsics) = experiment::scene_intrinsics(&config, &scene);
    let poses = sample_sphere_views(
        args.candidates,
        radius,
        Vec3::ZERO,
        true,
        rng::mix3(args.seed, rng::domain::CAND_VIEWS, 0),
        intrinsics,
    );
    let pool: Vec<(usize, anerf_core::camera::CameraPose)> =
        poses.iter().copied().enumerate().collect();
    let render_cfg = RenderConfig {
        n_coarse: args.n_coarse,
        n_fine: args.n_fine,
        background: scene.background,
    };
    let scored = bayes::score_candidates(
        &coarse,
        &fine,
        &pool,
        args.stride,
        &render_cfg,
        args.seed,
        None,
    );
    let picks = bayes::select_topk(
        &coarse,
        &fine,
        &pool,
        args.k.min(pool.len()),
        args.stride,
        &render_cfg,
        args.seed,
        None,
    )
    .map_err(|e| anyhow::anyhow!("selection failed: {e}"))?;
    println!("view_id  score          rays  selected");
    for result in &scored {
        let selected = picks.iter().any(|(id, _)| *id == result.view_id);
        println!(
            "{:>7}  {:<13.6e} {:>5}  {}",
            result.view_id,
            result.score,
            result.rays_evaluated,
            if selected { "*" } else { "" }
        );
    }
    if let Some(out) = args.out {
        let rows: Vec<report::AcquisitionRow> = scored
            .iter()
            .map(|r| report::AcquisitionRow {
                round: 0,
                view_id: r.view_id,
                score: r.score,
                stride: r.stride,
                rays_evaluated: r.rays_evaluated,
                selected: picks.iter().any(|(id, _)| *id == r.view_id),
            })
            .collect();
        report::write_acquisition(&rows, &out)?;
    }
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let ckpt = checkpoint::read_checkpoint(&args.checkpoint)?;
    let (coarse, fine) = ckpt.fields();
    let scene = scene_file::load_scene(&args.scene)?;
    let mut config = ExperimentConfig::new(args.scene.clone(), Mode::Static, args.seed);
    config.image_width = args.image_size;
    config.image_height = args.image_size;
    let (radius, intrinsics) = experiment::scene_intrinsics(&config, &scene);
    if args.orbit_index >= args.orbit_count {
        bail!("orbit index out of range");
    }
    let poses = sample_sphere_views(
        args.orbit_count,
        radius,
        Vec3::ZERO,
        true,
        rng::mix3(args.seed, rng::domain::EVAL_VIEWS, 1),
        intrinsics,
    );
    let pose = poses[args.orbit_index];
    let render_cfg = RenderConfig {
        n_coarse: args.n_coarse,
        n_fine: args.n_fine,
        background: scene.background,
    };
    let rendered = render::render_image(&coarse, &fine, &pose, &render_cfg, args.seed);
    let mut rgb = rendered.rgb;
    for p in rgb.pixels_mut() {
        *p = p.clamp01();
    }
    image_io::write_png(&rgb, &args.out)?;
    println!("wrote {}", args.out.display());
    if let Some(base) = args.variance_out {
        image_io::write_variance_map(&rendered.variance, &base)?;
        println!("wrote uncertainty map at {}", base.display());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    if let (Some(pred), Some(gt)) = (&args.pred, &args.gt) {
        let a = image_io::read_png(pred)?;
        let b = image_io::read_png(gt)?;
        let psnr = metrics::psnr(&a, &b, 1.0)?;
        let ssim = metrics::ssim(&a, &b)?;
        println!("psnr {psnr:.2} dB  ssim {ssim:.4}");
        return Ok(());
    }
    let (Some(ckpt_path), Some(scene_path)) = (&args.checkpoint, &args.scene) else {
        bail!("eval needs either --pred/--gt or --checkpoint/--scene");
    };
    let ckpt = checkpoint::read_checkpoint(ckpt_path)?;
    let (coarse, fine) = ckpt.fields();
    let scene = scene_file::load_scene(scene_path)?;
    let mut config = ExperimentConfig::new(scene_path.clone(), Mode::Static, args.seed);
    config.image_width = args.image_size;
    config.image_height = args.image_size;
    let (radius, intrinsics) = experiment::scene_intrinsics(&config, &scene);
    let poses = sample_sphere_views(
        args.views,
        radius,
        Vec3::ZERO,
        true,
        rng::mix3(args.seed, rng::domain::EVAL_VIEWS, 0),
        intrinsics,
    );
    let render_cfg = RenderConfig {
        n_coarse: args.n_coarse,
        n_fine: args.n_fine,
        background: scene.background,
    };
    println!("view  psnr_db  ssim");
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for (i, pose) in poses.iter().enumerate() {
        let gt = scene::oracle_render(&scene, pose, 256);
        let rendered = render::render_image(
            &coarse,
            &fine,
            pose,
            &render_cfg,
            rng::mix3(args.seed, rng::domain::EVAL_VIEWS, i as u64),
        );
        let mut rgb = rendered.rgb;
        for p in rgb.pixels_mut() {
            *p = p.clamp01();
        }
        let psnr = metrics::psnr(&rgb, &gt.pixels, 1.0)?;
        let ssim = metrics::ssim(&rgb, &gt.pixels)?;
        println!("{i:>4}  {psnr:>7.2}  {ssim:.4}");
        psnr_sum += psnr;
        ssim_sum += ssim;
    }
    let n = poses.len().max(1) as f64;
    println!("mean  {:>7.2}  {:.4}", psnr_sum / n, ssim_sum / n);
    Ok(())
}

fn cmd_report(run: &PathBuf) -> Result<()> {
    let metrics_path = run.join("metrics.csv");
    let timing_path = run.join("timing.csv");
    let records = report::read_report(
        &metrics_path,
        timing_path.exists().then_some(timing_path.as_path()),
    )?;
    println!("round  views  psnr_db  ssim    mean_var   wall_s");
    for r in &records {
        println!(
            "{:>5}  {:>5}  {:>7.2}  {:.4}  {:.6}  {:>7.1}",
            r.round, r.n_train_views, r.psnr, r.ssim, r.mean_variance, r.wall_time_s
        );
    }
    let acq_path = run.join("acquisition.csv");
    if acq_path.exists() {
        let rows = report::read_acquisition(&acq_path)?;
        let selected: Vec<&report::AcquisitionRow> = rows.iter().filter(|r| r.selected).collect();
        println!("selected views by round:");
        let mut current = 0;
        for row in selected {
            if row.round != current {
                current = row.round;
                print!("\n  round {current}:");
            }
            print!(" {}", row.view_id);
        }
        println!();
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let scene = args
                .scene
                .clone()
                .context("--scene is required when no --config is given")?;
            let mode = args.mode.context("--mode is required when no --config is given")?;
            ExperimentConfig::new(scene, mode, args.seed)
        }
    };
    config.seed = args.seed;
    if let Some(scene) = args.scene {
        config.scene = scene;
    }
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(v) = args.rounds {
        config.rounds = v;
    }
    if let Some(v) = args.k_per_round {
        config.k_per_round = v;
    }
    if let Some(v) = args.n_initial_views {
        config.n_initial_views = v;
    }
    if let Some(v) = args.steps_per_round {
        config.steps_per_round = v;
    }
    if let Some(v) = args.candidates {
        config.candidate_count = v;
    }
    if let Some(v) = args.stride {
        config.stride = v;
    }
    if let Some(v) = args.eval_views {
        config.eval_view_count = v;
    }
    if let Some(v) = args.capture {
        config.capture = v;
    }
    if args.audit_stride.is_some() {
        config.audit_stride = args.audit_stride;
    }
    args.overrides.apply(&mut config);

    let summary = experiment::run_experiment(&config, &args.out)?;
    println!(
        "mode {} finished: {} observations, final psnr {:.2} dB",
        config.mode.as_str(),
        summary.total_observations,
        summary.final_psnr()
    );
    for r in &summary.records {
        println!(
            "  round {}: views {:>3}  psnr {:.2}  ssim {:.4}  mean_var {:.6}  wall {:.1}s",
            r.round, r.n_train_views, r.psnr, r.ssim, r.mean_variance, r.wall_time_s
        );
    }
    println!("run directory: {}", summary.run_dir.display());
    Ok(())
}
