//! CLI smoke tests driving the built binary end to end on tiny inputs.

use std::path::Path;
use std::process::Command;

use tempfile::tempdir;

fn anerf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anerf"))
}

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("spawn anerf");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn gen_scene(dir: &Path) -> std::path::PathBuf {
    let scene = dir.join("scene.toml");
    run_ok(anerf()
        .arg("gen-scene")
        .args(["--preset", "gradient-sphere"])
        .arg("--out")
        .arg(&scene));
    scene
}

/// Shared tiny training run (the slow part); the render/select/eval
/// subcommands all consume its checkpoint.
#[test]
fn train_render_select_eval_pipeline() {
    let dir = tempdir().unwrap();
    let scene = gen_scene(dir.path());
    let run_dir = dir.path().join("run");
    let out = run_ok(anerf()
        .arg("train")
        .arg("--scene")
        .arg(&scene)
        .arg("--out")
        .arg(&run_dir)
        .args(["--seed", "3", "--views", "3", "--steps", "30"])
        .args(["--eval-views", "2", "--image-size", "16"])
        .args(["--hidden-width", "8", "--batch-rays", "32"])
        .args(["--n-coarse", "6", "--n-fine", "8"]));
    assert!(out.contains("psnr"), "train output: {out}");
    let ckpt = run_dir.join("checkpoints/round_000.ckpt");
    assert!(ckpt.exists());
    assert!(run_dir.join("metrics.csv").exists());
    assert!(run_dir.join("train_log.csv").exists());
    assert!(run_dir.join("config.toml").exists());

    // Render from the checkpoint.
    let png = dir.path().join("view.png");
    let var_base = dir.path().join("view_var");
    run_ok(anerf()
        .arg("render")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--scene")
        .arg(&scene)
        .arg("--out")
        .arg(&png)
        .arg("--variance-out")
        .arg(&var_base)
        .args(["--image-size", "16", "--n-coarse", "6", "--n-fine", "8"]));
    assert!(png.exists());
    assert!(var_base.with_extension("png").exists());
    assert!(var_base.with_extension("f32").exists());
    assert!(var_base.with_extension("range.txt").exists());
    let decoded = anerf::image_io::read_png(&png).unwrap();
    assert_eq!(decoded.width, 16);
    assert_eq!(decoded.height, 16);

    // Score candidates and write the table.
    let acq = dir.path().join("select.csv");
    let out = run_ok(anerf()
        .arg("select")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--scene")
        .arg(&scene)
        .args(["--seed", "5", "--candidates", "4", "--k", "2"])
        .args(["--stride", "4", "--image-size", "16"])
        .args(["--n-coarse", "6", "--n-fine", "8"])
        .arg("--out")
        .arg(&acq));
    assert!(out.contains("view_id"), "select output: {out}");
    let rows = anerf::report::read_acquisition(&acq).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| r.selected).count(), 2);

    // Evaluate the checkpoint against oracle renders.
    let out = run_ok(anerf()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--scene")
        .arg(&scene)
        .args(["--views", "1", "--image-size", "16"])
        .args(["--n-coarse", "6", "--n-fine", "8"]));
    assert!(out.contains("mean"), "eval output: {out}");

    // Report on the run directory.
    let out = run_ok(anerf().arg("report").arg("--run").arg(&run_dir));
    assert!(out.contains("round"), "report output: {out}");
}

/// An image compared with itself scores the PSNR cap and SSIM 1.
#[test]
fn eval_image_against_itself() {
    let dir = tempdir().unwrap();
    // Any non-constant PNG at least 11 pixels per side.
    let mut img = anerf_core::image::ImageBuf::new(12, 12);
    for (i, p) in img.pixels_mut().iter_mut().enumerate() {
        *p = anerf_core::math::Rgb::splat((i % 13) as f64 / 12.0);
    }
    let path = dir.path().join("img.png");
    anerf::image_io::write_png(&img, &path).unwrap();
    let out = run_ok(anerf()
        .arg("eval")
        .arg("--pred")
        .arg(&path)
        .arg("--gt")
        .arg(&path));
    assert!(out.contains("psnr 99.00"), "eval output: {out}");
    assert!(out.contains("ssim 1.0000"), "eval output: {out}");
}

/// The scored-candidate table of an empty (zero-density) field is all zero.
#[test]
fn select_with_empty_field_scores_zero() {
    let dir = tempdir().unwrap();
    let scene = gen_scene(dir.path());
    // Build a checkpoint with an exactly empty density field.
    let mut cfg = anerf_core::train::TrainConfig::desk(1);
    cfg.field = anerf_core::field::FieldConfig::tiny(6);
    cfg.field.sigma_activation = anerf_core::field::SigmaActivation::Relu;
    let mut state = anerf_core::train::TrainState::new(&cfg, &[]);
    for params in [&mut state.coarse, &mut state.fine] {
        let range = params.layout.density().param_range();
        for w in &mut params.theta[range] {
            *w = 0.0;
        }
    }
    let ckpt_path = dir.path().join("empty.ckpt");
    anerf::checkpoint::write_checkpoint(
        &anerf::checkpoint::Checkpoint::from_state(&state),
        &ckpt_path,
    )
    .unwrap();
    let out = run_ok(anerf()
        .arg("select")
        .arg("--checkpoint")
        .arg(&ckpt_path)
        .arg("--scene")
        .arg(&scene)
        .args(["--seed", "2", "--candidates", "3", "--k", "1"])
        .args(["--stride", "8", "--image-size", "16"])
        .args(["--n-coarse", "4", "--n-fine", "4"]));
    for line in out.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        assert!(line.contains("0e0") || line.contains("0.000000e0"), "expected zero score: {line}");
    }
}

/// `gen-scene --list` names every preset.
#[test]
fn gen_scene_lists_presets() {
    let out = run_ok(anerf().arg("gen-scene").arg("--list"));
    assert!(out.contains("blobs"));
    assert!(out.contains("gradient-sphere"));
}
