//! Experiment configuration: the TOML run file, its defaults, and the
//! conversion into core training settings.
//!
//! Every key has a default, so a minimal run file is just a scene path and a
//! mode; the CLI can override any top-level knob. Documented keys:
//!
//! ```toml
//! scene = "scene.toml"          # scene description path
//! mode = "activenerf-cl"        # activenerf-cl | activenerf-be | nerf-random | nerf-fvs | static
//! n_initial_views = 4
//! k_per_round = 2
//! rounds = 4
//! steps_per_round = 5000
//! candidate_count = 100
//! stride = 4                    # acquisition pixel stride r
//! eval_view_count = 8
//! seed = 1
//! image_width = 64
//! image_height = 64
//! camera_radius_factor = 1.6    # camera sphere radius / bounding radius
//! hemisphere = true             # cameras on the upper hemisphere only
//! oracle_steps = 256            # quadrature steps for simulated captures
//! capture = "oracle"            # oracle | holdout
//! cell_size_divisor = 128.0     # posterior cache cell = bounding_radius / divisor
//! # audit_stride = 1            # optionally re-score each round at another stride
//!
//! [train]                       # all optional
//! lr_initial = 5e-4
//! lr_final = 5e-5
//! batch_rays = 1024
//! n_coarse = 64
//! n_fine = 128
//! lambda_reg = 0.01
//! beta0_sq = 0.01
//! new_ray_fraction = 0.5
//! min_ray_variance = 1e-4
//! grad_chunks = 8
//! hidden_width = 64
//! color_hidden_width = 32
//! l_position = 10
//! l_direction = 4
//! sigma_activation = "softplus" # softplus | relu
//! sigma_shift = -1.0
//! # total_steps = 25000         # lr-decay span; default spans all rounds
//! # seed = 7                    # defaults to the experiment seed
//! # vanilla = false             # defaults by mode (true for nerf-* baselines)
//! ```

use std::path::{Path, PathBuf};

use anerf_core::field::{EncodingConfig, FieldConfig, SigmaActivation};
use anerf_core::math::Rgb;
use anerf_core::train::TrainConfig;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum Mode {
    /// Variance-reduction selection + continuous learning.
    ActivenerfCl,
    /// Variance-reduction selection + training-free Bayesian estimation.
    ActivenerfBe,
    /// Vanilla field, random selection.
    NerfRandom,
    /// Vanilla field, furthest-view selection.
    NerfFvs,
    /// Fixed training set, no selection rounds.
    Static,
}

impl Mode {
    pub fn is_baseline(self) -> bool {
        matches!(self, Mode::NerfRandom | Mode::NerfFvs)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ActivenerfCl => "activenerf-cl",
            Mode::ActivenerfBe => "activenerf-be",
            Mode::NerfRandom => "nerf-random",
            Mode::NerfFvs => "nerf-fvs",
            Mode::Static => "static",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum CaptureMode {
    /// Selected views are rendered on demand by the scene oracle.
    Oracle,
    /// All candidate images are rendered up front and selection consumes
    /// them, mimicking a reserved hold-out pool.
    Holdout,
}

fn default_n_initial() -> usize {
    4
}
fn default_k() -> usize {
    2
}
fn default_rounds() -> usize {
    4
}
fn default_steps() -> u64 {
    5000
}
fn default_candidates() -> usize {
    100
}
fn default_stride() -> u32 {
    4
}
fn default_eval_views() -> usize {
    8
}
fn default_image_side() -> u32 {
    64
}
fn default_radius_factor() -> f64 {
    1.6
}
fn default_true() -> bool {
    true
}
fn default_oracle_steps() -> usize {
    256
}
fn default_capture() -> CaptureMode {
    CaptureMode::Oracle
}
fn default_cell_divisor() -> f64 {
    128.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scene: PathBuf,
    pub mode: Mode,
    #[serde(default = "default_n_initial")]
    pub n_initial_views: usize,
    #[serde(default = "default_k")]
    pub k_per_round: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_steps")]
    pub steps_per_round: u64,
    #[serde(default = "default_candidates")]
    pub candidate_count: usize,
    #[serde(default = "default_stride")]
    pub stride: u32,
    #[serde(default = "default_eval_views")]
    pub eval_view_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_image_side")]
    pub image_width: u32,
    #[serde(default = "default_image_side")]
    pub image_height: u32,
    #[serde(default = "default_radius_factor")]
    pub camera_radius_factor: f64,
    #[serde(default = "default_true")]
    pub hemisphere: bool,
    #[serde(default = "default_oracle_steps")]
    pub oracle_steps: usize,
    #[serde(default = "default_capture")]
    pub capture: CaptureMode,
    #[serde(default = "default_cell_divisor")]
    pub cell_size_divisor: f64,
    #[serde(default)]
    pub audit_stride: Option<u32>,
    #[serde(default)]
    pub train: TrainSettings,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub lr_initial: Option<f64>,
    pub lr_final: Option<f64>,
    pub batch_rays: Option<usize>,
    pub n_coarse: Option<usize>,
    pub n_fine: Option<usize>,
    pub lambda_reg: Option<f64>,
    pub beta0_sq: Option<f64>,
    pub total_steps: Option<u64>,
    pub new_ray_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub vanilla: Option<bool>,
    pub min_ray_variance: Option<f64>,
    pub grad_chunks: Option<usize>,
    pub hidden_width: Option<usize>,
    pub color_hidden_width: Option<usize>,
    pub l_position: Option<u32>,
    pub l_direction: Option<u32>,
    pub sigma_activation: Option<String>,
    pub sigma_shift: Option<f64>,
    pub variance_head_bias: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(scene: PathBuf, mode: Mode, seed: u64) -> Self {
        ExperimentConfig {
            scene,
            mode,
            n_initial_views: default_n_initial(),
            k_per_round: default_k(),
            rounds: default_rounds(),
            steps_per_round: default_steps(),
            candidate_count: default_candidates(),
            stride: default_stride(),
            eval_view_count: default_eval_views(),
            seed,
            image_width: default_image_side(),
            image_height: default_image_side(),
            camera_radius_factor: default_radius_factor(),
            hemisphere: true,
            oracle_steps: default_oracle_steps(),
            capture: default_capture(),
            cell_size_divisor: default_cell_divisor(),
            audit_stride: None,
            train: TrainSettings::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds > 0 && self.k_per_round == 0 {
            bail!("k_per_round must be >= 1 when rounds > 0");
        }
        if self.mode != Mode::Static && self.rounds * self.k_per_round > self.candidate_count {
            bail!(
                "candidate pool ({}) too small for {} rounds x {} picks",
                self.candidate_count,
                self.rounds,
                self.k_per_round
            );
        }
        if self.n_initial_views == 0 {
            bail!("need at least one initial view");
        }
        if self.stride == 0 {
            bail!("stride must be >= 1");
        }
        Ok(())
    }

    /// Effective number of selection rounds (static mode has none).
    pub fn effective_rounds(&self) -> usize {
        if self.mode == Mode::Static {
            0
        } else {
            self.rounds
        }
    }

    /// Core training configuration for a scene with the given bounds.
    pub fn train_config(&self, background: Rgb, bounding_radius: f64) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::desk(self.train.seed.unwrap_or(self.seed));
        cfg.background = background;
        let t = &self.train;
        if let Some(v) = t.lr_initial {
            cfg.lr_initial = v;
        }
        if let Some(v) = t.lr_final {
            cfg.lr_final = v;
        }
        if let Some(v) = t.batch_rays {
            cfg.batch_rays = v;
        }
        if let Some(v) = t.n_coarse {
            cfg.n_coarse = v;
        }
        if let Some(v) = t.n_fine {
            cfg.n_fine = v;
        }
        if let Some(v) = t.lambda_reg {
            cfg.lambda_reg = v;
        }
        if let Some(v) = t.new_ray_fraction {
            cfg.new_ray_fraction = v;
        }
        if let Some(v) = t.min_ray_variance {
            cfg.min_ray_variance = v;
        }
        if let Some(v) = t.grad_chunks {
            cfg.grad_chunks = v;
        }
        cfg.vanilla = t.vanilla.unwrap_or(self.mode.is_baseline());
        // Learning-rate decay spans the whole run unless pinned.
        let training_phases = match self.mode {
            Mode::ActivenerfBe | Mode::Static => 1,
            _ => 1 + self.effective_rounds() as u64,
        };
        cfg.total_steps = t
            .total_steps
            .unwrap_or(self.steps_per_round * training_phases);

        let mut field = FieldConfig {
            pos_scale: 1.0 / bounding_radius,
            ..FieldConfig::default()
        };
        if let Some(v) = t.hidden_width {
            field.hidden_width = v;
            field.color_hidden_width = (v / 2).max(2);
        }
        if let Some(v) = t.color_hidden_width {
            field.color_hidden_width = v;
        }
        if let Some(v) = t.beta0_sq {
            field.beta0_sq = v;
        }
        if let Some(v) = t.variance_head_bias {
            field.variance_head_bias = v;
        }
        field.encoding = EncodingConfig {
            l_position: t.l_position.unwrap_or(10),
            l_direction: t.l_direction.unwrap_or(4),
        };
        let shift = t.sigma_shift.unwrap_or(-1.0);
        field.sigma_activation = match t.sigma_activation.as_deref() {
            None | Some("softplus") => SigmaActivation::ShiftedSoftplus { shift },
            Some("relu") => SigmaActivation::Relu,
            Some(other) => bail!("unknown sigma_activation {other:?} (softplus or relu)"),
        };
        cfg.field = field;
        Ok(cfg)
    }
}
