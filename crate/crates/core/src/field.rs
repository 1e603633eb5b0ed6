//! The neural field: positional encoding, an MLP trunk with a skip
//! connection, and density / variance / view-conditioned color heads.
//!
//! Parameters live in one flat `Vec<f64>` described by a [`FieldLayout`];
//! the optimizer, checkpoints, and finite-difference tests all operate on
//! that flat vector. `backward_*` routines produce exact reverse-mode
//! gradients for every parameter.
//!
//! Parameter groups: the trunk plus density head plus feature bottleneck
//! form the position branch; the color layers after the direction encoding
//! form the view branch; the variance head is its own branch. The variance
//! head reads the trunk output, so color means are unaffected by variance
//! parameters and vice versa.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Range;

use rand::Rng;

use crate::math::{fp, Rgb, Vec3};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodingConfig {
    /// Frequency count for the spatial coordinates.
    pub l_position: u32,
    /// Frequency count for the view direction.
    pub l_direction: u32,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            l_position: 10,
            l_direction: 4,
        }
    }
}

/// Sinusoidal encoding of each input scalar at `l` octaves:
/// `sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(l-1) pi p), cos(2^(l-1) pi p)`,
/// concatenated per coordinate. Output length is `2 * l * input.len()`.
/// The raw coordinate is not included.
pub fn positional_encode_into(input: &[f64], l: u32, out: &mut Vec<f64>) {
    for &p in input {
        let mut freq = PI;
        for _ in 0..l {
            let arg = freq * p;
            out.push(fp::sin(arg));
            out.push(fp::cos(arg));
            freq *= 2.0;
        }
    }
}

pub fn positional_encode(input: &[f64], l: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * l as usize * input.len());
    positional_encode_into(input, l, &mut out);
    out
}

/// Overflow-safe `ln(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + fp::ln_1p(fp::exp(-fp::abs(x)))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + fp::exp(-x))
    } else {
        let e = fp::exp(x);
        e / (1.0 + e)
    }
}

/// Variance head activation: `beta0_sq + softplus(raw)`.
///
/// Output is strictly greater than `beta0_sq` and monotone in `raw`; stable
/// for `|raw|` up to 1e3 and beyond.
pub fn variance_activation(raw: f64, beta0_sq: f64) -> f64 {
    beta0_sq + softplus(raw)
}

/// Density-head activation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaActivation {
    /// `softplus(raw + shift)`: smooth, never exactly zero. The negative
    /// default shift keeps freshly initialized fields mostly transparent.
    ShiftedSoftplus { shift: f64 },
    /// `max(raw, 0)`: the classic choice; zeroed head weights give an exactly
    /// empty field.
    Relu,
}

impl SigmaActivation {
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            SigmaActivation::ShiftedSoftplus { shift } => softplus(raw + shift),
            SigmaActivation::Relu => raw.max(0.0),
        }
    }

    pub fn derivative(self, raw: f64) -> f64 {
        match self {
            SigmaActivation::ShiftedSoftplus { shift } => sigmoid(raw + shift),
            SigmaActivation::Relu => {
                if raw > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldConfig {
    pub encoding: EncodingConfig,
    /// Width of the trunk layers and the feature bottleneck.
    pub hidden_width: usize,
    /// Width of the hidden color layer after the direction encoding joins.
    pub color_hidden_width: usize,
    /// Number of trunk layers.
    pub trunk_depth: usize,
    /// Trunk layer whose input is `[previous activation, encoded position]`.
    pub skip_layer: usize,
    /// Variance floor added by the variance activation.
    pub beta0_sq: f64,
    pub sigma_activation: SigmaActivation,
    /// Positions are multiplied by this before encoding; set it to
    /// `1 / bounding_radius` so scene content maps into `[-1, 1]`.
    pub pos_scale: f64,
    /// Initial bias of the variance head. Zero starts fresh fields near
    /// `beta0_sq + ln 2`; negative values start them closer to the floor,
    /// which tames the early likelihood weights on short schedules.
    pub variance_head_bias: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            encoding: EncodingConfig::default(),
            hidden_width: 64,
            color_hidden_width: 32,
            trunk_depth: 8,
            skip_layer: 4,
            beta0_sq: 0.01,
            sigma_activation: SigmaActivation::ShiftedSoftplus { shift: -1.0 },
            pos_scale: 1.0,
            variance_head_bias: 0.0,
        }
    }
}

impl FieldConfig {
    /// Small configuration for unit tests and finite-difference checks.
    pub fn tiny(width: usize) -> Self {
        FieldConfig {
            encoding: EncodingConfig {
                l_position: 2,
                l_direction: 1,
            },
            hidden_width: width,
            color_hidden_width: width.max(2) / 2,
            trunk_depth: 4,
            skip_layer: 2,
            ..FieldConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerSpec {
    pub fn param_range(&self) -> Range<usize> {
        self.weight_offset..self.bias_offset + self.out_dim
    }
}

/// Offsets of every layer inside the flat parameter vector.
///
/// Layer order: trunk layers, density head, feature bottleneck, color hidden,
/// color output, variance head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldLayout {
    pub layers: Vec<LayerSpec>,
    pub total_params: usize,
    pub enc_x_dim: usize,
    pub enc_d_dim: usize,
    trunk_depth: usize,
}

impl FieldLayout {
    pub fn new(cfg: &FieldConfig) -> Self {
        assert!(cfg.trunk_depth >= 2, "trunk needs at least two layers");
        assert!(
            cfg.skip_layer > 0 && cfg.skip_layer < cfg.trunk_depth,
            "skip layer must be inside the trunk"
        );
        let enc_x_dim = 2 * cfg.encoding.l_position as usize * 3;
        let enc_d_dim = 2 * cfg.encoding.l_direction as usize * 3;
        let w = cfg.hidden_width;
        let mut layers = Vec::new();
        let mut offset = 0usize;
        let mut push = |in_dim: usize, out_dim: usize| {
            let spec = LayerSpec {
                in_dim,
                out_dim,
                weight_offset: offset,
                bias_offset: offset + in_dim * out_dim,
            };
            offset += in_dim * out_dim + out_dim;
            spec
        };
        for i in 0..cfg.trunk_depth {
            let in_dim = if i == 0 {
                enc_x_dim
            } else if i == cfg.skip_layer {
                w + enc_x_dim
            } else {
                w
            };
            layers.push(push(in_dim, w));
        }
        layers.push(push(w, 1)); // density head
        layers.push(push(w, w)); // feature bottleneck
        layers.push(push(w + enc_d_dim, cfg.color_hidden_width));
        layers.push(push(cfg.color_hidden_width, 3));
        layers.push(push(w, 1)); // variance head
        FieldLayout {
            layers,
            total_params: offset,
            enc_x_dim,
            enc_d_dim,
            trunk_depth: cfg.trunk_depth,
        }
    }

    pub fn trunk(&self, i: usize) -> &LayerSpec {
        &self.layers[i]
    }

    pub fn density(&self) -> &LayerSpec {
        &self.layers[self.trunk_depth]
    }

    pub fn feature(&self) -> &LayerSpec {
        &self.layers[self.trunk_depth + 1]
    }

    pub fn color_hidden(&self) -> &LayerSpec {
        &self.layers[self.trunk_depth + 2]
    }

    pub fn color_out(&self) -> &LayerSpec {
        &self.layers[self.trunk_depth + 3]
    }

    pub fn variance(&self) -> &LayerSpec {
        &self.layers[self.trunk_depth + 4]
    }

    /// Parameter ranges of the position branch (trunk, density, feature).
    pub fn position_branch_ranges(&self) -> Vec<Range<usize>> {
        let mut out: Vec<Range<usize>> = (0..self.trunk_depth)
            .map(|i| self.trunk(i).param_range())
            .collect();
        out.push(self.density().param_range());
        out.push(self.feature().param_range());
        out
    }

    /// Parameter ranges of the view-conditioned color branch.
    pub fn color_branch_ranges(&self) -> Vec<Range<usize>> {
        vec![
            self.color_hidden().param_range(),
            self.color_out().param_range(),
        ]
    }

    /// Parameter range of the variance branch.
    pub fn variance_branch_ranges(&self) -> Vec<Range<usize>> {
        vec![self.variance().param_range()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldError {
    /// Direction must have unit norm (tolerance 1e-6).
    NonUnitDirection,
    /// Batch and upstream gradient lengths must match.
    ShapeMismatch,
}

impl core::fmt::Display for FieldError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FieldError::NonUnitDirection => write!(f, "direction must have unit norm"),
            FieldError::ShapeMismatch => write!(f, "upstream gradient shape mismatch"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FieldError {}

/// One location's field prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOutput {
    /// Volume density, >= 0.
    pub sigma: f64,
    /// Mean emitted color in `[0, 1]` per channel.
    pub color_mean: Rgb,
    /// Color variance, strictly above `beta0_sq`; `None` when the field is
    /// evaluated without its uncertainty branch (the coarse pass).
    pub variance: Option<f64>,
    /// Trunk feature fed to the color branch.
    pub feature: Vec<f64>,
}

/// Cached activations of one forward pass, consumed by the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct SampleTape {
    enc_x: Vec<f64>,
    enc_d: Vec<f64>,
    /// Post-ReLU output of each trunk layer.
    trunk_post: Vec<Vec<f64>>,
    feature: Vec<f64>,
    color_hidden_post: Vec<f64>,
    color: [f64; 3],
    z_sigma: f64,
    z_variance: f64,
    pub sigma: f64,
    pub color_mean: Rgb,
    pub variance: f64,
    with_variance: bool,
}

impl SampleTape {
    pub fn output(&self) -> FieldOutput {
        FieldOutput {
            sigma: self.sigma,
            color_mean: self.color_mean,
            variance: self.with_variance.then_some(self.variance),
            feature: self.feature.clone(),
        }
    }
}

/// Upstream gradients flowing into one sample's outputs.
#[derive(Clone, Copy, Debug, Default)]
pub struct UpstreamGrad {
    pub d_sigma: f64,
    pub d_color: Rgb,
    pub d_variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams {
    pub config: FieldConfig,
    pub layout: FieldLayout,
    pub theta: Vec<f64>,
}

fn affine(spec: &LayerSpec, theta: &[f64], parts: &[&[f64]], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(&theta[spec.bias_offset..spec.bias_offset + spec.out_dim]);
    let weights = &theta[spec.weight_offset..spec.weight_offset + spec.in_dim * spec.out_dim];
    for (o, acc) in out.iter_mut().enumerate() {
        let row = &weights[o * spec.in_dim..(o + 1) * spec.in_dim];
        let mut col = 0;
        let mut sum = 0.0;
        for part in parts {
            let seg = &row[col..col + part.len()];
            for (w, x) in seg.iter().zip(part.iter()) {
                sum += w * x;
            }
            col += part.len();
        }
        *acc += sum;
    }
    debug_assert_eq!(
        parts.iter().map(|p| p.len()).sum::<usize>(),
        spec.in_dim,
        "affine input width mismatch"
    );
}

/// Accumulates parameter gradients and returns the input gradient, laid out
/// as the concatenation of `parts`.
fn affine_backward(
    spec: &LayerSpec,
    theta: &[f64],
    parts: &[&[f64]],
    d_out: &[f64],
    grads: &mut [f64],
    d_input: &mut Vec<f64>,
) {
    d_input.clear();
    d_input.resize(spec.in_dim, 0.0);
    let weights = &theta[spec.weight_offset..spec.weight_offset + spec.in_dim * spec.out_dim];
    let g_weights =
        &mut grads[spec.weight_offset..spec.weight_offset + spec.in_dim * spec.out_dim];
    for (o, &g) in d_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = o * spec.in_dim;
        let mut col = 0;
        for part in parts {
            for (i, &x) in part.iter().enumerate() {
                g_weights[row + col + i] += g * x;
            }
            col += part.len();
        }
        for (i, di) in d_input.iter_mut().enumerate() {
            *di += weights[row + i] * g;
        }
    }
    let g_bias = &mut grads[spec.bias_offset..spec.bias_offset + spec.out_dim];
    for (b, &g) in g_bias.iter_mut().zip(d_out.iter()) {
        *b += g;
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Single-output head evaluated as a dot product, avoiding buffer churn.
fn dot_head(spec: &LayerSpec, theta: &[f64], input: &[f64]) -> f64 {
    debug_assert_eq!(spec.out_dim, 1);
    debug_assert_eq!(spec.in_dim, input.len());
    let row = &theta[spec.weight_offset..spec.weight_offset + spec.in_dim];
    let mut z = theta[spec.bias_offset];
    for (w, x) in row.iter().zip(input.iter()) {
        z += w * x;
    }
    z
}

/// Reusable scratch for [`FieldParams::eval_fast`].
#[derive(Clone, Debug, Default)]
pub struct EvalWorkspace {
    a: Vec<f64>,
    b: Vec<f64>,
    enc_x: Vec<f64>,
    enc_d: Vec<f64>,
}

impl FieldParams {
    /// Deterministic fan-in-scaled uniform initialization: weights and
    /// biases draw from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`. The variance
    /// head is scaled down by 100x with a zero bias, so fresh fields predict
    /// a variance near `beta0_sq + ln 2` everywhere.
    pub fn init(config: FieldConfig, seed: u64) -> Self {
        let layout = FieldLayout::new(&config);
        let mut theta = vec![0.0; layout.total_params];
        let variance_offset = layout.variance().weight_offset;
        for (idx, spec) in layout.layers.iter().enumerate() {
            let mut rng = rng::stream(seed, rng::domain::INIT_PARAMS, idx as u64);
            let is_variance_head = spec.weight_offset == variance_offset;
            let mut scale = 1.0 / fp::sqrt(spec.in_dim as f64);
            if is_variance_head {
                scale *= 0.01;
            }
            for w in
                theta[spec.weight_offset..spec.weight_offset + spec.in_dim * spec.out_dim].iter_mut()
            {
                *w = (rng.gen::<f64>() * 2.0 - 1.0) * scale;
            }
            if is_variance_head {
                theta[spec.bias_offset] = config.variance_head_bias;
            } else {
                for b in theta[spec.bias_offset..spec.bias_offset + spec.out_dim].iter_mut() {
                    *b = (rng.gen::<f64>() * 2.0 - 1.0) * scale;
                }
            }
        }
        FieldParams {
            config,
            layout,
            theta,
        }
    }

    pub fn param_len(&self) -> usize {
        self.layout.total_params
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.layout.total_params]
    }

    /// Evaluates the field at a point viewed from a unit direction.
    pub fn eval(
        &self,
        point: Vec3,
        direction: Vec3,
        uncertainty: bool,
    ) -> Result<FieldOutput, FieldError> {
        if fp::abs(direction.norm() - 1.0) > 1e-6 {
            return Err(FieldError::NonUnitDirection);
        }
        Ok(self.forward_tape(point, direction, uncertainty).output())
    }

    pub(crate) fn forward_tape(
        &self,
        point: Vec3,
        direction: Vec3,
        uncertainty: bool,
    ) -> SampleTape {
        let cfg = &self.config;
        let layout = &self.layout;
        let scaled = point * cfg.pos_scale;
        let enc_x = positional_encode(&scaled.to_array(), cfg.encoding.l_position);
        let enc_d = positional_encode(&direction.to_array(), cfg.encoding.l_direction);

        let mut trunk_post: Vec<Vec<f64>> = Vec::with_capacity(cfg.trunk_depth);
        let mut buf = Vec::new();
        for i in 0..cfg.trunk_depth {
            let spec = layout.trunk(i);
            if i == 0 {
                affine(spec, &self.theta, &[&enc_x], &mut buf);
            } else if i == cfg.skip_layer {
                affine(spec, &self.theta, &[&trunk_post[i - 1], &enc_x], &mut buf);
            } else {
                affine(spec, &self.theta, &[&trunk_post[i - 1]], &mut buf);
            }
            relu_in_place(&mut buf);
            trunk_post.push(core::mem::take(&mut buf));
        }
        let trunk_last = &trunk_post[cfg.trunk_depth - 1];

        let z_sigma = dot_head(layout.density(), &self.theta, trunk_last);
        let sigma = cfg.sigma_activation.apply(z_sigma);

        let mut feature = Vec::new();
        affine(layout.feature(), &self.theta, &[trunk_last], &mut feature);

        let mut color_hidden_post = Vec::new();
        affine(
            layout.color_hidden(),
            &self.theta,
            &[&feature, &enc_d],
            &mut color_hidden_post,
        );
        relu_in_place(&mut color_hidden_post);

        let mut color_z = Vec::new();
        affine(
            layout.color_out(),
            &self.theta,
            &[&color_hidden_post],
            &mut color_z,
        );
        let color = [sigmoid(color_z[0]), sigmoid(color_z[1]), sigmoid(color_z[2])];

        let (z_variance, variance) = if uncertainty {
            let z = dot_head(layout.variance(), &self.theta, trunk_last);
            (z, variance_activation(z, cfg.beta0_sq))
        } else {
            (0.0, 0.0)
        };

        SampleTape {
            enc_x,
            enc_d,
            trunk_post,
            feature,
            color_hidden_post,
            color,
            z_sigma,
            z_variance,
            sigma,
            color_mean: Rgb::new(color[0], color[1], color[2]),
            variance,
            with_variance: uncertainty,
        }
    }

    /// Allocation-free forward pass for rendering: density, color mean, and
    /// variance only, using the caller's scratch buffers.
    pub(crate) fn eval_fast(
        &self,
        point: Vec3,
        direction: Vec3,
        uncertainty: bool,
        ws: &mut EvalWorkspace,
    ) -> (f64, Rgb, f64) {
        let cfg = &self.config;
        let layout = &self.layout;
        let scaled = point * cfg.pos_scale;
        ws.enc_x.clear();
        positional_encode_into(&scaled.to_array(), cfg.encoding.l_position, &mut ws.enc_x);
        ws.enc_d.clear();
        positional_encode_into(
            &direction.to_array(),
            cfg.encoding.l_direction,
            &mut ws.enc_d,
        );

        // Ping-pong between two activation buffers; `a` holds the current
        // layer input.
        let (a, b) = (&mut ws.a, &mut ws.b);
        for i in 0..cfg.trunk_depth {
            let spec = layout.trunk(i);
            if i == 0 {
                affine(spec, &self.theta, &[&ws.enc_x], b);
            } else if i == cfg.skip_layer {
                affine(spec, &self.theta, &[&a[..], &ws.enc_x], b);
            } else {
                affine(spec, &self.theta, &[&a[..]], b);
            }
            relu_in_place(b);
            core::mem::swap(a, b);
        }
        // `a` now holds the trunk output.
        let z_sigma = dot_head(layout.density(), &self.theta, a);
        let sigma = cfg.sigma_activation.apply(z_sigma);
        let variance = if uncertainty {
            variance_activation(dot_head(layout.variance(), &self.theta, a), cfg.beta0_sq)
        } else {
            0.0
        };
        affine(layout.feature(), &self.theta, &[&a[..]], b);
        let mut color = [0.0; 3];
        {
            let spec = layout.color_hidden();
            // Write the hidden layer into enc_x's buffer? No: reuse `b` for
            // the feature and compute the hidden layer into a fresh borrow of
            // `a`, which is free again.
            let (hidden_in, hidden_out) = (&b[..], a);
            affine(spec, &self.theta, &[hidden_in, &ws.enc_d], hidden_out);
            relu_in_place(hidden_out);
            let spec = layout.color_out();
            for (ch, out) in color.iter_mut().enumerate() {
                let row = &self.theta[spec.weight_offset + ch * spec.in_dim
                    ..spec.weight_offset + (ch + 1) * spec.in_dim];
                let mut z = self.theta[spec.bias_offset + ch];
                for (w, x) in row.iter().zip(hidden_out.iter()) {
                    z += w * x;
                }
                *out = sigmoid(z);
            }
        }
        (sigma, Rgb::new(color[0], color[1], color[2]), variance)
    }

    /// Accumulates exact parameter gradients for one sample into `grads`.
    pub(crate) fn backward_sample(
        &self,
        tape: &SampleTape,
        up: &UpstreamGrad,
        grads: &mut [f64],
    ) {
        debug_assert_eq!(grads.len(), self.layout.total_params);
        let cfg = &self.config;
        let layout = &self.layout;
        let w = cfg.hidden_width;
        let trunk_last = &tape.trunk_post[cfg.trunk_depth - 1];
        let mut d_trunk_last = vec![0.0; w];
        let mut scratch = Vec::new();

        if tape.with_variance && up.d_variance != 0.0 {
            let d_z = up.d_variance * sigmoid(tape.z_variance);
            affine_backward(
                layout.variance(),
                &self.theta,
                &[trunk_last],
                &[d_z],
                grads,
                &mut scratch,
            );
            for (d, s) in d_trunk_last.iter_mut().zip(scratch.iter()) {
                *d += s;
            }
        }

        if up.d_sigma != 0.0 {
            let d_z = up.d_sigma * cfg.sigma_activation.derivative(tape.z_sigma);
            affine_backward(
                layout.density(),
                &self.theta,
                &[trunk_last],
                &[d_z],
                grads,
                &mut scratch,
            );
            for (d, s) in d_trunk_last.iter_mut().zip(scratch.iter()) {
                *d += s;
            }
        }

        let d_color = up.d_color.to_array();
        if d_color.iter().any(|&g| g != 0.0) {
            let d_z_out: Vec<f64> = (0..3)
                .map(|ch| d_color[ch] * tape.color[ch] * (1.0 - tape.color[ch]))
                .collect();
            affine_backward(
                layout.color_out(),
                &self.theta,
                &[&tape.color_hidden_post],
                &d_z_out,
                grads,
                &mut scratch,
            );
            let mut d_hidden = scratch.clone();
            for (d, post) in d_hidden.iter_mut().zip(tape.color_hidden_post.iter()) {
                if *post <= 0.0 {
                    *d = 0.0;
                }
            }
            affine_backward(
                layout.color_hidden(),
                &self.theta,
                &[&tape.feature, &tape.enc_d],
                &d_hidden,
                grads,
                &mut scratch,
            );
            let d_feature = scratch[..tape.feature.len()].to_vec();
            affine_backward(
                layout.feature(),
                &self.theta,
                &[trunk_last],
                &d_feature,
                grads,
                &mut scratch,
            );
            for (d, s) in d_trunk_last.iter_mut().zip(scratch.iter()) {
                *d += s;
            }
        }

        // Trunk backward, dropping gradients into the encoded inputs.
        let mut d_post = d_trunk_last;
        for i in (0..cfg.trunk_depth).rev() {
            if d_post.iter().all(|&g| g == 0.0) {
                break;
            }
            let mut d_z = d_post;
            for (g, post) in d_z.iter_mut().zip(tape.trunk_post[i].iter()) {
                if *post <= 0.0 {
                    *g = 0.0;
                }
            }
            let parts: Vec<&[f64]> = if i == 0 {
                vec![&tape.enc_x]
            } else if i == cfg.skip_layer {
                vec![&tape.trunk_post[i - 1], &tape.enc_x]
            } else {
                vec![&tape.trunk_post[i - 1]]
            };
            affine_backward(layout.trunk(i), &self.theta, &parts, &d_z, grads, &mut scratch);
            if i == 0 {
                break;
            }
            d_post = scratch[..w.min(scratch.len())].to_vec();
            if i == cfg.skip_layer {
                d_post.truncate(w);
            }
        }
    }
}

/// Batch reverse-mode gradients: evaluates the field at each `(point,
/// direction)` pair and accumulates parameter gradients for the given
/// upstream output gradients. Returns the flat gradient vector.
pub fn field_backward(
    params: &FieldParams,
    batch: &[(Vec3, Vec3)],
    upstream: &[UpstreamGrad],
    uncertainty: bool,
) -> Result<Vec<f64>, FieldError> {
    if batch.len() != upstream.len() {
        return Err(FieldError::ShapeMismatch);
    }
    let mut grads = params.zero_grads();
    for ((point, direction), up) in batch.iter().zip(upstream.iter()) {
        if fp::abs(direction.norm() - 1.0) > 1e-6 {
            return Err(FieldError::NonUnitDirection);
        }
        let tape = params.forward_tape(*point, *direction, uncertainty);
        params.backward_sample(&tape, up, &mut grads);
    }
    Ok(grads)
}
