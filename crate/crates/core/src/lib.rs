//! Core pipeline for a neural radiance field with per-location color
//! uncertainty and variance-reduction view selection.
//!
//! The crate is organized around the flow of one experiment round:
//!
//! * [`scene`] — analytic test scenes and a deterministic quadrature renderer
//!   that stands in for a capture device.
//! * [`camera`] — poses, look-at construction, and sphere-lattice view
//!   generators.
//! * [`field`] — the positionally-encoded MLP with density, color, and
//!   variance heads, plus exact reverse-mode gradients.
//! * [`render`] — ray generation, stratified/hierarchical sampling, and
//!   Gaussian mean/variance compositing along rays.
//! * [`train`] — negative log-likelihood and baseline losses, Adam, and the
//!   ray-pool training loop with continuous updates.
//! * [`bayes`] — closed-form Gaussian posterior updates, per-view information
//!   gain, candidate selection, and the training-free posterior cache.
//! * [`metrics`] — PSNR and SSIM.
//!
//! The crate is `no_std`-compatible (requires `alloc`); IO, file formats, and
//! the CLI live in the companion `anerf` crate. Enable the `parallel` feature
//! to fan out rendering, scoring, and gradient accumulation with rayon; the
//! results are bit-identical to the serial path.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod bayes;
pub mod camera;
pub mod field;
pub mod image;
pub mod math;
pub mod metrics;
pub mod render;
pub mod rng;
pub mod scene;
pub mod train;

pub use camera::CameraPose;
pub use field::{FieldConfig, FieldOutput, FieldParams};
pub use image::{ImageBuf, PosedImage, ScalarImage};
pub use math::{Mat3, Rgb, Vec3};
pub use render::{Ray, RayGaussian, RaySamples, RenderConfig};
pub use scene::Scene;
pub use train::{TrainConfig, TrainState};
