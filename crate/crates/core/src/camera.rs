//! Camera poses, look-at construction, and sphere-lattice view generation.
//!
//! Camera space follows the usual synthetic-NeRF convention: `x` right,
//! `y` up, and the camera looking along `-z`. `rotation` maps camera space to
//! world space, so the forward axis in world space is `rotation * (0,0,-1)`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::math::{fp, Mat3, Vec3};
use crate::rng;

/// Pinhole camera extrinsics and intrinsics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    /// Camera center in world space.
    pub position: Vec3,
    /// Camera-to-world rotation (orthonormal, det +1).
    pub rotation: Mat3,
    /// Focal length in pixels.
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    /// Near integration bound along each ray.
    pub t_near: f64,
    /// Far integration bound along each ray.
    pub t_far: f64,
}

/// Intrinsics shared by a family of generated poses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    pub t_near: f64,
    pub t_far: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CameraError {
    /// Rotation is not orthonormal with determinant +1.
    InvalidRotation,
    /// Requires 0 < t_near < t_far.
    InvalidDepthRange,
    /// Zero-sized image.
    EmptyImage,
}

impl core::fmt::Display for CameraError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CameraError::InvalidRotation => write!(f, "rotation must be orthonormal with det +1"),
            CameraError::InvalidDepthRange => write!(f, "requires 0 < t_near < t_far"),
            CameraError::EmptyImage => write!(f, "width and height must be at least 1"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CameraError {}

impl CameraPose {
    /// Checks the pose invariants (orthonormal rotation at 1e-6, depth range,
    /// non-empty image).
    pub fn validate(&self) -> Result<(), CameraError> {
        if !self.rotation.is_rotation(1e-6) {
            return Err(CameraError::InvalidRotation);
        }
        if !(self.t_near > 0.0 && self.t_near < self.t_far) {
            return Err(CameraError::InvalidDepthRange);
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::EmptyImage);
        }
        Ok(())
    }

    /// World-space forward axis (`rotation * (0,0,-1)`).
    pub fn forward(&self) -> Vec3 {
        -self.rotation.col(2)
    }

    /// Pose at `position` oriented so the forward axis points at `target`.
    ///
    /// `up_hint` picks the roll; when it is (near) parallel to the view
    /// direction a fixed fallback axis is used instead.
    pub fn look_at(position: Vec3, target: Vec3, up_hint: Vec3, intrinsics: Intrinsics) -> Self {
        let forward = (target - position).normalized();
        let mut up = up_hint;
        if forward.cross(up).norm_squared() < 1e-12 {
            up = Vec3::new(1.0, 0.0, 0.0);
            if forward.cross(up).norm_squared() < 1e-12 {
                up = Vec3::new(0.0, 1.0, 0.0);
            }
        }
        let right = forward.cross(up).normalized();
        let true_up = right.cross(forward);
        CameraPose {
            position,
            rotation: Mat3::from_cols(right, true_up, -forward),
            focal: intrinsics.focal,
            width: intrinsics.width,
            height: intrinsics.height,
            t_near: intrinsics.t_near,
            t_far: intrinsics.t_far,
        }
    }
}

/// Deterministic poses on a sphere (or upper hemisphere, `z >= 0`) of the
/// given radius around `center`, each looking at `center`.
///
/// Placement is a Fibonacci lattice; the seed rotates the whole lattice in
/// azimuth so different seeds give different view sets with the same spacing.
pub fn sample_sphere_views(
    n: usize,
    radius: f64,
    center: Vec3,
    hemisphere: bool,
    seed: u64,
    intrinsics: Intrinsics,
) -> Vec<CameraPose> {
    assert!(n >= 1, "need at least one view");
    assert!(radius > 0.0, "radius must be positive");
    let mut rng = rng::stream(seed, rng::domain::SPHERE_VIEWS, 0);
    let offset: f64 = rng.gen::<f64>() * 2.0 * PI;
    let golden = PI * (3.0 - fp::sqrt(5.0));
    let mut poses = Vec::with_capacity(n);
    for i in 0..n {
        let frac = (i as f64 + 0.5) / n as f64;
        // cos(theta) spans (0,1) on the hemisphere and (-1,1) on the sphere.
        let cos_theta = if hemisphere { frac } else { 1.0 - 2.0 * frac };
        let sin_theta = fp::sqrt((1.0 - cos_theta * cos_theta).max(0.0));
        let phi = offset + golden * i as f64;
        let dir = Vec3::new(
            sin_theta * fp::cos(phi),
            sin_theta * fp::sin(phi),
            cos_theta,
        );
        let position = center + dir * radius;
        poses.push(CameraPose::look_at(
            position,
            center,
            Vec3::new(0.0, 0.0, 1.0),
            intrinsics,
        ));
    }
    poses
}
