//! Procedural analytic scenes and a deterministic quadrature renderer.
//!
//! A [`Scene`] is a set of constant-density primitives with simple color
//! functions inside a bounding sphere. Because density and color are known in
//! closed form at every point, the scene doubles as ground truth: the oracle
//! renderer integrates the volume-rendering equation by uniform midpoint
//! quadrature, giving reference images for training and a convergence
//! reference for the learned renderer. All functions here are pure; per-pixel
//! rendering parallelizes under the `parallel` feature with identical output.

use alloc::vec::Vec;

use crate::camera::CameraPose;
use crate::image::{ImageBuf, PosedImage};
use crate::math::{fp, Rgb, Vec3};
use crate::render::{self, Ray};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    /// Axis-aligned box given by half-extents.
    Cuboid { half: Vec3 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Color of a primitive as a function of position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ColorSpec {
    Constant(Rgb),
    /// Linear blend from `lo` to `hi` across the primitive's extent along an
    /// axis; gives view-distinguishable texture to otherwise flat shapes.
    AxisGradient { axis: Axis, lo: Rgb, hi: Rgb },
    /// 3D checkerboard with the given cell size.
    Checker { scale: f64, a: Rgb, b: Rgb },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub center: Vec3,
    /// Constant volume density inside the primitive, >= 0.
    pub density: f64,
    pub color: ColorSpec,
}

impl Primitive {
    pub fn contains(&self, p: Vec3) -> bool {
        let d = p - self.center;
        match self.shape {
            Shape::Sphere { radius } => d.norm_squared() <= radius * radius,
            Shape::Cuboid { half } => {
                fp::abs(d.x) <= half.x && fp::abs(d.y) <= half.y && fp::abs(d.z) <= half.z
            }
        }
    }

    /// Half-extent along an axis, used to normalize gradient coordinates.
    fn half_extent(&self, axis: Axis) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => radius,
            Shape::Cuboid { half } => half[axis.index()],
        }
    }

    /// Distance from the scene origin to the farthest point of the primitive.
    pub fn outer_radius(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => self.center.norm() + radius,
            Shape::Cuboid { half } => {
                // Farthest corner from the origin.
                let mut worst: f64 = 0.0;
                for sx in [-1.0, 1.0] {
                    for sy in [-1.0, 1.0] {
                        for sz in [-1.0, 1.0] {
                            let corner = self.center + Vec3::new(sx, sy, sz).hadamard(half);
                            worst = worst.max(corner.norm());
                        }
                    }
                }
                worst
            }
        }
    }

    pub fn color_at(&self, p: Vec3) -> Rgb {
        match self.color {
            ColorSpec::Constant(c) => c,
            ColorSpec::AxisGradient { axis, lo, hi } => {
                let ext = self.half_extent(axis);
                let u = ((p[axis.index()] - (self.center[axis.index()] - ext)) / (2.0 * ext))
                    .clamp(0.0, 1.0);
                lo.lerp(hi, u)
            }
            ColorSpec::Checker { scale, a, b } => {
                let q = (p - self.center) / scale;
                let parity = (fp::floor(q.x) + fp::floor(q.y) + fp::floor(q.z)) as i64;
                if parity.rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub background: Rgb,
    pub bounding_radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneError {
    NegativeDensity,
    ColorOutOfRange,
    /// A primitive extends past the bounding radius.
    PrimitiveOutsideBounds,
    NonPositiveBoundingRadius,
}

impl core::fmt::Display for SceneError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SceneError::NegativeDensity => write!(f, "primitive density must be >= 0"),
            SceneError::ColorOutOfRange => write!(f, "colors must be in [0,1] per channel"),
            SceneError::PrimitiveOutsideBounds => {
                write!(f, "primitive extends past the bounding radius")
            }
            SceneError::NonPositiveBoundingRadius => write!(f, "bounding radius must be > 0"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SceneError {}

fn color_in_range(c: Rgb) -> bool {
    (0.0..=1.0).contains(&c.x) && (0.0..=1.0).contains(&c.y) && (0.0..=1.0).contains(&c.z)
}

impl Scene {
    pub fn empty(background: Rgb, bounding_radius: f64) -> Self {
        Scene {
            primitives: Vec::new(),
            background,
            bounding_radius,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.bounding_radius > 0.0) {
            return Err(SceneError::NonPositiveBoundingRadius);
        }
        if !color_in_range(self.background) {
            return Err(SceneError::ColorOutOfRange);
        }
        for prim in &self.primitives {
            if prim.density < 0.0 {
                return Err(SceneError::NegativeDensity);
            }
            let colors_ok = match prim.color {
                ColorSpec::Constant(c) => color_in_range(c),
                ColorSpec::AxisGradient { lo, hi, .. } => color_in_range(lo) && color_in_range(hi),
                ColorSpec::Checker { a, b, .. } => color_in_range(a) && color_in_range(b),
            };
            if !colors_ok {
                return Err(SceneError::ColorOutOfRange);
            }
            if prim.outer_radius() > self.bounding_radius + 1e-9 {
                return Err(SceneError::PrimitiveOutsideBounds);
            }
        }
        Ok(())
    }

    /// Density and color at a point: densities of containing primitives sum,
    /// colors average weighted by density. Outside all primitives (or where
    /// total density is zero) the result is `(0, background)`.
    pub fn query(&self, p: Vec3) -> (f64, Rgb) {
        let mut sigma = 0.0;
        let mut weighted = Rgb::ZERO;
        for prim in &self.primitives {
            if prim.density > 0.0 && prim.contains(p) {
                sigma += prim.density;
                weighted += prim.color_at(p) * prim.density;
            }
        }
        if sigma > 0.0 {
            (sigma, weighted / sigma)
        } else {
            (0.0, self.background)
        }
    }
}

/// Quadrature color of a single ray: midpoint rule over `steps` uniform
/// intervals of `[t_near, t_far]`, with residual transmittance composited
/// against the scene background.
pub fn oracle_render_ray(scene: &Scene, ray: &Ray, steps: usize) -> Rgb {
    let dt = (ray.t_far - ray.t_near) / steps as f64;
    let mut transmittance = 1.0;
    let mut color = Rgb::ZERO;
    for k in 0..steps {
        let t = ray.t_near + (k as f64 + 0.5) * dt;
        let (sigma, c) = scene.query(ray.origin + ray.direction * t);
        if sigma > 0.0 {
            let next = transmittance * fp::exp(-sigma * dt);
            color += c * (transmittance - next);
            transmittance = next;
        }
    }
    color + scene.background * transmittance
}

/// Ground-truth image of the scene from a pose. `steps >= 64` keeps the
/// quadrature error well below 8-bit precision on desk-scale scenes.
pub fn oracle_render(scene: &Scene, pose: &CameraPose, steps: usize) -> PosedImage {
    assert!(steps >= 64, "oracle quadrature needs at least 64 steps");
    let width = pose.width;
    let height = pose.height;
    let row = |py: u32| -> Vec<Rgb> {
        (0..width)
            .map(|px| {
                let ray = render::pixel_ray(pose, px, py).expect("pixel in range");
                oracle_render_ray(scene, &ray, steps)
            })
            .collect()
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<Rgb>> = {
        use rayon::prelude::*;
        (0..height).into_par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<Rgb>> = (0..height).map(row).collect();

    let mut data = Vec::with_capacity((width as usize) * (height as usize));
    for r in rows {
        data.extend(r);
    }
    PosedImage {
        pose: *pose,
        pixels: ImageBuf::from_data(width, height, data),
    }
}

/// Oracle renders for a list of poses, order preserving.
pub fn generate_dataset(scene: &Scene, poses: &[CameraPose], steps: usize) -> Vec<PosedImage> {
    poses
        .iter()
        .map(|pose| oracle_render(scene, pose, steps))
        .collect()
}
