//! The TOML scene description and built-in presets.
//!
//! ```toml
//! background = [0.0, 0.0, 0.0]
//! bounding_radius = 2.5
//!
//! [[primitives]]
//! shape = "sphere"            # or "box"
//! center = [0.0, 0.0, 0.3]
//! size = 0.9                  # sphere radius; box: [hx, hy, hz] half-extents
//! density = 10.0
//! color = { kind = "axis-gradient", axis = "z", lo = [0.9, 0.2, 0.1], hi = [0.1, 0.3, 0.9] }
//! # color = { kind = "constant", rgb = [0.2, 0.8, 0.3] }
//! # color = { kind = "checker", scale = 0.4, a = [0.9, 0.9, 0.85], b = [0.15, 0.15, 0.2] }
//! ```

use std::fs;
use std::path::Path;

use anerf_core::math::{Rgb, Vec3};
use anerf_core::scene::{Axis, ColorSpec, Primitive, Scene, Shape};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneFile {
    pub background: [f64; 3],
    pub bounding_radius: f64,
    #[serde(default)]
    pub primitives: Vec<PrimitiveFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrimitiveFile {
    pub shape: String,
    pub center: [f64; 3],
    pub size: SizeFile,
    pub density: f64,
    pub color: ColorFile,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SizeFile {
    Scalar(f64),
    Extents([f64; 3]),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ColorFile {
    Constant { rgb: [f64; 3] },
    AxisGradient { axis: String, lo: [f64; 3], hi: [f64; 3] },
    Checker { scale: f64, a: [f64; 3], b: [f64; 3] },
}

fn parse_axis(axis: &str) -> Result<Axis> {
    match axis {
        "x" | "X" => Ok(Axis::X),
        "y" | "Y" => Ok(Axis::Y),
        "z" | "Z" => Ok(Axis::Z),
        other => bail!("unknown axis {other:?} (expected x, y, or z)"),
    }
}

impl SceneFile {
    pub fn into_scene(self) -> Result<Scene> {
        let mut scene = Scene::empty(Rgb::from_array(self.background), self.bounding_radius);
        for prim in self.primitives {
            let shape = match (prim.shape.as_str(), &prim.size) {
                ("sphere", SizeFile::Scalar(radius)) => Shape::Sphere { radius: *radius },
                ("sphere", SizeFile::Extents(_)) => {
                    bail!("sphere size must be a scalar radius")
                }
                ("box", SizeFile::Extents(half)) => Shape::Cuboid {
                    half: Vec3::from_array(*half),
                },
                ("box", SizeFile::Scalar(half)) => Shape::Cuboid {
                    half: Vec3::splat(*half),
                },
                (other, _) => bail!("unknown shape {other:?} (expected sphere or box)"),
            };
            let color = match prim.color {
                ColorFile::Constant { rgb } => ColorSpec::Constant(Rgb::from_array(rgb)),
                ColorFile::AxisGradient { axis, lo, hi } => ColorSpec::AxisGradient {
                    axis: parse_axis(&axis)?,
                    lo: Rgb::from_array(lo),
                    hi: Rgb::from_array(hi),
                },
                ColorFile::Checker { scale, a, b } => ColorSpec::Checker {
                    scale,
                    a: Rgb::from_array(a),
                    b: Rgb::from_array(b),
                },
            };
            scene.primitives.push(Primitive {
                shape,
                center: Vec3::from_array(prim.center),
                density: prim.density,
                color,
            });
        }
        scene
            .validate()
            .map_err(|e| anyhow::anyhow!("invalid scene: {e}"))?;
        Ok(scene)
    }

    pub fn from_scene(scene: &Scene) -> Self {
        SceneFile {
            background: scene.background.to_array(),
            bounding_radius: scene.bounding_radius,
            primitives: scene
                .primitives
                .iter()
                .map(|p| PrimitiveFile {
                    shape: match p.shape {
                        Shape::Sphere { .. } => "sphere".into(),
                        Shape::Cuboid { .. } => "box".into(),
                    },
                    center: p.center.to_array(),
                    size: match p.shape {
                        Shape::Sphere { radius } => SizeFile::Scalar(radius),
                        Shape::Cuboid { half } => SizeFile::Extents(half.to_array()),
                    },
                    density: p.density,
                    color: match p.color {
                        ColorSpec::Constant(c) => ColorFile::Constant { rgb: c.to_array() },
                        ColorSpec::AxisGradient { axis, lo, hi } => ColorFile::AxisGradient {
                            axis: match axis {
                                Axis::X => "x".into(),
                                Axis::Y => "y".into(),
                                Axis::Z => "z".into(),
                            },
                            lo: lo.to_array(),
                            hi: hi.to_array(),
                        },
                        ColorSpec::Checker { scale, a, b } => ColorFile::Checker {
                            scale,
                            a: a.to_array(),
                            b: b.to_array(),
                        },
                    },
                })
                .collect(),
        }
    }
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: SceneFile =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    file.into_scene()
}

pub fn write_scene(scene: &Scene, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(&SceneFile::from_scene(scene))?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub const PRESET_NAMES: &[&str] = &["blobs", "gradient-sphere"];

/// Built-in scenes.
///
/// `blobs` surrounds a vertically graded central sphere with four
/// distinctly colored satellites over a checkered ground slab, so every
/// viewing sector shows something the others do not; `gradient-sphere` is a
/// single graded sphere for quick smoke runs.
pub fn preset(name: &str) -> Result<Scene> {
    let scene = match name {
        "blobs" => {
            let mut scene = Scene::empty(Rgb::ZERO, 2.5);
            scene.primitives.push(Primitive {
                shape: Shape::Sphere { radius: 0.9 },
                center: Vec3::new(0.0, 0.0, 0.3),
                density: 10.0,
                color: ColorSpec::AxisGradient {
                    axis: Axis::Z,
                    lo: Rgb::new(0.9, 0.15, 0.1),
                    hi: Rgb::new(0.1, 0.25, 0.9),
                },
            });
            let satellites = [
                (
                    Vec3::new(1.3, 0.0, 0.15),
                    ColorSpec::Constant(Rgb::new(0.1, 0.85, 0.25)),
                ),
                (
                    Vec3::new(-1.3, 0.0, 0.15),
                    ColorSpec::Constant(Rgb::new(0.95, 0.8, 0.1)),
                ),
                (
                    Vec3::new(0.0, 1.3, 0.15),
                    ColorSpec::Constant(Rgb::new(0.15, 0.75, 0.9)),
                ),
                (
                    Vec3::new(0.0, -1.3, 0.15),
                    ColorSpec::Checker {
                        scale: 0.22,
                        a: Rgb::new(0.9, 0.9, 0.9),
                        b: Rgb::new(0.45, 0.1, 0.5),
                    },
                ),
            ];
            for (center, color) in satellites {
                scene.primitives.push(Primitive {
                    shape: Shape::Sphere { radius: 0.45 },
                    center,
                    density: 10.0,
                    color,
                });
            }
            scene.primitives.push(Primitive {
                shape: Shape::Cuboid {
                    half: Vec3::new(1.55, 1.55, 0.12),
                },
                center: Vec3::new(0.0, 0.0, -0.75),
                density: 10.0,
                color: ColorSpec::Checker {
                    scale: 0.4,
                    a: Rgb::new(0.85, 0.85, 0.8),
                    b: Rgb::new(0.15, 0.15, 0.2),
                },
            });
            scene
        }
        "gradient-sphere" => {
            let mut scene = Scene::empty(Rgb::ZERO, 2.5);
            scene.primitives.push(Primitive {
                shape: Shape::Sphere { radius: 1.0 },
                center: Vec3::ZERO,
                density: 8.0,
                color: ColorSpec::AxisGradient {
                    axis: Axis::Z,
                    lo: Rgb::new(0.9, 0.2, 0.1),
                    hi: Rgb::new(0.1, 0.3, 0.9),
                },
            });
            scene
        }
        other => bail!("unknown preset {other:?} (available: {PRESET_NAMES:?})"),
    };
    scene
        .validate()
        .map_err(|e| anyhow::anyhow!("preset {name} is invalid: {e}"))?;
    Ok(scene)
}
