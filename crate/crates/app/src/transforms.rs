//! Ingestion of the common `transforms.json` camera manifest, so folders of
//! externally posed images can replace the simulator.
//!
//! The manifest holds a shared horizontal field of view and one 4x4
//! camera-to-world matrix per frame, with the camera looking along its local
//! `-z`; `file_path` entries are resolved relative to the manifest and get a
//! `.png` extension when they have none.

use std::path::Path;

use anerf_core::camera::CameraPose;
use anerf_core::image::PosedImage;
use anerf_core::math::{Mat3, Vec3};
use anyhow::{bail, Context, Result};
use serde::Deserialize;

use crate::image_io;

#[derive(Debug, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    frames: Vec<Frame>,
}

#[derive(Debug, Deserialize)]
struct Frame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

fn orthonormalized(m: Mat3) -> Mat3 {
    // Gram-Schmidt; manifests written with limited precision drift a little.
    let x = m.col(0).normalized();
    let mut y = m.col(1) - x * x.dot(m.col(1));
    y = y.normalized();
    let z = x.cross(y);
    Mat3::from_cols(x, y, z)
}

/// Loads every frame of a manifest as a posed image.
pub fn load_transforms_dataset(
    manifest: &Path,
    t_near: f64,
    t_far: f64,
) -> Result<Vec<PosedImage>> {
    let text = std::fs::read_to_string(manifest)
        .with_context(|| format!("reading {}", manifest.display()))?;
    let file: TransformsFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest.display()))?;
    if file.frames.is_empty() {
        bail!("manifest has no frames");
    }
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::with_capacity(file.frames.len());
    for frame in &file.frames {
        let mut rel = frame.file_path.clone();
        if Path::new(&rel).extension().is_none() {
            rel.push_str(".png");
        }
        let image_path = base.join(rel);
        let pixels = image_io::read_png(&image_path)?;
        let m = &frame.transform_matrix;
        let rotation = orthonormalized(Mat3::from_cols(
            Vec3::new(m[0][0], m[1][0], m[2][0]),
            Vec3::new(m[0][1], m[1][1], m[2][1]),
            Vec3::new(m[0][2], m[1][2], m[2][2]),
        ));
        let position = Vec3::new(m[0][3], m[1][3], m[2][3]);
        let focal = 0.5 * pixels.width as f64 / (0.5 * file.camera_angle_x).tan();
        let pose = CameraPose {
            position,
            rotation,
            focal,
            width: pixels.width,
            height: pixels.height,
            t_near,
            t_far,
        };
        pose.validate()
            .map_err(|e| anyhow::anyhow!("frame {:?}: {e}", frame.file_path))?;
        out.push(PosedImage { pose, pixels });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use anerf_core::camera::Intrinsics;
    use anerf_core::image::ImageBuf;
    use anerf_core::math::Rgb;
    use tempfile::tempdir;

    #[test]
    fn manifest_round_trips_poses_and_images() {
        let dir = tempdir().unwrap();
        // Build a reference pose, export its matrix + image, reload.
        let pose = CameraPose::look_at(
            Vec3::new(2.0, -3.0, 1.5),
            Vec3::ZERO,
            Vec3::new(0.0, 0.0, 1.0),
            Intrinsics {
                focal: 0.0, // replaced by the manifest angle below
                width: 8,
                height: 8,
                t_near: 1.0,
                t_far: 5.0,
            },
        );
        let mut img = ImageBuf::new(8, 8);
        for (i, p) in img.pixels_mut().iter_mut().enumerate() {
            *p = Rgb::splat((i % 9) as f64 / 8.0);
        }
        image_io::write_png(&img, &dir.path().join("r_0.png")).unwrap();

        let r = pose.rotation;
        let t = pose.position;
        let matrix = [
            [r.col(0).x, r.col(1).x, r.col(2).x, t.x],
            [r.col(0).y, r.col(1).y, r.col(2).y, t.y],
            [r.col(0).z, r.col(1).z, r.col(2).z, t.z],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let angle_x = 0.8f64;
        let manifest = serde_json::json!({
            "camera_angle_x": angle_x,
            "frames": [{ "file_path": "./r_0", "transform_matrix": matrix }],
        });
        let path = dir.path().join("transforms.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

        let frames = load_transforms_dataset(&path, 1.0, 5.0).unwrap();
        assert_eq!(frames.len(), 1);
        let loaded = &frames[0];
        assert!((loaded.pose.position - pose.position).norm() < 1e-12);
        assert!((loaded.pose.forward() - pose.forward()).norm() < 1e-9);
        let expected_focal = 0.5 * 8.0 / (0.5 * angle_x).tan();
        assert!((loaded.pose.focal - expected_focal).abs() < 1e-9);
        // Pixel data survives the 8-bit round trip.
        for (a, b) in loaded.pixels.pixels().iter().zip(img.pixels()) {
            assert!((a.x - b.x).abs() <= 0.5 / 255.0 + 1e-9);
        }
    }

    #[test]
    fn empty_manifest_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("transforms.json");
        std::fs::write(&path, r#"{"camera_angle_x": 0.7, "frames": []}"#).unwrap();
        assert!(load_transforms_dataset(&path, 1.0, 2.0).is_err());
    }
}
