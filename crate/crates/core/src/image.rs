//! In-memory image buffers (RGB and scalar), row-major.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::CameraPose;
use crate::math::Rgb;

/// Row-major H x W buffer of RGB values in scene-linear `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf {
    pub width: u32,
    pub height: u32,
    data: Vec<Rgb>,
}

impl ImageBuf {
    pub fn new(width: u32, height: u32) -> Self {
        ImageBuf {
            width,
            height,
            data: vec![Rgb::ZERO; (width as usize) * (height as usize)],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<Rgb>) -> Self {
        assert_eq!(data.len(), (width as usize) * (height as usize));
        ImageBuf {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn index(&self, px: u32, py: u32) -> usize {
        debug_assert!(px < self.width && py < self.height);
        (py as usize) * (self.width as usize) + px as usize
    }

    #[inline]
    pub fn get(&self, px: u32, py: u32) -> Rgb {
        self.data[self.index(px, py)]
    }

    #[inline]
    pub fn set(&mut self, px: u32, py: u32, value: Rgb) {
        let i = self.index(px, py);
        self.data[i] = value;
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Row-major H x W buffer of scalars (variance maps, grayscale renders).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarImage {
    pub width: u32,
    pub height: u32,
    data: Vec<f64>,
}

impl ScalarImage {
    pub fn new(width: u32, height: u32) -> Self {
        ScalarImage {
            width,
            height,
            data: vec![0.0; (width as usize) * (height as usize)],
        }
    }

    #[inline]
    pub fn get(&self, px: u32, py: u32) -> f64 {
        self.data[(py as usize) * (self.width as usize) + px as usize]
    }

    #[inline]
    pub fn set(&mut self, px: u32, py: u32, value: f64) {
        self.data[(py as usize) * (self.width as usize) + px as usize] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// An image together with the camera pose it was captured or rendered from.
#[derive(Clone, Debug)]
pub struct PosedImage {
    pub pose: CameraPose,
    pub pixels: ImageBuf,
}

impl PosedImage {
    /// Dimensions of the pixel buffer match the pose.
    pub fn is_consistent(&self) -> bool {
        self.pixels.width == self.pose.width && self.pixels.height == self.pose.height
    }
}
