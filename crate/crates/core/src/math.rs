//! Small fixed-size linear algebra used throughout the crate.

use core::ops::{Add, AddAssign, Div, Index, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar math routed through `libm` when the `std` feature is disabled.
///
/// With `std` enabled these forward to the inherent `f64` methods, which are
/// faster on some targets; both paths agree to the last bit on x86-64.
pub(crate) mod fp {
    #[cfg(feature = "std")]
    mod imp {
        pub fn exp(x: f64) -> f64 {
            x.exp()
        }
        pub fn ln(x: f64) -> f64 {
            x.ln()
        }
        pub fn log10(x: f64) -> f64 {
            x.log10()
        }
        pub fn sqrt(x: f64) -> f64 {
            x.sqrt()
        }
        pub fn sin(x: f64) -> f64 {
            x.sin()
        }
        pub fn cos(x: f64) -> f64 {
            x.cos()
        }
        pub fn floor(x: f64) -> f64 {
            x.floor()
        }
        pub fn round(x: f64) -> f64 {
            x.round()
        }
        pub fn powf(x: f64, e: f64) -> f64 {
            x.powf(e)
        }
        pub fn abs(x: f64) -> f64 {
            x.abs()
        }
        pub fn ln_1p(x: f64) -> f64 {
            x.ln_1p()
        }
    }

    #[cfg(not(feature = "std"))]
    mod imp {
        pub fn exp(x: f64) -> f64 {
            libm::exp(x)
        }
        pub fn ln(x: f64) -> f64 {
            libm::log(x)
        }
        pub fn log10(x: f64) -> f64 {
            libm::log10(x)
        }
        pub fn sqrt(x: f64) -> f64 {
            libm::sqrt(x)
        }
        pub fn sin(x: f64) -> f64 {
            libm::sin(x)
        }
        pub fn cos(x: f64) -> f64 {
            libm::cos(x)
        }
        pub fn floor(x: f64) -> f64 {
            libm::floor(x)
        }
        pub fn round(x: f64) -> f64 {
            libm::round(x)
        }
        pub fn powf(x: f64, e: f64) -> f64 {
            libm::pow(x, e)
        }
        pub fn abs(x: f64) -> f64 {
            libm::fabs(x)
        }
        pub fn ln_1p(x: f64) -> f64 {
            libm::log1p(x)
        }
    }

    pub use imp::*;
}

/// Three-component `f64` vector; doubles as an RGB color.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// RGB color with components nominally in `[0, 1]`.
pub type Rgb = Vec3;

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };
    pub const ONE: Vec3 = Vec3 {
        x: 1.0,
        y: 1.0,
        z: 1.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub const fn splat(v: f64) -> Self {
        Vec3 { x: v, y: v, z: v }
    }

    pub fn dot(self, rhs: Vec3) -> f64 {
        self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn cross(self, rhs: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * rhs.z - self.z * rhs.y,
            y: self.z * rhs.x - self.x * rhs.z,
            z: self.x * rhs.y - self.y * rhs.x,
        }
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        fp::sqrt(self.norm_squared())
    }

    pub fn normalized(self) -> Vec3 {
        self / self.norm()
    }

    /// Component-wise (Hadamard) product.
    pub fn hadamard(self, rhs: Vec3) -> Vec3 {
        Vec3 {
            x: self.x * rhs.x,
            y: self.y * rhs.y,
            z: self.z * rhs.z,
        }
    }

    pub fn clamp01(self) -> Vec3 {
        Vec3 {
            x: self.x.clamp(0.0, 1.0),
            y: self.y.clamp(0.0, 1.0),
            z: self.z.clamp(0.0, 1.0),
        }
    }

    pub fn abs(self) -> Vec3 {
        Vec3 {
            x: fp::abs(self.x),
            y: fp::abs(self.y),
            z: fp::abs(self.z),
        }
    }

    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    pub fn sum(self) -> f64 {
        self.x + self.y + self.z
    }

    pub fn lerp(self, other: Vec3, u: f64) -> Vec3 {
        self * (1.0 - u) + other * u
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, rhs: f64) -> Vec3 {
        Vec3::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        rhs * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, rhs: f64) -> Vec3 {
        Vec3::new(self.x / rhs, self.y / rhs, self.z / rhs)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, rhs: Vec3) {
        *self = *self + rhs;
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, rhs: Vec3) {
        *self = *self - rhs;
    }
}

impl MulAssign<f64> for Vec3 {
    fn mul_assign(&mut self, rhs: f64) {
        *self = *self * rhs;
    }
}

/// Column-major 3x3 matrix; used for camera-to-world rotations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3 {
    pub cols: [Vec3; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        cols: [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ],
    };

    pub const fn from_cols(x: Vec3, y: Vec3, z: Vec3) -> Self {
        Mat3 { cols: [x, y, z] }
    }

    pub fn col(&self, i: usize) -> Vec3 {
        self.cols[i]
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        self.cols[0] * v.x + self.cols[1] * v.y + self.cols[2] * v.z
    }

    pub fn transpose(&self) -> Mat3 {
        Mat3::from_cols(
            Vec3::new(self.cols[0].x, self.cols[1].x, self.cols[2].x),
            Vec3::new(self.cols[0].y, self.cols[1].y, self.cols[2].y),
            Vec3::new(self.cols[0].z, self.cols[1].z, self.cols[2].z),
        )
    }

    pub fn determinant(&self) -> f64 {
        self.cols[0].dot(self.cols[1].cross(self.cols[2]))
    }

    /// True when the matrix is orthonormal with determinant +1 within `tol`.
    pub fn is_rotation(&self, tol: f64) -> bool {
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                if fp::abs(self.cols[i].dot(self.cols[j]) - expected) > tol {
                    return false;
                }
            }
        }
        fp::abs(self.determinant() - 1.0) <= tol
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        self.mul_vec(v)
    }
}
