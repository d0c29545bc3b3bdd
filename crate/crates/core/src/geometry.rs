use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{wrap_deg, Scalar};

/// Displacements shorter than this have no defined bearing.
pub const DEGENERATE_DISPLACEMENT: f64 = 1e-9;

/// A 3-vector in world coordinates (x east, y north, z up).
///
/// Serialized as a plain `[x, y, z]` array so scenario files stay terse.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[T; 3]", into = "[T; 3]")]
#[serde(bound = "T: Scalar")]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> From<[T; 3]> for Vec3<T> {
    fn from([x, y, z]: [T; 3]) -> Self {
        Self { x, y, z }
    }
}

impl<T: Scalar> From<Vec3<T>> for [T; 3] {
    fn from(v: Vec3<T>) -> Self {
        [v.x, v.y, v.z]
    }
}

impl<T: Scalar> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn horizontal_norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> T {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Returns the unit vector, or `None` when the norm is below `eps`.
    pub fn normalized(self, eps: T) -> Option<Self> {
        let n = self.norm();
        (n > eps).then(|| self / n)
    }

    /// Rescales the vector so its norm does not exceed `max`.
    pub fn clamp_norm(self, max: T) -> Self {
        let n = self.norm();
        if n > max && n > T::zero() {
            self * (max / n)
        } else {
            self
        }
    }

    pub fn with_z(self, z: T) -> Self {
        Self { z, ..self }
    }

    pub fn componentwise_min(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn componentwise_max(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn cast<U: Scalar>(self) -> Vec3<U> {
        Vec3::new(U::lit(self.x.as_f64()), U::lit(self.y.as_f64()), U::lit(self.z.as_f64()))
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Scalar> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Scalar> Div<T> for Vec3<T> {
    type Output = Self;
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

impl<T: Scalar> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Scalar> SubAssign for Vec3<T> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Scalar> std::iter::Sum for Vec3<T> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), |acc, v| acc + v)
    }
}

/// Compass-free bearing of a horizontal displacement, in degrees within (-180, 180].
///
/// 0° points along +x and angles grow counterclockwise.
pub fn bearing_deg<T: Scalar>(dx: T, dy: T) -> Result<T> {
    if dx.hypot(dy) <= T::lit(DEGENERATE_DISPLACEMENT) {
        return Err(Error::DegenerateDisplacement);
    }
    Ok(wrap_deg(dy.atan2(dx).to_degrees()))
}

/// Bearing of the horizontal part of `v`.
pub fn bearing_of<T: Scalar>(v: Vec3<T>) -> Result<T> {
    bearing_deg(v.x, v.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn bearing_examples() {
        assert_abs_diff_eq!(bearing_deg(1.0, 1.0).unwrap(), 45.0, epsilon = 1e-12);
        assert_eq!(bearing_deg(1.0, 0.0).unwrap(), 0.0);
        assert_eq!(bearing_deg(-1.0, 0.0).unwrap(), 180.0);
        assert_eq!(bearing_deg(-1.0, -0.0).unwrap(), 180.0);
    }

    #[test]
    fn bearing_rejects_zero_displacement() {
        assert!(matches!(bearing_deg(0.0, 1e-12), Err(Error::DegenerateDisplacement)));
    }

    #[test]
    fn clamp_norm_rescales_only_when_needed() {
        let v = Vec3::new(3.0, 4.0, 0.0);
        assert_eq!(v.clamp_norm(10.0), v);
        assert_abs_diff_eq!(v.clamp_norm(1.0).norm(), 1.0, epsilon = 1e-15);
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        wrap_deg(a - b).abs()
    }

    proptest! {
        #[test]
        fn bearing_is_rotation_consistent(
            x in -100.0..100.0f64, y in -100.0..100.0f64, phi in -std::f64::consts::PI..std::f64::consts::PI
        ) {
            prop_assume!(x.hypot(y) > 1e-3);
            let (s, c) = phi.sin_cos();
            let rotated = bearing_deg(c * x - s * y, s * x + c * y).unwrap();
            let expected = wrap_deg(bearing_deg(x, y).unwrap() + phi.to_degrees());
            prop_assert!(angle_diff(rotated, expected) < 1e-9);
        }
    }
}
