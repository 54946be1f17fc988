//! Planar vectors, poses, and angle arithmetic.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2D point/vector in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn add(self, other: Vec2) -> Vec2 {
        Vec2::new(self.x + other.x, self.y + other.y)
    }

    pub fn sub(self, other: Vec2) -> Vec2 {
        Vec2::new(self.x - other.x, self.y - other.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        self.sub(other).norm()
    }

    /// Angle of the vector in [-pi, pi).
    pub fn angle(self) -> f64 {
        wrap_angle(self.y.atan2(self.x))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Normalize an angle to [-pi, pi).
pub fn wrap_angle(theta: f64) -> f64 {
    if !theta.is_finite() {
        return 0.0;
    }
    let mut a = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can land exactly on +pi through rounding.
    if a >= PI {
        a -= 2.0 * PI;
    }
    a
}

/// Smallest signed difference a - b on the circle, in [-pi, pi).
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Agent or camera pose: 3D position (z fixed to 0 in the planar world)
/// plus heading. Yaw is normalized to [-pi, pi) on construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub yaw: f64,
}

impl Pose {
    pub fn new(position: [f64; 3], yaw: f64) -> Result<Self> {
        if !position.iter().all(|c| c.is_finite()) || !yaw.is_finite() {
            return Err(Error::DegenerateVector(
                "pose components must be finite".into(),
            ));
        }
        Ok(Pose {
            position,
            yaw: wrap_angle(yaw),
        })
    }

    pub fn planar(x: f64, y: f64, yaw: f64) -> Result<Self> {
        Pose::new([x, y, 0.0], yaw)
    }

    /// Planar projection of the position.
    pub fn xy(&self) -> Vec2 {
        Vec2::new(self.position[0], self.position[1])
    }

    /// Euclidean distance between 3D positions.
    pub fn distance(&self, other: &Pose) -> f64 {
        let dx = self.position[0] - other.position[0];
        let dy = self.position[1] - other.position[1];
        let dz = self.position[2] - other.position[2];
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Circular variance of a set of angles: 1 - |mean unit vector|.
/// 0 when all angles coincide, 1 when they cancel out.
pub fn circular_variance(yaws: &[f64]) -> f64 {
    if yaws.is_empty() {
        return 0.0;
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for &yaw in yaws {
        sx += yaw.cos();
        sy += yaw.sin();
    }
    let n = yaws.len() as f64;
    1.0 - (sx / n).hypot(sy / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - (-PI)).abs() < 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_angle(-PI) - (-PI)).abs() < 1e-12);
        // pi maps to -pi (half-open interval).
        assert!(wrap_angle(PI) < PI);
    }

    #[test]
    fn pose_normalizes_yaw() {
        let p = Pose::planar(1.0, 2.0, 2.5 * PI).unwrap();
        assert!((p.yaw - 0.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn pose_rejects_non_finite() {
        assert!(Pose::planar(f64::NAN, 0.0, 0.0).is_err());
        assert!(Pose::planar(0.0, 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn circular_variance_extremes() {
        assert!((circular_variance(&[0.3, 0.3, 0.3]) - 0.0).abs() < 1e-12);
        assert!((circular_variance(&[0.0, PI]) - 1.0).abs() < 1e-12);
        let quarter = circular_variance(&[0.0, 0.5 * PI]);
        assert!((quarter - (1.0 - (0.5f64).hypot(0.5))).abs() < 1e-12);
    }
}
