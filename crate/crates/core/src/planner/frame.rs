//! Payload-aligned frame: a yaw rotation about the payload's vertical axis
//! that maps the hook normal onto `+x`, so the approach plane becomes `x-z`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::so3::rot_z;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayloadFrame {
    /// Heading of the hook normal in the world frame.
    pub yaw: f64,
    /// Payload position projected onto `z = 0`.
    pub origin: Vector3<f64>,
}

impl PayloadFrame {
    pub fn new(payload: &Vector3<f64>, n_hook: &Vector3<f64>) -> Self {
        Self { yaw: n_hook.y.atan2(n_hook.x), origin: Vector3::new(payload.x, payload.y, 0.0) }
    }

    /// Rotation taking local vectors to world vectors.
    pub fn rotation(&self) -> Matrix3<f64> {
        rot_z(self.yaw)
    }

    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * (p - self.origin)
    }

    pub fn to_world(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * q + self.origin
    }

    pub fn vector_to_local(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * v
    }

    pub fn vector_to_world(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_hook_at_origin_is_identity() {
        let f = PayloadFrame::new(&Vector3::zeros(), &Vector3::x());
        let p = Vector3::new(0.3, -1.0, 2.0);
        assert!((f.to_local(&p) - p).norm() < 1e-15);
    }

    #[test]
    fn hook_normal_maps_to_x_axis() {
        let f = PayloadFrame::new(&Vector3::new(1.0, 2.0, 0.1), &Vector3::y());
        assert!((f.yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((f.vector_to_local(&Vector3::y()) - Vector3::x()).norm() < 1e-15);
        let payload_local = f.to_local(&Vector3::new(1.0, 2.0, 0.1));
        assert!((payload_local - Vector3::new(0.0, 0.0, 0.1)).norm() < 1e-15);
    }

    #[test]
    fn round_trip() {
        let n = Vector3::new(0.6, -0.8, 0.0);
        let f = PayloadFrame::new(&Vector3::new(-2.0, 0.5, 0.3), &n);
        let p = Vector3::new(0.7, 1.9, -0.4);
        assert!((f.to_world(&f.to_local(&p)) - p).norm() < 1e-12);
    }
}
