//! Concrete contact models: quasi-static planar pushing and dynamic planar pivoting.

mod pivoting;
mod pushing;

pub use pivoting::{
    corner, corner_frame, pivoting_accel, pivoting_constraints, pivoting_step, PivotingModel, PivotingParams,
};
pub use pushing::{
    body_twist, contact_frame, contact_jacobian, contact_point, limit_surface_matrix, pushing_constraints,
    pushing_step, PushingModel, PushingParams,
};

use nalgebra::{Matrix2, Matrix3, Vector2};

/// Planar rotation by `theta`.
pub fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Rotation acting on a planar twist `(v_x, v_y, ω)`.
pub fn twist_rotation(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Scalar planar cross product `a × b`.
pub(crate) fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// `a` rotated by +90°.
pub(crate) fn perp(a: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-a.y, a.x)
}
