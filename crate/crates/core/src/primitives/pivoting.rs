//! Dynamic pivoting of a rectangle in the gravity plane about its lower-left corner.
//!
//! State `[θ, θ̇]`, input `[f_n, f_t, g_t, g_n]`: the active corner force in its
//! contact frame (inward 45° bisector normal) followed by the ground reaction at the
//! pivot in the world frame (tangent along x, normal along +y).
//!
//! Body frame is centered at the COM with the pivot corner P0 at `(-w/2, -h/2)`.
//! Modes: 1 = lower-right corner, 2 = upper-right, 3 = upper-left.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{cross, perp, rotation};
use crate::constraints::InputConstraintSet;
use crate::trajectory::{DynamicsModel, ModeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PivotingParams {
    pub width: f64,
    pub height: f64,
    pub mass: f64,
    /// Friction coefficient shared by the corner contact and the ground.
    pub mu: f64,
    /// Upper bound on every normal force (N).
    pub n_max: f64,
    pub dt: f64,
    pub gravity: f64,
}

impl Default for PivotingParams {
    fn default() -> Self {
        Self {
            width: 0.1,
            height: 0.1,
            mass: 0.1,
            mu: 0.5,
            n_max: 10.0,
            dt: 0.05,
            gravity: 9.81,
        }
    }
}

impl PivotingParams {
    /// Rectangle of the given height and `width = aspect * height`.
    pub fn with_aspect(aspect: f64, height: f64) -> Self {
        Self {
            width: aspect * height,
            height,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("width", self.width),
            ("height", self.height),
            ("mass", self.mass),
            ("mu", self.mu),
            ("n_max", self.n_max),
            ("dt", self.dt),
            ("gravity", self.gravity),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("pivoting.{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Moment of inertia about the COM of a uniform rectangle.
    pub fn inertia(&self) -> f64 {
        self.mass * (self.width * self.width + self.height * self.height) / 12.0
    }

    /// Pivot corner relative to the COM, body frame.
    pub fn pivot(&self) -> Vector2<f64> {
        Vector2::new(-0.5 * self.width, -0.5 * self.height)
    }

    /// COM relative to the pivot, body frame.
    pub fn com_offset(&self) -> Vector2<f64> {
        -self.pivot()
    }

    /// Orientation at which the COM sits directly above the pivot.
    pub fn balance_angle(&self) -> f64 {
        std::f64::consts::FRAC_PI_2 - self.height.atan2(self.width)
    }

    fn gravity_vector(&self) -> Vector2<f64> {
        Vector2::new(0.0, -self.gravity)
    }
}

/// Corner position relative to the COM, body frame.
pub fn corner(mode: ModeId, params: &PivotingParams) -> Vector2<f64> {
    let (hw, hh) = (0.5 * params.width, 0.5 * params.height);
    match mode {
        1 => Vector2::new(hw, -hh),
        2 => Vector2::new(hw, hh),
        3 => Vector2::new(-hw, hh),
        _ => panic!("pivoting has contacts 1..=3, got {mode}"),
    }
}

/// Inward bisector normal and tangent (normal rotated +90°) at corner `mode`, body frame.
pub fn corner_frame(mode: ModeId) -> (Vector2<f64>, Vector2<f64>) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let n = match mode {
        1 => Vector2::new(-s, s),
        2 => Vector2::new(-s, -s),
        3 => Vector2::new(s, -s),
        _ => panic!("pivoting has contacts 1..=3, got {mode}"),
    };
    (n, perp(&n))
}

/// Row vector `c` with `θ̈ = c · u` at orientation `θ`.
fn accel_row(theta: f64, mode: ModeId, params: &PivotingParams) -> [f64; 4] {
    let r = corner(mode, params);
    let (n, t) = corner_frame(mode);
    let r0 = rotation(theta) * params.pivot();
    let inv_i = 1.0 / params.inertia();
    [
        inv_i * cross(&r, &n),
        inv_i * cross(&r, &t),
        inv_i * cross(&r0, &Vector2::new(1.0, 0.0)),
        inv_i * cross(&r0, &Vector2::new(0.0, 1.0)),
    ]
}

/// Angular acceleration from moments about the COM.
///
/// Gravity acts at the COM and contributes no moment here; its effect enters through
/// the ground reaction, which the momentum equality ties to gravity.
pub fn pivoting_accel(x: &DVector<f64>, u: &DVector<f64>, mode: ModeId, params: &PivotingParams) -> f64 {
    accel_row(x[0], mode, params)
        .iter()
        .zip(u.iter())
        .map(|(c, u)| c * u)
        .sum()
}

pub fn pivoting_step(x: &DVector<f64>, u: &DVector<f64>, mode: ModeId, params: &PivotingParams) -> DVector<f64> {
    let accel = pivoting_accel(x, u, mode, params);
    DVector::from_vec(vec![x[0] + params.dt * x[1], x[1] + params.dt * accel])
}

/// World-frame map from `u` to the net contact force on the body (2×4).
fn force_map(theta: f64, mode: ModeId) -> Matrix2<f64> {
    // Only the corner block; the ground reaction enters with identity.
    let (n, t) = corner_frame(mode);
    let rot = rotation(theta);
    Matrix2::from_columns(&[rot * n, rot * t])
}

/// Linear momentum balance `m a_c = F(u) + m g`, with the COM acceleration written
/// in terms of `θ̈(u)` and `θ̇`, rearranged to `G u = h`.
fn momentum_equality(x: &DVector<f64>, mode: ModeId, params: &PivotingParams) -> (DMatrix<f64>, DVector<f64>) {
    let (theta, omega) = (x[0], x[1]);
    let m = params.mass;
    let rc = rotation(theta) * params.com_offset();
    let lever = perp(&rc);
    let c = accel_row(theta, mode, params);
    let corner_force = force_map(theta, mode);
    let mut g = DMatrix::zeros(2, 4);
    for i in 0..2 {
        for j in 0..4 {
            let direct = match j {
                0 | 1 => corner_force[(i, j)],
                2 => f64::from(i == 0),
                _ => f64::from(i == 1),
            };
            g[(i, j)] = m * lever[i] * c[j] - direct;
        }
    }
    let h = m * params.gravity_vector() + m * omega * omega * rc;
    (g, DVector::from_vec(vec![h.x, h.y]))
}

/// Friction triangles on the corner and ground contacts plus the momentum equality.
pub fn pivoting_constraints(x: &DVector<f64>, mode: ModeId, params: &PivotingParams) -> InputConstraintSet {
    let (g, h) = momentum_equality(x, mode, params);
    InputConstraintSet::unconstrained(4)
        .with_friction_cone(0, 1, params.mu, params.n_max)
        .with_friction_cone(3, 2, params.mu, params.n_max)
        .with_equalities(&g, &h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PivotingModel {
    pub params: PivotingParams,
}

impl PivotingModel {
    pub fn new(params: PivotingParams) -> Self {
        Self { params }
    }
}

impl DynamicsModel for PivotingModel {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        4
    }

    fn modes(&self) -> Vec<ModeId> {
        vec![1, 2, 3]
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, mode: ModeId) -> DVector<f64> {
        pivoting_step(x, u, mode, &self.params)
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>, mode: ModeId) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let dt = self.params.dt;
        let inv_i = 1.0 / self.params.inertia();
        let dr0 = perp(&(rotation(x[0]) * self.params.pivot()));
        let daccel = inv_i * cross(&dr0, &Vector2::new(u[2], u[3]));
        let f_x = DMatrix::from_row_slice(2, 2, &[1.0, dt, dt * daccel, 1.0]);
        let c = accel_row(x[0], mode, &self.params);
        let mut f_u = DMatrix::zeros(2, 4);
        for j in 0..4 {
            f_u[(1, j)] = dt * c[j];
        }
        Some((f_x, f_u))
    }

    fn constraints(&self, x: &DVector<f64>, mode: ModeId) -> InputConstraintSet {
        pivoting_constraints(x, mode, &self.params)
    }

    /// Rest at `θ`: momentum balance with `θ̇ = 0` and zero angular acceleration.
    fn equilibrium_constraints(&self, x: &DVector<f64>, mode: ModeId) -> InputConstraintSet {
        let at_rest = DVector::from_vec(vec![x[0], 0.0]);
        let c = accel_row(x[0], mode, &self.params);
        pivoting_constraints(&at_rest, mode, &self.params)
            .with_equalities(&DMatrix::from_row_slice(1, 4, &c), &DVector::zeros(1))
    }

    fn step_duration(&self, _u: &DVector<f64>) -> f64 {
        self.params.dt
    }

    fn angular_coordinates(&self) -> Vec<usize> {
        vec![0]
    }
}
