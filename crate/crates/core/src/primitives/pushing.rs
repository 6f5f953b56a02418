//! Quasi-static pushing of a square slider through one of four sticking side contacts.
//!
//! State `[x, y, θ]` (COM position and orientation), input `[f_n, f_t]` or
//! `[f_n, f_t, Δt]` in the active contact's frame. The body twist follows the
//! ellipsoidal limit surface, `ẋ = R(θ) L Jᵀ f`, integrated with one explicit Euler step.
//!
//! Modes: 0 = left side, 1 = bottom side, 2 = right side, 3 = top side.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{perp, twist_rotation};
use crate::constraints::InputConstraintSet;
use crate::trajectory::{DynamicsModel, ModeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PushingParams {
    /// Half the side length of the square slider (m).
    pub half_length: f64,
    pub mass: f64,
    /// Pusher–object friction coefficient.
    pub mu_contact: f64,
    /// Object–support friction coefficient.
    pub mu_ground: f64,
    /// Upper bound on the normal contact force (N).
    pub n_max: f64,
    /// Fixed step length (s), used unless `timestep_bounds` is set.
    pub dt: f64,
    pub gravity: f64,
    /// `m_max / (f_max · half_length)`.
    pub moment_ratio: f64,
    /// When set, Δt becomes the third input with these bounds (s).
    pub timestep_bounds: Option<(f64, f64)>,
}

impl Default for PushingParams {
    fn default() -> Self {
        Self {
            half_length: 0.045,
            mass: 1.0,
            mu_contact: 0.3,
            mu_ground: 0.35,
            n_max: 0.5,
            dt: 0.5,
            gravity: 9.81,
            moment_ratio: 0.6,
            timestep_bounds: None,
        }
    }
}

impl PushingParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("half_length", self.half_length),
            ("mass", self.mass),
            ("mu_contact", self.mu_contact),
            ("mu_ground", self.mu_ground),
            ("n_max", self.n_max),
            ("dt", self.dt),
            ("gravity", self.gravity),
            ("moment_ratio", self.moment_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("pushing.{name} must be positive, got {v}"));
            }
        }
        if let Some((lo, hi)) = self.timestep_bounds {
            if !(lo > 0.0 && hi >= lo) {
                return Err(format!("pushing.timestep_bounds invalid: ({lo}, {hi})"));
            }
        }
        Ok(())
    }

    pub fn max_friction_force(&self) -> f64 {
        self.mu_ground * self.mass * self.gravity
    }

    pub fn max_friction_moment(&self) -> f64 {
        self.moment_ratio * self.half_length * self.max_friction_force()
    }
}

/// `L = diag(1/f_max², 1/f_max², 1/m_max²)`.
pub fn limit_surface_matrix(params: &PushingParams) -> Matrix3<f64> {
    let f = params.max_friction_force();
    let m = params.max_friction_moment();
    Matrix3::from_diagonal(&Vector3::new(1.0 / (f * f), 1.0 / (f * f), 1.0 / (m * m)))
}

/// Contact point (body frame) of side `mode`.
pub fn contact_point(mode: ModeId, params: &PushingParams) -> Vector2<f64> {
    let a = params.half_length;
    match mode {
        0 => Vector2::new(-a, 0.0),
        1 => Vector2::new(0.0, -a),
        2 => Vector2::new(a, 0.0),
        3 => Vector2::new(0.0, a),
        _ => panic!("pushing has contacts 0..=3, got {mode}"),
    }
}

/// Inward normal and tangent (normal rotated +90°) of side `mode`, body frame.
pub fn contact_frame(mode: ModeId) -> (Vector2<f64>, Vector2<f64>) {
    let n = match mode {
        0 => Vector2::new(1.0, 0.0),
        1 => Vector2::new(0.0, 1.0),
        2 => Vector2::new(-1.0, 0.0),
        3 => Vector2::new(0.0, -1.0),
        _ => panic!("pushing has contacts 0..=3, got {mode}"),
    };
    (n, perp(&n))
}

/// Maps body twist to the body-frame velocity of the contact point.
pub fn contact_jacobian(mode: ModeId, params: &PushingParams) -> Matrix2x3<f64> {
    let p = contact_point(mode, params);
    Matrix2x3::new(1.0, 0.0, -p.y, 0.0, 1.0, p.x)
}

/// Body-frame contact force for contact-frame input `(f_n, f_t)`.
fn body_force(u: &DVector<f64>, mode: ModeId) -> Vector2<f64> {
    let (n, t) = contact_frame(mode);
    n * u[0] + t * u[1]
}

/// `L Jᵀ` mapped onto the `(f_n, f_t)` inputs: body twist per unit input.
fn body_twist_map(mode: ModeId, params: &PushingParams) -> nalgebra::Matrix3x2<f64> {
    let (n, t) = contact_frame(mode);
    let basis = nalgebra::Matrix2::from_columns(&[n, t]);
    limit_surface_matrix(params) * contact_jacobian(mode, params).transpose() * basis
}

fn step_length(u: &DVector<f64>, params: &PushingParams) -> f64 {
    if params.timestep_bounds.is_some() {
        u[2]
    } else {
        params.dt
    }
}

/// Body twist produced by input `u` at contact `mode`.
pub fn body_twist(u: &DVector<f64>, mode: ModeId, params: &PushingParams) -> Vector3<f64> {
    let f = body_force(u, mode);
    limit_surface_matrix(params) * contact_jacobian(mode, params).transpose() * f
}

pub fn pushing_step(x: &DVector<f64>, u: &DVector<f64>, mode: ModeId, params: &PushingParams) -> DVector<f64> {
    let twist = twist_rotation(x[2]) * body_twist(u, mode, params);
    let dt = step_length(u, params);
    DVector::from_vec(vec![x[0] + dt * twist[0], x[1] + dt * twist[1], x[2] + dt * twist[2]])
}

/// Friction triangle on `(f_n, f_t)`, plus Δt bounds in variable-timestep mode.
pub fn pushing_constraints(mode: ModeId, params: &PushingParams) -> InputConstraintSet {
    assert!(mode < 4, "pushing has contacts 0..=3, got {mode}");
    let m = if params.timestep_bounds.is_some() { 3 } else { 2 };
    let cons = InputConstraintSet::unconstrained(m).with_friction_cone(0, 1, params.mu_contact, params.n_max);
    match params.timestep_bounds {
        Some((lo, hi)) => cons.with_bounds(2, lo, hi),
        None => cons,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PushingModel {
    pub params: PushingParams,
}

impl PushingModel {
    pub fn new(params: PushingParams) -> Self {
        Self { params }
    }

    /// World position of the active contact point at state `x`.
    pub fn contact_point_world(&self, x: &DVector<f64>, mode: ModeId) -> Vector2<f64> {
        let p = contact_point(mode, &self.params);
        Vector2::new(x[0], x[1]) + super::rotation(x[2]) * p
    }
}

impl DynamicsModel for PushingModel {
    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        if self.params.timestep_bounds.is_some() {
            3
        } else {
            2
        }
    }

    fn modes(&self) -> Vec<ModeId> {
        vec![0, 1, 2, 3]
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, mode: ModeId) -> DVector<f64> {
        pushing_step(x, u, mode, &self.params)
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>, mode: ModeId) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let theta = x[2];
        let dt = step_length(u, &self.params);
        let body = body_twist(u, mode, &self.params);
        let (s, c) = theta.sin_cos();
        let mut f_x = DMatrix::identity(3, 3);
        f_x[(0, 2)] += dt * (-s * body[0] - c * body[1]);
        f_x[(1, 2)] += dt * (c * body[0] - s * body[1]);

        let world_map = twist_rotation(theta) * body_twist_map(mode, &self.params);
        let mut f_u = DMatrix::zeros(3, self.input_dim());
        for i in 0..3 {
            for j in 0..2 {
                f_u[(i, j)] = dt * world_map[(i, j)];
            }
        }
        if self.params.timestep_bounds.is_some() {
            let world = twist_rotation(theta) * body;
            for i in 0..3 {
                f_u[(i, 2)] = world[i];
            }
        }
        Some((f_x, f_u))
    }

    fn constraints(&self, _x: &DVector<f64>, mode: ModeId) -> InputConstraintSet {
        pushing_constraints(mode, &self.params)
    }

    /// Zero body twist: the only force is zero, so rest is a fixed point.
    fn equilibrium_constraints(&self, x: &DVector<f64>, mode: ModeId) -> InputConstraintSet {
        let map = body_twist_map(mode, &self.params);
        let m = self.input_dim();
        let mut rows = DMatrix::zeros(3, m);
        for i in 0..3 {
            for j in 0..2 {
                rows[(i, j)] = map[(i, j)];
            }
        }
        self.constraints(x, mode).with_equalities(&rows, &DVector::zeros(3))
    }

    fn step_duration(&self, u: &DVector<f64>) -> f64 {
        step_length(u, &self.params)
    }

    fn angular_coordinates(&self) -> Vec<usize> {
        vec![2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::cross;
    use crate::qp::check_feasible;
    use crate::trajectory::finite_difference_jacobians;
    use approx::assert_relative_eq;

    fn unit_params() -> PushingParams {
        // f_max = 1 and m_max = 1.
        PushingParams {
            mass: 1.0,
            gravity: 1.0,
            mu_ground: 1.0,
            half_length: 1.0 / 0.6,
            ..PushingParams::default()
        }
    }

    #[test]
    fn unit_limit_surface_is_identity() {
        assert_relative_eq!(
            limit_surface_matrix(&unit_params()),
            Matrix3::identity(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn doubling_support_friction_quarters_l() {
        let p = PushingParams::default();
        let doubled = PushingParams {
            mu_ground: 2.0 * p.mu_ground,
            ..p.clone()
        };
        assert_relative_eq!(
            limit_surface_matrix(&doubled),
            limit_surface_matrix(&p) * 0.25,
            max_relative = 1e-12
        );
    }

    #[test]
    fn jacobian_structure() {
        let p = PushingParams::default();
        let j = contact_jacobian(0, &p);
        assert_eq!(j.column(2).into_owned(), Vector2::new(0.0, -p.half_length));
        let at_origin = PushingParams {
            half_length: 0.0,
            ..p.clone()
        };
        assert_eq!(
            contact_jacobian(1, &at_origin),
            Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
        );
    }

    #[test]
    fn jacobian_transpose_torque_is_cross_product() {
        let p = PushingParams::default();
        for mode in 0..4 {
            for (fx, fy) in [(0.3, -0.2), (1.0, 0.7), (-0.4, 0.05)] {
                let f = Vector2::new(fx, fy);
                let wrench = contact_jacobian(mode, &p).transpose() * f;
                assert_relative_eq!(wrench[2], cross(&contact_point(mode, &p), &f), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn zero_force_is_fixed_point() {
        let p = PushingParams::default();
        let x = DVector::from_vec(vec![0.1, -0.2, 0.7]);
        for mode in 0..4 {
            assert_eq!(pushing_step(&x, &DVector::zeros(2), mode, &p), x);
        }
    }

    #[test]
    fn central_push_does_not_rotate() {
        let p = PushingParams::default();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.4]);
        let next = pushing_step(&x, &DVector::from_vec(vec![0.5, 0.0]), 0, &p);
        assert_eq!(next[2], 0.4);
        // Motion along the body x axis, rotated into the world.
        assert_relative_eq!(next[1] / next[0], 0.4_f64.tan(), epsilon = 1e-12);
    }

    #[test]
    fn rotation_sign_follows_torque() {
        let p = PushingParams::default();
        let x = DVector::zeros(3);
        for mode in 0..4 {
            for ft in [-0.1, 0.1] {
                let u = DVector::from_vec(vec![0.4, ft]);
                let (n, t) = contact_frame(mode);
                let torque = cross(&contact_point(mode, &p), &(n * 0.4 + t * ft));
                let next = pushing_step(&x, &u, mode, &p);
                assert_eq!(next[2].signum(), torque.signum());
            }
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        for bounds in [None, Some((0.1, 1.0))] {
            let model = PushingModel::new(PushingParams {
                timestep_bounds: bounds,
                ..PushingParams::default()
            });
            let m = model.input_dim();
            for (i, mode) in (0..4).cycle().take(20).enumerate() {
                let s = i as f64;
                let x = DVector::from_vec(vec![0.1 * s.sin(), -0.05 * s, 0.37 * s - 2.0]);
                let mut u = DVector::from_vec(vec![0.3 + 0.01 * s, 0.05 * (s * 1.3).cos()]);
                if m == 3 {
                    u = DVector::from_vec(vec![u[0], u[1], 0.2 + 0.03 * s]);
                }
                let (ax, au) = model.jacobians(&x, &u, mode).unwrap();
                let (fx, fu) = finite_difference_jacobians(&model, &x, &u, mode);
                assert!((ax - fx).amax() <= 1e-4 * (1.0 + fu.amax()));
                assert!((au - &fu).amax() <= 1e-4 * fu.amax().max(1e-12));
            }
        }
    }

    #[test]
    fn identity_state_jacobian_at_zero_force() {
        let model = PushingModel::new(PushingParams::default());
        let (fx, _) = finite_difference_jacobians(&model, &DVector::zeros(3), &DVector::zeros(2), 0);
        assert_relative_eq!(fx, DMatrix::identity(3, 3), epsilon = 1e-9);
    }

    #[test]
    fn constraint_examples() {
        let p = PushingParams::default();
        let cons = pushing_constraints(0, &p);
        assert_eq!(cons.num_inequalities(), 4);
        assert_eq!(cons.num_equalities(), 0);
        assert!(check_feasible(&cons, &DVector::from_vec(vec![0.5, 0.15]), 1e-12));
        assert!(!check_feasible(&cons, &DVector::from_vec(vec![0.0, 0.01]), 0.0));
        assert!(!check_feasible(&cons, &DVector::from_vec(vec![-0.1, 0.0]), 0.0));

        let variable = pushing_constraints(
            2,
            &PushingParams {
                timestep_bounds: Some((0.1, 1.0)),
                ..p
            },
        );
        assert_eq!(variable.num_inequalities(), 6);
        assert!(!check_feasible(&variable, &DVector::from_vec(vec![0.2, 0.0, 1.7]), 0.0));
    }
}
