//! Trajectories, the dynamics interface, quadratic costs, rollout and differentiation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::InputConstraintSet;
use crate::error::{check_dim, Error, Result};

/// Identifier of a contact mode. Each model documents its own numbering.
pub type ModeId = usize;

/// Step size for the central-difference Jacobian fallback.
pub const FD_STEP: f64 = 1e-6;

/// A discrete-time hybrid system `x_{k+1} = f(x_k, u_k, mode_k)` with per-mode
/// linear input constraints.
pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    /// Every mode this model supports.
    fn modes(&self) -> Vec<ModeId>;

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, mode: ModeId) -> DVector<f64>;

    /// Analytic `(f_x, f_u)`; `None` selects the finite-difference fallback.
    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>, _mode: ModeId) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    fn constraints(&self, x: &DVector<f64>, mode: ModeId) -> InputConstraintSet;

    /// Constraints whose solutions hold the system at rest in `mode` at `x`.
    fn equilibrium_constraints(&self, x: &DVector<f64>, mode: ModeId) -> InputConstraintSet;

    /// Duration in seconds of a step taken with input `u`.
    fn step_duration(&self, u: &DVector<f64>) -> f64;

    /// Indices of state coordinates that are angles.
    fn angular_coordinates(&self) -> Vec<usize> {
        Vec::new()
    }
}

/// States `x_0..x_N`, inputs `u_0..u_{N-1}` and the mode active at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub modes: Vec<ModeId>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("trajectory states", self.inputs.len() + 1, self.states.len())?;
        check_dim("trajectory modes", self.inputs.len(), self.modes.len())?;
        Ok(())
    }

    pub fn to_record(&self, model: &dyn DynamicsModel) -> TrajectoryRecord {
        TrajectoryRecord {
            states: self.states.iter().map(|x| x.iter().copied().collect()).collect(),
            inputs: self.inputs.iter().map(|u| u.iter().copied().collect()).collect(),
            modes: self.modes.clone(),
            dt: self.inputs.iter().map(|u| model.step_duration(u)).collect(),
        }
    }
}

/// Serialized form of a [`Trajectory`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub modes: Vec<ModeId>,
    pub dt: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn to_trajectory(&self) -> Result<Trajectory> {
        let traj = Trajectory {
            states: self.states.iter().map(|x| DVector::from_vec(x.clone())).collect(),
            inputs: self.inputs.iter().map(|u| DVector::from_vec(u.clone())).collect(),
            modes: self.modes.clone(),
        };
        traj.validate()?;
        check_dim("trajectory dt", traj.horizon(), self.dt.len())?;
        Ok(traj)
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// `l(x, u) = dxᵀ Q dx + uᵀ R u` and `l_f(x) = dxᵀ Q_N dx` with diagonal weights,
/// where `dx = x - goal` with angular coordinates wrapped.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub q: DVector<f64>,
    pub r: DVector<f64>,
    pub q_terminal: DVector<f64>,
    pub goal: DVector<f64>,
    pub angular: Vec<usize>,
}

/// Value, gradients and Hessians of the running cost at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct CostExpansion {
    pub l: f64,
    pub l_x: DVector<f64>,
    pub l_u: DVector<f64>,
    pub l_xx: DMatrix<f64>,
    pub l_uu: DMatrix<f64>,
    pub l_xu: DMatrix<f64>,
}

impl QuadraticCost {
    pub fn new(
        q: DVector<f64>,
        r: DVector<f64>,
        q_terminal: DVector<f64>,
        goal: DVector<f64>,
        angular: Vec<usize>,
    ) -> Result<Self> {
        let n = goal.len();
        check_dim("cost Q", n, q.len())?;
        check_dim("cost Q_N", n, q_terminal.len())?;
        if q.iter()
            .chain(r.iter())
            .chain(q_terminal.iter())
            .any(|&w| w <= 0.0 || !w.is_finite())
        {
            return Err(Error::Config("cost weights must be positive and finite".into()));
        }
        if angular.iter().any(|&i| i >= n) {
            return Err(Error::Config("angular coordinate index out of range".into()));
        }
        Ok(Self {
            q,
            r,
            q_terminal,
            goal,
            angular,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.goal.len()
    }

    pub fn input_dim(&self) -> usize {
        self.r.len()
    }

    pub fn state_error(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut dx = x - &self.goal;
        for &i in &self.angular {
            dx[i] = wrap_angle(dx[i]);
        }
        dx
    }

    pub fn running(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let dx = self.state_error(x);
        weighted_square(&self.q, &dx) + weighted_square(&self.r, u)
    }

    pub fn terminal(&self, x: &DVector<f64>) -> f64 {
        weighted_square(&self.q_terminal, &self.state_error(x))
    }

    /// Exact derivatives of the running cost at `(x, u)`.
    pub fn expansion(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostExpansion {
        let dx = self.state_error(x);
        CostExpansion {
            l: weighted_square(&self.q, &dx) + weighted_square(&self.r, u),
            l_x: 2.0 * self.q.component_mul(&dx),
            l_u: 2.0 * self.r.component_mul(u),
            l_xx: DMatrix::from_diagonal(&(2.0 * &self.q)),
            l_uu: DMatrix::from_diagonal(&(2.0 * &self.r)),
            l_xu: DMatrix::zeros(x.len(), u.len()),
        }
    }

    /// `(l_f, ∇l_f, ∇²l_f)` at `x`.
    pub fn terminal_expansion(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let dx = self.state_error(x);
        (
            weighted_square(&self.q_terminal, &dx),
            2.0 * self.q_terminal.component_mul(&dx),
            DMatrix::from_diagonal(&(2.0 * &self.q_terminal)),
        )
    }
}

fn weighted_square(w: &DVector<f64>, v: &DVector<f64>) -> f64 {
    w.iter().zip(v.iter()).map(|(w, v)| w * v * v).sum()
}

/// `l_f(x_N) + Σ_k l(x_k, u_k)`, including the fixed `k = 0` state term.
pub fn total_cost(traj: &Trajectory, cost: &QuadraticCost) -> Result<f64> {
    traj.validate()?;
    let n = cost.state_dim();
    let m = cost.input_dim();
    for x in &traj.states {
        check_dim("cost state", n, x.len())?;
    }
    for u in &traj.inputs {
        check_dim("cost input", m, u.len())?;
    }
    let running: f64 = traj
        .inputs
        .iter()
        .zip(&traj.states)
        .map(|(u, x)| cost.running(x, u))
        .sum();
    Ok(running + cost.terminal(traj.final_state()))
}

/// Integrates the model from `x0` under `inputs` and `modes`.
pub fn rollout(
    model: &dyn DynamicsModel,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    modes: &[ModeId],
) -> Result<Trajectory> {
    check_dim("rollout modes", inputs.len(), modes.len())?;
    check_dim("rollout x0", model.state_dim(), x0.len())?;
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for (k, (u, &mode)) in inputs.iter().zip(modes).enumerate() {
        check_dim("rollout input", model.input_dim(), u.len())?;
        let next = model.step(&states[k], u, mode);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedRollout { step: k });
        }
        states.push(next);
    }
    Ok(Trajectory {
        states,
        inputs: inputs.to_vec(),
        modes: modes.to_vec(),
    })
}

/// `(f_x, f_u)` of the step map, analytic when available.
pub fn linearize(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    mode: ModeId,
) -> (DMatrix<f64>, DMatrix<f64>) {
    model
        .jacobians(x, u, mode)
        .unwrap_or_else(|| finite_difference_jacobians(model, x, u, mode))
}

/// Central differences with absolute step [`FD_STEP`].
pub fn finite_difference_jacobians(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    mode: ModeId,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.len();
    let m = u.len();
    let mut f_x = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += FD_STEP;
        xm[i] -= FD_STEP;
        let col = (model.step(&xp, u, mode) - model.step(&xm, u, mode)) / (2.0 * FD_STEP);
        f_x.set_column(i, &col);
    }
    let mut f_u = DMatrix::zeros(n, m);
    for j in 0..m {
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += FD_STEP;
        um[j] -= FD_STEP;
        let col = (model.step(x, &up, mode) - model.step(x, &um, mode)) / (2.0 * FD_STEP);
        f_u.set_column(j, &col);
    }
    (f_x, f_u)
}

/// Running-cost expansion; see [`QuadraticCost::expansion`].
pub fn cost_expansion(cost: &QuadraticCost, x: &DVector<f64>, u: &DVector<f64>) -> CostExpansion {
    cost.expansion(x, u)
}
