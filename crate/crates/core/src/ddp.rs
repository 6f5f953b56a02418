//! Input-constrained DDP: Gauss–Newton backward pass with a QP for the feedforward
//! term, null-space feedback gains, and a projected forward rollout.

use log::{debug, trace};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::{null_space, project_feasible, solve_qp, QpStatus, QuadraticProgram};
use crate::trajectory::{
    cost_expansion, linearize, total_cost, wrap_angle, CostExpansion, DynamicsModel, ModeId, QuadraticCost, Trajectory,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpConfig {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub cost_tolerance: f64,
    /// Stop when every feedforward entry is below this in magnitude.
    pub feedforward_tolerance: f64,
    pub reg_init: f64,
    pub reg_growth: f64,
    pub reg_shrink: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    /// Step sizes tried in order by the line search.
    pub alphas: Vec<f64>,
    /// Minimum ratio of actual to predicted cost reduction for acceptance.
    pub accept_ratio: f64,
}

impl Default for DdpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            cost_tolerance: 1e-6,
            feedforward_tolerance: 1e-6,
            reg_init: 1e-6,
            reg_growth: 10.0,
            reg_shrink: 0.5,
            reg_min: 1e-9,
            reg_max: 1e9,
            alphas: (0..=10).map(|i| 0.5_f64.powi(i)).collect(),
            accept_ratio: 1e-4,
        }
    }
}

impl DdpConfig {
    pub fn with_max_iterations(max_iterations: usize) -> Self {
        Self {
            max_iterations,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.cost_tolerance,
            self.feedforward_tolerance,
            self.reg_init,
            self.reg_growth,
            self.reg_shrink,
            self.reg_min,
            self.reg_max,
            self.accept_ratio,
        ];
        if positive.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("DDP tolerances and schedules must be positive".into()));
        }
        if self.reg_min > self.reg_max || self.reg_growth <= 1.0 || self.reg_shrink >= 1.0 {
            return Err(Error::Config("invalid regularization schedule".into()));
        }
        if self.alphas.is_empty()
            || self.alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0))
            || self.alphas.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::Config("line-search alphas must decrease within (0, 1]".into()));
        }
        Ok(())
    }
}

/// Second-order model of the state-action value around the nominal point.
#[derive(Debug, Clone, PartialEq)]
pub struct QExpansion {
    pub q_x: DVector<f64>,
    pub q_u: DVector<f64>,
    pub q_xx: DMatrix<f64>,
    pub q_xu: DMatrix<f64>,
    pub q_uu: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueExpansion {
    /// Predicted change accumulated from this step to the horizon.
    pub dv: f64,
    pub v_x: DVector<f64>,
    pub v_xx: DMatrix<f64>,
}

impl ValueExpansion {
    /// Terminal value from `l_f` and its derivatives.
    pub fn terminal(cost: &QuadraticCost, x_n: &DVector<f64>) -> Self {
        let (_, v_x, v_xx) = cost.terminal_expansion(x_n);
        Self { dv: 0.0, v_x, v_xx }
    }
}

/// Per-step `δu = k + K δx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLaw {
    pub feedforward: Vec<DVector<f64>>,
    pub feedback: Vec<DMatrix<f64>>,
}

impl ControlLaw {
    pub fn zeros(horizon: usize, n: usize, m: usize) -> Self {
        Self {
            feedforward: vec![DVector::zeros(m); horizon],
            feedback: vec![DMatrix::zeros(m, n); horizon],
        }
    }

    pub fn len(&self) -> usize {
        self.feedforward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feedforward.is_empty()
    }

    pub fn max_feedforward(&self) -> f64 {
        self.feedforward.iter().map(|k| k.amax()).fold(0.0, f64::max)
    }
}

/// Output of one backward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass {
    pub law: ControlLaw,
    /// `Σ kᵀ q_u`: coefficient of α in the predicted cost change.
    pub expected_linear: f64,
    /// `Σ ½ kᵀ Q_uu k`: coefficient of α².
    pub expected_quadratic: f64,
    /// Value expansions for steps `0..=N`.
    pub values: Vec<ValueExpansion>,
}

impl BackwardPass {
    /// Predicted cost change (negative for descent) at step size `alpha`.
    pub fn expected_change(&self, alpha: f64) -> f64 {
        alpha * self.expected_linear + alpha * alpha * self.expected_quadratic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub alpha: f64,
    pub regularization: f64,
    pub expected_reduction: f64,
    pub actual_reduction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpResult {
    pub trajectory: Trajectory,
    pub law: ControlLaw,
    pub cost: f64,
    /// Accepted iterations (regularization retries are not counted).
    pub iterations: usize,
    pub converged: bool,
    /// Cost of the initial rollout followed by the cost after each accepted step.
    pub cost_log: Vec<f64>,
    pub log: Vec<IterationRecord>,
}

/// `a - b` with angular coordinates wrapped to `(-π, π]`.
pub fn state_deviation(angular: &[usize], a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut d = a - b;
    for &i in angular {
        d[i] = wrap_angle(d[i]);
    }
    d
}

pub fn q_expansion(
    value_next: &ValueExpansion,
    cost_terms: &CostExpansion,
    f_x: &DMatrix<f64>,
    f_u: &DMatrix<f64>,
    reg: f64,
) -> QExpansion {
    let n = f_x.nrows();
    let m = f_u.ncols();
    let f_x_t = f_x.transpose();
    let f_u_t = f_u.transpose();
    let v_xx = &value_next.v_xx;
    let v_xx_reg = v_xx + DMatrix::identity(n, n) * reg;
    let q_uu = &cost_terms.l_uu + &f_u_t * v_xx_reg * f_u + DMatrix::identity(m, m) * reg;
    QExpansion {
        q_x: &cost_terms.l_x + &f_x_t * &value_next.v_x,
        q_u: &cost_terms.l_u + &f_u_t * &value_next.v_x,
        q_xx: symmetrize(&(&cost_terms.l_xx + &f_x_t * v_xx * f_x)),
        q_xu: &cost_terms.l_xu + &f_x_t * v_xx * f_u,
        q_uu: symmetrize(&q_uu),
    }
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Feedforward from the step QP and a gain restricted to the null space of the active
/// constraint rows: `K = -Z (Zᵀ Q_uu Z)⁻¹ Zᵀ Q_ux`.
fn step_law(
    q: &QExpansion,
    u: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    step: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let qp = QuadraticProgram {
        h: q.q_uu.clone(),
        g: q.q_u.clone(),
        a_ineq: a.clone(),
        b_ineq: b - a * u,
        a_eq: g.clone(),
        b_eq: h - g * u,
    };
    let sol = solve_qp(&qp).map_err(|e| Error::BackwardPass {
        step,
        reason: e.to_string(),
    })?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::BackwardPass {
            step,
            reason: format!("step QP {:?}", sol.status),
        });
    }

    let m = u.len();
    let n = q.q_x.len();
    let k_rows = sol.active_set.len() + g.nrows();
    let mut active = DMatrix::zeros(k_rows, m);
    for (r, &i) in sol.active_set.iter().enumerate() {
        active.set_row(r, &a.row(i));
    }
    for r in 0..g.nrows() {
        active.set_row(sol.active_set.len() + r, &g.row(r));
    }
    let z = if k_rows == 0 {
        DMatrix::identity(m, m)
    } else {
        null_space(&active)
    };
    let gain = if z.ncols() == 0 {
        DMatrix::zeros(m, n)
    } else {
        let reduced = z.transpose() * &q.q_uu * &z;
        let chol = reduced.cholesky().ok_or(Error::BackwardPass {
            step,
            reason: "reduced Q_uu not positive definite".into(),
        })?;
        -(&z * chol.solve(&(z.transpose() * q.q_xu.transpose())))
    };
    Ok((sol.z, gain))
}

/// One backward sweep around a rollout-consistent trajectory.
pub fn backward_pass(
    traj: &Trajectory,
    model: &dyn DynamicsModel,
    cost: &QuadraticCost,
    reg: f64,
) -> Result<BackwardPass> {
    traj.validate()?;
    let horizon = traj.horizon();
    let n = model.state_dim();
    let m = model.input_dim();
    let mut law = ControlLaw::zeros(horizon, n, m);
    let mut values = vec![ValueExpansion::terminal(cost, traj.final_state()); horizon + 1];
    let mut expected_linear = 0.0;
    let mut expected_quadratic = 0.0;

    for k in (0..horizon).rev() {
        let x = &traj.states[k];
        let u = &traj.inputs[k];
        let mode = traj.modes[k];
        let (f_x, f_u) = linearize(model, x, u, mode);
        let q = q_expansion(&values[k + 1], &cost_expansion(cost, x, u), &f_x, &f_u, reg);
        if !(q.q_uu.iter().chain(q.q_u.iter()).all(|v| v.is_finite())) {
            return Err(Error::BackwardPass {
                step: k,
                reason: "non-finite expansion".into(),
            });
        }
        let cons = model.constraints(x, mode);
        let (ff, gain) = step_law(&q, u, &cons.a, &cons.b, &cons.g, &cons.h, k)?;

        let quu_k = &q.q_uu * &ff;
        let lin = ff.dot(&q.q_u);
        let quad = 0.5 * ff.dot(&quu_k);
        expected_linear += lin;
        expected_quadratic += quad;
        let gain_t = gain.transpose();
        let v_x = &q.q_x + &gain_t * &quu_k + &gain_t * &q.q_u + &q.q_xu * &ff;
        let v_xx = &q.q_xx + &gain_t * &q.q_uu * &gain + &gain_t * q.q_xu.transpose() + &q.q_xu * &gain;
        values[k] = ValueExpansion {
            dv: values[k + 1].dv + lin + quad,
            v_x,
            v_xx: symmetrize(&v_xx),
        };
        law.feedforward[k] = ff;
        law.feedback[k] = gain;
    }
    Ok(BackwardPass {
        law,
        expected_linear,
        expected_quadratic,
        values,
    })
}

/// Rolls out `u_k + α k_k + K_k (x̂_k - x_k)`, projected onto each step's constraints.
pub fn forward_pass(model: &dyn DynamicsModel, traj: &Trajectory, law: &ControlLaw, alpha: f64) -> Result<Trajectory> {
    let horizon = traj.horizon();
    if law.len() != horizon {
        return Err(Error::Dimension {
            context: "control law length",
            expected: horizon,
            actual: law.len(),
        });
    }
    let angular = model.angular_coordinates();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    states.push(traj.initial_state().clone());
    for k in 0..horizon {
        let mode = traj.modes[k];
        let x_hat = &states[k];
        let dx = state_deviation(&angular, x_hat, &traj.states[k]);
        let candidate = &traj.inputs[k] + &law.feedforward[k] * alpha + &law.feedback[k] * dx;
        let u_hat = project_feasible(&candidate, &model.constraints(x_hat, mode))?;
        let next = model.step(x_hat, &u_hat, mode);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedRollout { step: k });
        }
        inputs.push(u_hat);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        inputs,
        modes: traj.modes.clone(),
    })
}

/// Rollout that projects each input onto its step's constraints before applying it.
pub fn projected_rollout(
    model: &dyn DynamicsModel,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    modes: &[ModeId],
) -> Result<Trajectory> {
    if inputs.len() != modes.len() {
        return Err(Error::Dimension {
            context: "rollout modes",
            expected: inputs.len(),
            actual: modes.len(),
        });
    }
    let mut states = vec![x0.clone()];
    let mut projected = Vec::with_capacity(inputs.len());
    for (k, (u, &mode)) in inputs.iter().zip(modes).enumerate() {
        if u.len() != model.input_dim() {
            return Err(Error::Dimension {
                context: "rollout input",
                expected: model.input_dim(),
                actual: u.len(),
            });
        }
        let u = project_feasible(u, &model.constraints(&states[k], mode))?;
        let next = model.step(&states[k], &u, mode);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedRollout { step: k });
        }
        projected.push(u);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        inputs: projected,
        modes: modes.to_vec(),
    })
}

/// Input-constrained DDP with a fixed mode schedule.
///
/// Errors only if the initial guess cannot be rolled out; afterwards the best
/// trajectory found so far is always returned.
pub fn solve(
    model: &dyn DynamicsModel,
    cost: &QuadraticCost,
    x0: &DVector<f64>,
    u0: &[DVector<f64>],
    modes: &[ModeId],
    config: &DdpConfig,
) -> Result<DdpResult> {
    config.validate()?;
    if cost.state_dim() != model.state_dim() || cost.input_dim() != model.input_dim() {
        return Err(Error::Dimension {
            context: "cost dimensions",
            expected: model.state_dim(),
            actual: cost.state_dim(),
        });
    }
    let mut traj = projected_rollout(model, x0, u0, modes)?;
    let mut current = total_cost(&traj, cost)?;
    let mut reg = config.reg_init.clamp(config.reg_min, config.reg_max);
    let mut cost_log = vec![current];
    let mut log = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    // Law computed around the current trajectory, if any.
    let mut law: Option<ControlLaw> = None;

    while iterations < config.max_iterations {
        let pass = match backward_pass(&traj, model, cost, reg) {
            Ok(pass) => pass,
            Err(err) => {
                trace!("backward pass failed at reg {reg:.1e}: {err}");
                reg *= config.reg_growth;
                if reg > config.reg_max {
                    break;
                }
                continue;
            }
        };
        if pass.law.max_feedforward() < config.feedforward_tolerance {
            law = Some(pass.law);
            converged = true;
            break;
        }

        let mut accepted = None;
        for &alpha in &config.alphas {
            let Ok(candidate) = forward_pass(model, &traj, &pass.law, alpha) else {
                continue;
            };
            let Ok(new_cost) = total_cost(&candidate, cost) else {
                continue;
            };
            let expected = -pass.expected_change(alpha);
            let actual = current - new_cost;
            if expected > 0.0 && actual >= config.accept_ratio * expected {
                accepted = Some((candidate, new_cost, alpha, expected, actual));
                break;
            }
        }

        match accepted {
            Some((candidate, new_cost, alpha, expected, actual)) => {
                iterations += 1;
                let relative = actual / current.abs().max(f64::MIN_POSITIVE);
                traj = candidate;
                current = new_cost;
                cost_log.push(current);
                log.push(IterationRecord {
                    iteration: iterations,
                    cost: current,
                    alpha,
                    regularization: reg,
                    expected_reduction: expected,
                    actual_reduction: actual,
                });
                debug!("ddp iter {iterations}: cost {current:.6e} alpha {alpha} reg {reg:.1e}");
                reg = (reg * config.reg_shrink).max(config.reg_min);
                law = None;
                if relative < config.cost_tolerance {
                    converged = true;
                    break;
                }
            }
            None => {
                // A negligible predicted gain means the step is already optimal.
                if -pass.expected_change(1.0) < config.cost_tolerance * current.abs() {
                    law = Some(pass.law);
                    converged = true;
                    break;
                }
                reg *= config.reg_growth;
                if reg > config.reg_max {
                    break;
                }
            }
        }
    }

    let law = match law {
        Some(law) => law,
        None => final_law(model, cost, &traj, reg, config),
    };
    Ok(DdpResult {
        trajectory: traj,
        law,
        cost: current,
        iterations,
        converged,
        cost_log,
        log,
    })
}

/// Law around the returned trajectory, raising regularization until a sweep succeeds.
fn final_law(
    model: &dyn DynamicsModel,
    cost: &QuadraticCost,
    traj: &Trajectory,
    reg: f64,
    config: &DdpConfig,
) -> ControlLaw {
    let mut reg = reg.clamp(config.reg_min, config.reg_max);
    loop {
        if let Ok(pass) = backward_pass(traj, model, cost, reg) {
            return pass.law;
        }
        reg *= config.reg_growth;
        if reg > config.reg_max {
            return ControlLaw::zeros(traj.horizon(), model.state_dim(), model.input_dim());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::InputConstraintSet;
    use approx::assert_relative_eq;

    /// `x' = A x + B u` with optional box bounds on `u`.
    struct Linear {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        bound: Option<f64>,
    }

    impl DynamicsModel for Linear {
        fn state_dim(&self) -> usize {
            self.a.nrows()
        }
        fn input_dim(&self) -> usize {
            self.b.ncols()
        }
        fn modes(&self) -> Vec<ModeId> {
            vec![0]
        }
        fn step(&self, x: &DVector<f64>, u: &DVector<f64>, _mode: ModeId) -> DVector<f64> {
            &self.a * x + &self.b * u
        }
        fn jacobians(
            &self,
            _x: &DVector<f64>,
            _u: &DVector<f64>,
            _mode: ModeId,
        ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
            Some((self.a.clone(), self.b.clone()))
        }
        fn constraints(&self, _x: &DVector<f64>, _mode: ModeId) -> InputConstraintSet {
            let m = self.input_dim();
            let mut cons = InputConstraintSet::unconstrained(m);
            if let Some(c) = self.bound {
                for i in 0..m {
                    cons = cons.with_bounds(i, -c, c);
                }
            }
            cons
        }
        fn equilibrium_constraints(&self, x: &DVector<f64>, mode: ModeId) -> InputConstraintSet {
            self.constraints(x, mode)
        }
        fn step_duration(&self, _u: &DVector<f64>) -> f64 {
            1.0
        }
    }

    fn double_integrator(bound: Option<f64>) -> Linear {
        Linear {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.005, 0.1]),
            bound,
        }
    }

    fn unit_cost() -> QuadraticCost {
        QuadraticCost::new(
            DVector::from_vec(vec![1.0, 0.5]),
            DVector::from_vec(vec![0.1]),
            DVector::from_vec(vec![10.0, 5.0]),
            DVector::zeros(2),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn zero_value_gives_cost_terms_plus_regularization() {
        let cost = unit_cost();
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let u = DVector::from_vec(vec![0.7]);
        let terms = cost.expansion(&x, &u);
        let v = ValueExpansion {
            dv: 0.0,
            v_x: DVector::zeros(2),
            v_xx: DMatrix::zeros(2, 2),
        };
        let model = double_integrator(None);
        let q = q_expansion(&v, &terms, &model.a, &model.b, 0.0);
        assert_eq!(q.q_x, terms.l_x);
        assert_eq!(q.q_u, terms.l_u);
        assert_eq!(q.q_uu, terms.l_uu);
        let q_reg = q_expansion(&v, &terms, &model.a, &model.b, 1e-3);
        let expected = (DMatrix::identity(1, 1) + model.b.transpose() * &model.b) * 1e-3;
        assert_relative_eq!(q_reg.q_uu - q.q_uu, expected, epsilon = 1e-15);
    }

    #[test]
    fn alpha_zero_reproduces_trajectory() {
        let model = double_integrator(Some(1.0));
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let inputs = vec![DVector::from_element(1, 0.3); 10];
        let traj = projected_rollout(&model, &x0, &inputs, &[0; 10]).unwrap();
        let pass = backward_pass(&traj, &model, &unit_cost(), 1e-6).unwrap();
        let again = forward_pass(&model, &traj, &pass.law, 0.0).unwrap();
        assert_eq!(again, traj);
    }

    #[test]
    fn terminal_value_is_final_cost_derivative() {
        let model = double_integrator(None);
        let cost = unit_cost();
        let x0 = DVector::from_vec(vec![1.0, -1.0]);
        let traj = projected_rollout(&model, &x0, &vec![DVector::zeros(1); 5], &[0; 5]).unwrap();
        let pass = backward_pass(&traj, &model, &cost, 0.0).unwrap();
        let (_, v_x, v_xx) = cost.terminal_expansion(traj.final_state());
        assert_eq!(pass.values[5].v_x, v_x);
        assert_eq!(pass.values[5].v_xx, v_xx);
        for v in &pass.values {
            assert_eq!(v.v_xx, v.v_xx.transpose());
        }
    }

    #[test]
    fn zero_iterations_returns_initial_rollout() {
        let model = double_integrator(None);
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let u0 = vec![DVector::from_element(1, 0.2); 8];
        let result = solve(
            &model,
            &unit_cost(),
            &x0,
            &u0,
            &[0; 8],
            &DdpConfig::with_max_iterations(0),
        )
        .unwrap();
        assert!(!result.converged);
        assert_eq!(result.iterations, 0);
        assert_eq!(result.trajectory.inputs, u0);
        assert_eq!(result.cost_log.len(), 1);
    }

    #[test]
    fn active_bounds_zero_the_feedback() {
        let model = double_integrator(Some(0.05));
        let x0 = DVector::from_vec(vec![5.0, 0.0]);
        let traj = projected_rollout(&model, &x0, &vec![DVector::from_element(1, -0.05); 6], &[0; 6]).unwrap();
        let pass = backward_pass(&traj, &model, &unit_cost(), 1e-9).unwrap();
        // Far from the goal the step QP saturates the lower bound, which leaves no
        // feasible feedback direction.
        assert_relative_eq!(pass.law.feedforward[0][0], 0.0, epsilon = 1e-12);
        assert_eq!(pass.law.feedback[0], DMatrix::zeros(1, 2));
    }

    #[test]
    fn config_validation() {
        assert!(DdpConfig::default().validate().is_ok());
        let bad = DdpConfig {
            alphas: vec![0.5, 1.0],
            ..DdpConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
