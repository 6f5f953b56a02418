//! Execution of hybrid plans under injected noise, success scoring, pusher-path
//! emission and ablation sweeps.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddp::state_deviation;
use crate::error::{check_dim, Error, Result};
use crate::hybrid::{plan, HybridConfig, HybridPlan};
use crate::primitives::{body_twist, contact_jacobian, contact_point, rotation, PushingParams};
use crate::qp::project_feasible;
use crate::trajectory::{DynamicsModel, ModeId, QuadraticCost, Trajectory, TrajectoryRecord};

/// Per-coordinate thresholds on the absolute terminal error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessCriteria {
    pub thresholds: Vec<f64>,
    /// Coordinates whose error is wrapped to `(-π, π]` before comparison.
    pub angular: Vec<usize>,
}

impl SuccessCriteria {
    /// 5 cm, 5 cm, 5°.
    pub fn pushing() -> Self {
        Self {
            thresholds: vec![0.05, 0.05, 5f64.to_radians()],
            angular: vec![2],
        }
    }

    /// 10°, 10°/s.
    pub fn pivoting() -> Self {
        Self {
            thresholds: vec![10f64.to_radians(), 10f64.to_radians()],
            angular: vec![0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Config("success thresholds must be positive".into()));
        }
        if self.angular.iter().any(|&i| i >= self.thresholds.len()) {
            return Err(Error::Config("angular index out of range in success criteria".into()));
        }
        Ok(())
    }
}

/// Terminal error `final - goal`, wrapped on the angular coordinates.
pub fn terminal_error(
    final_state: &DVector<f64>,
    goal: &DVector<f64>,
    criteria: &SuccessCriteria,
) -> Result<DVector<f64>> {
    check_dim("terminal state", goal.len(), final_state.len())?;
    check_dim("success thresholds", goal.len(), criteria.thresholds.len())?;
    Ok(state_deviation(&criteria.angular, final_state, goal))
}

/// True iff every wrapped error coordinate is strictly below its threshold.
pub fn success(final_state: &DVector<f64>, goal: &DVector<f64>, criteria: &SuccessCriteria) -> bool {
    match terminal_error(final_state, goal, criteria) {
        Ok(err) => err.iter().zip(&criteria.thresholds).all(|(e, t)| e.abs() < *t),
        Err(_) => false,
    }
}

/// Disturbances applied during execution. All standard deviations are per step except
/// `input_bias_sd`, which is drawn once per run and added to every applied input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub state_sd: Vec<f64>,
    pub input_sd: Vec<f64>,
    pub input_bias_sd: Vec<f64>,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none(n: usize, m: usize) -> Self {
        Self {
            state_sd: vec![0.0; n],
            input_sd: vec![0.0; m],
            input_bias_sd: vec![0.0; m],
            seed: 0,
        }
    }

    /// State noise of (1 mm, 1 mm, 0.5°) per step and a per-run tangential force bias
    /// of 0.02 N. The bias stands in for systematic contact errors; without it
    /// open-loop drift over a 40 cm push stays at a few degrees.
    pub fn pushing_default(m: usize) -> Self {
        let mut input_bias_sd = vec![0.0; m];
        input_bias_sd[1] = 0.02;
        Self {
            state_sd: vec![1e-3, 1e-3, 0.5 * PI / 180.0],
            input_bias_sd,
            ..Self::none(3, m)
        }
    }

    /// State noise of (0.2°, 1°/s) per step.
    pub fn pivoting_default() -> Self {
        Self {
            state_sd: vec![0.2f64.to_radians(), 1f64.to_radians()],
            ..Self::none(2, 4)
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        check_dim("state noise", n, self.state_sd.len())?;
        check_dim("input noise", m, self.input_sd.len())?;
        check_dim("input bias noise", m, self.input_bias_sd.len())?;
        let all = self.state_sd.iter().chain(&self.input_sd).chain(&self.input_bias_sd);
        if all.clone().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("noise standard deviations must be non-negative".into()));
        }
        Ok(())
    }
}

fn sample(rng: &mut ChaCha8Rng, sd: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        sd.len(),
        sd.iter()
            .map(|&s| Normal::new(0.0, s).expect("validated sd").sample(rng)),
    )
}

/// Whether the feedback gains are applied during execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    ClosedLoop,
    OpenLoop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Executed states, applied inputs (after feedback and projection) and modes.
    pub trajectory: Trajectory,
    pub terminal_error: DVector<f64>,
    pub success: bool,
    /// First step whose successor state was not finite, if any.
    pub diverged_at: Option<usize>,
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub execution: Execution,
    pub seed: u64,
    pub success: bool,
    pub diverged_at: Option<usize>,
    pub terminal_error: Vec<f64>,
    pub trajectory: TrajectoryRecord,
}

impl SimResult {
    pub fn to_record(&self, model: &dyn DynamicsModel, seed: u64) -> SimRecord {
        SimRecord {
            execution: self.execution,
            seed,
            success: self.success,
            diverged_at: self.diverged_at,
            terminal_error: self.terminal_error.iter().copied().collect(),
            trajectory: self.trajectory.to_record(model),
        }
    }
}

/// Executes `plan` on `model` with the plan's mode schedule held fixed.
///
/// Each step applies `project(u_k + K_k δx + bias + noise)` under the step's
/// constraints, where `δx` is the executed state minus the nominal one (the
/// feedforward term is already part of the nominal input). State noise is added
/// after the model step. Open-loop execution drops the `K_k δx` term.
pub fn simulate(
    model: &dyn DynamicsModel,
    plan: &HybridPlan,
    goal: &DVector<f64>,
    noise: &NoiseModel,
    criteria: &SuccessCriteria,
    execution: Execution,
) -> Result<SimResult> {
    let nominal = &plan.trajectory;
    let horizon = nominal.horizon();
    check_dim("control law length", horizon, plan.law.len())?;
    noise.validate(model.state_dim(), model.input_dim())?;
    criteria.validate()?;
    let angular = model.angular_coordinates();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let bias = sample(&mut rng, &noise.input_bias_sd);

    let mut states = vec![nominal.initial_state().clone()];
    let mut inputs = Vec::with_capacity(horizon);
    let mut diverged_at = None;
    for k in 0..horizon {
        let mode = nominal.modes[k];
        let x = &states[k];
        let mut u = &nominal.inputs[k] + &bias + sample(&mut rng, &noise.input_sd);
        if execution == Execution::ClosedLoop {
            u += &plan.law.feedback[k] * state_deviation(&angular, x, &nominal.states[k]);
        }
        let u = project_feasible(&u, &model.constraints(x, mode))?;
        let next = model.step(x, &u, mode) + sample(&mut rng, &noise.state_sd);
        if next.iter().any(|v| !v.is_finite()) {
            diverged_at = Some(k);
            break;
        }
        inputs.push(u);
        states.push(next);
    }

    let steps = inputs.len();
    let trajectory = Trajectory {
        states,
        inputs,
        modes: nominal.modes[..steps].to_vec(),
    };
    let (terminal_error, success) = match diverged_at {
        Some(_) => (DVector::from_element(goal.len(), f64::NAN), false),
        None => (
            terminal_error(trajectory.final_state(), goal, criteria)?,
            success(trajectory.final_state(), goal, criteria),
        ),
    };
    Ok(SimResult {
        trajectory,
        terminal_error,
        success,
        diverged_at,
        execution,
    })
}

pub fn simulate_closed_loop(
    model: &dyn DynamicsModel,
    plan: &HybridPlan,
    goal: &DVector<f64>,
    noise: &NoiseModel,
    criteria: &SuccessCriteria,
) -> Result<SimResult> {
    simulate(model, plan, goal, noise, criteria, Execution::ClosedLoop)
}

pub fn simulate_open_loop(
    model: &dyn DynamicsModel,
    plan: &HybridPlan,
    goal: &DVector<f64>,
    noise: &NoiseModel,
    criteria: &SuccessCriteria,
) -> Result<SimResult> {
    simulate(model, plan, goal, noise, criteria, Execution::OpenLoop)
}

/// One commanded pusher position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PusherPoint {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub mode: ModeId,
    /// The pusher was lifted and moved to a new contact before this point.
    pub relocated: bool,
}

/// Pusher positions obtained by integrating the contact-point velocity
/// `p_{k+1} = p_k + Δt_k R(θ_k) J L Jᵀ f_k` from the initial contact point.
///
/// At a contact switch the pusher is moved to the new contact on the current pose;
/// that point is emitted with `relocated` set, so a switch step has two points.
pub fn pusher_positions(traj: &Trajectory, params: &PushingParams) -> Vec<PusherPoint> {
    let mut points = Vec::with_capacity(traj.horizon() + 2);
    let anchor = |k: usize, mode: ModeId| -> Vector2<f64> {
        let x = &traj.states[k];
        Vector2::new(x[0], x[1]) + rotation(x[2]) * contact_point(mode, params)
    };
    let Some(&first) = traj.modes.first() else {
        return points;
    };
    let mut p = anchor(0, first);
    points.push(PusherPoint {
        step: 0,
        x: p.x,
        y: p.y,
        mode: first,
        relocated: false,
    });
    for k in 0..traj.horizon() {
        let mode = traj.modes[k];
        if k > 0 && mode != traj.modes[k - 1] {
            p = anchor(k, mode);
            points.push(PusherPoint {
                step: k,
                x: p.x,
                y: p.y,
                mode,
                relocated: true,
            });
        }
        let u = &traj.inputs[k];
        let dt = params.timestep_bounds.map_or(params.dt, |_| u[2]);
        let velocity = contact_jacobian(mode, params) * body_twist(u, mode, params);
        p += dt * rotation(traj.states[k][2]) * velocity;
        points.push(PusherPoint {
            step: k + 1,
            x: p.x,
            y: p.y,
            mode,
            relocated: false,
        });
    }
    points
}

/// Distance from each pusher point to the contact point of the same mode on the
/// object pose at that step.
pub fn pusher_contact_gaps(traj: &Trajectory, params: &PushingParams, points: &[PusherPoint]) -> Vec<f64> {
    points
        .iter()
        .map(|pt| {
            let x = &traj.states[pt.step];
            let c = Vector2::new(x[0], x[1]) + rotation(x[2]) * contact_point(pt.mode, params);
            (c - Vector2::new(pt.x, pt.y)).norm()
        })
        .collect()
}

/// Hyper-parameters of one ablation grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub max_switches: usize,
    pub tree_iterations: usize,
    pub horizon: usize,
}

/// One initial condition of a sweep, with the model it is planned on.
pub struct SweepCase<'a> {
    pub model: &'a dyn DynamicsModel,
    pub x0: DVector<f64>,
}

/// Aggregate over every contact combination of one size and every initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub contact_set_size: usize,
    pub max_switches: usize,
    pub tree_iterations: usize,
    pub horizon: usize,
    pub successes: usize,
    pub samples: usize,
    pub success_rate: f64,
    pub tree_time_mean: f64,
    pub tree_time_sd: f64,
    pub final_time_mean: f64,
    pub final_time_sd: f64,
}

/// Non-empty subsets of `modes`, ordered by size and then lexicographically.
pub fn contact_combinations(modes: &[ModeId]) -> Vec<Vec<ModeId>> {
    let mut sorted = modes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut subsets: Vec<Vec<ModeId>> = (1..1u64 << sorted.len())
        .map(|mask| {
            sorted
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &m)| m)
                .collect()
        })
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    subsets
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Outcome {
    size: usize,
    ok: bool,
    tree: f64,
    final_: f64,
}

/// Plans every case under every contact combination at every grid point and
/// aggregates success and timing by contact-set size.
///
/// Cases must share the mode set of the first case's model. A plan that fails
/// counts as unsuccessful, with its wall time charged to the tree phase. Jobs run on
/// the current rayon pool and are merged in grid order.
pub fn ablation_sweep(
    cases: &[SweepCase],
    cost: &QuadraticCost,
    criteria: &SuccessCriteria,
    base: &HybridConfig,
    points: &[AblationPoint],
) -> Result<Vec<AblationRecord>> {
    if points.is_empty() {
        return Err(Error::Config("ablation grid is empty".into()));
    }
    let Some(first) = cases.first() else {
        return Err(Error::Config("ablation needs at least one initial condition".into()));
    };
    criteria.validate()?;
    let combos = contact_combinations(&first.model.modes());
    let jobs: Vec<(&AblationPoint, &Vec<ModeId>, &SweepCase)> = points
        .iter()
        .flat_map(|p| combos.iter().flat_map(move |c| cases.iter().map(move |s| (p, c, s))))
        .collect();
    let outcomes: Vec<Outcome> = jobs
        .into_par_iter()
        .map(|(point, modes, case)| {
            let config = HybridConfig {
                max_switches: point.max_switches,
                tree_iterations: point.tree_iterations,
                horizon: point.horizon,
                modes: modes.clone(),
                ..base.clone()
            };
            let start = Instant::now();
            match plan(case.model, cost, &case.x0, &config) {
                Ok(p) => Outcome {
                    size: modes.len(),
                    ok: success(p.trajectory.final_state(), &cost.goal, criteria),
                    tree: p.timing.tree_seconds,
                    final_: p.timing.final_seconds,
                },
                Err(_) => Outcome {
                    size: modes.len(),
                    ok: false,
                    tree: start.elapsed().as_secs_f64(),
                    final_: 0.0,
                },
            }
        })
        .collect();

    let per_point = combos.len() * cases.len();
    let max_size = combos.last().map_or(0, Vec::len);
    let mut records = Vec::new();
    for (point, chunk) in points.iter().zip(outcomes.chunks(per_point)) {
        for size in 1..=max_size {
            let cell: Vec<&Outcome> = chunk.iter().filter(|o| o.size == size).collect();
            let tree: Vec<f64> = cell.iter().map(|o| o.tree).collect();
            let final_: Vec<f64> = cell.iter().map(|o| o.final_).collect();
            let (tree_time_mean, tree_time_sd) = mean_sd(&tree);
            let (final_time_mean, final_time_sd) = mean_sd(&final_);
            let successes = cell.iter().filter(|o| o.ok).count();
            records.push(AblationRecord {
                contact_set_size: size,
                max_switches: point.max_switches,
                tree_iterations: point.tree_iterations,
                horizon: point.horizon,
                successes,
                samples: cell.len(),
                success_rate: successes as f64 / cell.len() as f64,
                tree_time_mean,
                tree_time_sd,
                final_time_mean,
                final_time_sd,
            });
        }
    }
    Ok(records)
}
