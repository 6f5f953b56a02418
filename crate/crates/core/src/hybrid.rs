//! Hybrid DDP: exhaustive search over contact-mode sequences with evenly spaced
//! switches, pruned by static equilibrium, followed by a full solve on the best leaf.

use std::cmp::Ordering;
use std::time::Instant;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddp::{solve, ControlLaw, DdpConfig};
use crate::error::{Error, Result};
use crate::qp::{project_feasible, solve_qp, QpStatus, QuadraticProgram};
use crate::trajectory::{DynamicsModel, ModeId, QuadraticCost, Trajectory, TrajectoryRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridConfig {
    /// Maximum number of contact switches `N_s`.
    pub max_switches: usize,
    pub modes: Vec<ModeId>,
    /// Planning horizon `N` in steps.
    pub horizon: usize,
    /// DDP iteration cap per leaf during tree generation `N_i`.
    pub tree_iterations: usize,
    /// DDP iteration cap for the final solve on the winning sequence.
    pub final_iterations: usize,
    /// Remaining DDP settings; its `max_iterations` is overridden per phase.
    pub ddp: DdpConfig,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            max_switches: 1,
            modes: vec![0],
            horizon: 24,
            tree_iterations: 10,
            final_iterations: 100,
            ddp: DdpConfig::default(),
        }
    }
}

impl HybridConfig {
    pub fn validate(&self, model: &dyn DynamicsModel) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Config("at least one mode must be enabled".into()));
        }
        let known = model.modes();
        if let Some(m) = self.modes.iter().find(|m| !known.contains(m)) {
            return Err(Error::Config(format!("unknown mode {m}; model has {known:?}")));
        }
        let mut sorted = self.modes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.modes.len() {
            return Err(Error::Config("enabled modes must be distinct".into()));
        }
        if self.horizon < self.max_switches + 1 {
            return Err(Error::Config(format!(
                "horizon {} too short for {} switches",
                self.horizon, self.max_switches
            )));
        }
        self.ddp.validate()
    }

    fn with_cap(&self, cap: usize) -> DdpConfig {
        DdpConfig {
            max_iterations: cap,
            ..self.ddp.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeSequence {
    pub modes: Vec<ModeId>,
    pub switch_steps: Vec<usize>,
}

impl ModeSequence {
    pub fn num_switches(&self) -> usize {
        self.switch_steps.len()
    }

    /// Active mode at every step of a horizon.
    pub fn schedule(&self, horizon: usize) -> Vec<ModeId> {
        let mut segment = 0;
        (0..horizon)
            .map(|k| {
                while segment < self.switch_steps.len() && k >= self.switch_steps[segment] {
                    segment += 1;
                }
                self.modes[segment]
            })
            .collect()
    }

    /// `(mode, first step, end step)` for each segment.
    pub fn segments(&self, horizon: usize) -> Vec<(ModeId, usize, usize)> {
        let mut bounds = vec![0];
        bounds.extend(&self.switch_steps);
        bounds.push(horizon);
        self.modes
            .iter()
            .zip(bounds.windows(2))
            .map(|(&m, w)| (m, w[0], w[1]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafCandidate {
    pub sequence: ModeSequence,
    /// Tree-phase trajectory; absent when the leaf was pruned before solving or the
    /// plan was loaded from a record.
    pub trajectory: Option<Trajectory>,
    /// Cost of the tree-phase trajectory; infinite when pruned.
    pub approx_cost: f64,
    pub iterations: usize,
    /// Tree-phase cost after each accepted iteration, starting with the initial cost.
    pub cost_log: Vec<f64>,
    pub pruned: Option<String>,
}

impl LeafCandidate {
    fn pruned(sequence: ModeSequence, reason: String) -> Self {
        Self {
            sequence,
            trajectory: None,
            approx_cost: f64::INFINITY,
            iterations: 0,
            cost_log: Vec::new(),
            pruned: Some(reason),
        }
    }

    pub fn is_pruned(&self) -> bool {
        self.pruned.is_some()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanTiming {
    pub tree_seconds: f64,
    pub final_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridPlan {
    pub best: ModeSequence,
    pub trajectory: Trajectory,
    pub law: ControlLaw,
    pub cost: f64,
    pub converged: bool,
    pub final_iterations: usize,
    /// Final-solve cost after each accepted iteration, starting with the initial cost.
    pub cost_log: Vec<f64>,
    pub leaves: Vec<LeafCandidate>,
    pub timing: PlanTiming,
}

/// Evenly spaced interior switch steps, `round(j N / (N_s + 1))` for `j = 1..=N_s`.
pub fn switch_times(horizon: usize, switches: usize) -> Vec<usize> {
    assert!(
        horizon > switches,
        "horizon {horizon} too short for {switches} switches"
    );
    (1..=switches)
        .map(|j| ((j * horizon) as f64 / (switches + 1) as f64).round() as usize)
        .collect()
}

/// All sequences of exactly `switches` switches over `modes` without consecutive
/// repeats, in lexicographic order of the given mode order. A single mode admits only
/// the switch-free sequence.
pub fn enumerate_sequences(modes: &[ModeId], switches: usize) -> Vec<Vec<ModeId>> {
    assert!(!modes.is_empty(), "no modes enabled");
    let mut ordered = modes.to_vec();
    ordered.sort_unstable();
    if ordered.len() == 1 {
        return vec![ordered];
    }
    let mut out: Vec<Vec<ModeId>> = ordered.iter().map(|&m| vec![m]).collect();
    for _ in 0..switches {
        out = out
            .into_iter()
            .flat_map(|seq| {
                let last = *seq.last().expect("non-empty");
                ordered
                    .iter()
                    .filter(move |&&m| m != last)
                    .map(move |&m| {
                        let mut next = seq.clone();
                        next.push(m);
                        next
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    out
}

/// Every sequence with at most `config.max_switches` switches, fewest switches first.
pub fn candidate_sequences(config: &HybridConfig) -> Vec<ModeSequence> {
    let most = if config.modes.len() > 1 { config.max_switches } else { 0 };
    (0..=most)
        .flat_map(|s| {
            let steps = switch_times(config.horizon, s);
            enumerate_sequences(&config.modes, s)
                .into_iter()
                .map(move |modes| ModeSequence {
                    modes,
                    switch_steps: steps.clone(),
                })
        })
        .collect()
}

/// Minimum-norm input that holds the state still in `mode`.
pub fn static_equilibrium_input(model: &dyn DynamicsModel, x: &DVector<f64>, mode: ModeId) -> Result<DVector<f64>> {
    let cons = model.equilibrium_constraints(x, mode);
    let m = model.input_dim();
    let qp = QuadraticProgram::with_constraints(DMatrix::identity(m, m), DVector::zeros(m), &cons);
    let sol = solve_qp(&qp)?;
    match sol.status {
        QpStatus::Optimal => Ok(sol.z),
        _ => Err(Error::InfeasibleConstraints { mode: Some(mode) }),
    }
}

/// Why a sequence fails static equilibrium after one of its switches, if it does.
pub fn prune_reason(
    model: &dyn DynamicsModel,
    sequence: &ModeSequence,
    switch_states: &[DVector<f64>],
) -> Option<String> {
    sequence
        .switch_steps
        .iter()
        .zip(switch_states)
        .zip(&sequence.modes[1..])
        .find(|((_, x), &mode)| static_equilibrium_input(model, x, mode).is_err())
        .map(|((step, _), mode)| format!("mode {mode} cannot hold equilibrium at switch step {step}"))
}

pub fn prune(model: &dyn DynamicsModel, sequence: &ModeSequence, switch_states: &[DVector<f64>]) -> bool {
    prune_reason(model, sequence, switch_states).is_some()
}

/// Holds the equilibrium input of `mode` (computed at `x` at rest) for `steps` steps,
/// projected onto the constraints of each visited state. Falls back to the projection
/// of a zero input when `mode` cannot hold `x`.
fn hold_inputs(model: &dyn DynamicsModel, x: &DVector<f64>, mode: ModeId, steps: usize) -> Result<Vec<DVector<f64>>> {
    let seed = static_equilibrium_input(model, x, mode).unwrap_or_else(|_| DVector::zeros(model.input_dim()));
    let mut x = x.clone();
    let mut inputs = Vec::with_capacity(steps);
    for k in 0..steps {
        let u = project_feasible(&seed, &model.constraints(&x, mode))
            .map_err(|_| Error::InfeasibleConstraints { mode: Some(mode) })?;
        x = model.step(&x, &u, mode);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedRollout { step: k });
        }
        inputs.push(u);
    }
    Ok(inputs)
}

/// Optimizes a tree node (a mode prefix whose last mode is held to the horizon) with
/// the tree-phase iteration cap.
fn solve_node(
    model: &dyn DynamicsModel,
    cost: &QuadraticCost,
    x0: &DVector<f64>,
    sequence: ModeSequence,
    inputs: Vec<DVector<f64>>,
    config: &HybridConfig,
) -> LeafCandidate {
    let schedule = sequence.schedule(config.horizon);
    match solve(
        model,
        cost,
        x0,
        &inputs,
        &schedule,
        &config.with_cap(config.tree_iterations),
    ) {
        Ok(result) => LeafCandidate {
            sequence,
            approx_cost: result.cost,
            iterations: result.iterations,
            cost_log: result.cost_log,
            trajectory: Some(result.trajectory),
            pruned: None,
        },
        Err(err) => LeafCandidate::pruned(sequence, format!("solve failed: {err}")),
    }
}

/// Switch-free nodes, one per enabled mode, initialized at equilibrium.
fn root_nodes(
    model: &dyn DynamicsModel,
    cost: &QuadraticCost,
    x0: &DVector<f64>,
    config: &HybridConfig,
) -> Vec<LeafCandidate> {
    let mut modes = config.modes.clone();
    modes.sort_unstable();
    modes
        .into_par_iter()
        .map(|mode| {
            let sequence = ModeSequence {
                modes: vec![mode],
                switch_steps: Vec::new(),
            };
            match hold_inputs(model, x0, mode, config.horizon) {
                Ok(inputs) => solve_node(model, cost, x0, sequence, inputs, config),
                Err(err) => LeafCandidate::pruned(sequence, format!("initialization failed: {err}")),
            }
        })
        .collect()
}

/// Child of `parent` that switches to `mode` at `step`. The parent's optimized inputs
/// are kept before the switch; the new mode starts from equilibrium at the parent's
/// switch state, and the child is pruned if no such equilibrium exists.
fn expand(
    model: &dyn DynamicsModel,
    cost: &QuadraticCost,
    x0: &DVector<f64>,
    parent: &LeafCandidate,
    mode: ModeId,
    step: usize,
    config: &HybridConfig,
) -> LeafCandidate {
    let mut sequence = parent.sequence.clone();
    sequence.modes.push(mode);
    sequence.switch_steps.push(step);
    if let Some(reason) = &parent.pruned {
        return LeafCandidate::pruned(sequence, reason.clone());
    }
    let traj = parent.trajectory.as_ref().expect("unpruned nodes keep trajectories");
    let x_switch = &traj.states[step];
    if static_equilibrium_input(model, x_switch, mode).is_err() {
        return LeafCandidate::pruned(
            sequence,
            format!("mode {mode} cannot hold equilibrium at switch step {step}"),
        );
    }
    let mut inputs = traj.inputs[..step].to_vec();
    match hold_inputs(model, x_switch, mode, config.horizon - step) {
        Ok(rest) => inputs.extend(rest),
        Err(err) => return LeafCandidate::pruned(sequence, format!("initialization failed: {err}")),
    }
    solve_node(model, cost, x0, sequence, inputs, config)
}

/// Leaves with exactly `switches` switches, grown level by level from `roots`.
/// Children of a pruned node inherit its prune reason.
fn explore(
    model: &dyn DynamicsModel,
    cost: &QuadraticCost,
    x0: &DVector<f64>,
    roots: &[LeafCandidate],
    switches: usize,
    config: &HybridConfig,
) -> Vec<LeafCandidate> {
    let mut modes = config.modes.clone();
    modes.sort_unstable();
    let mut frontier = roots.to_vec();
    for step in switch_times(config.horizon, switches) {
        let jobs: Vec<(&LeafCandidate, ModeId)> = frontier
            .iter()
            .flat_map(|p| {
                let last = *p.sequence.modes.last().expect("non-empty");
                modes.iter().filter(move |&&m| m != last).map(move |&m| (p, m))
            })
            .collect();
        frontier = jobs
            .into_par_iter()
            .map(|(parent, mode)| expand(model, cost, x0, parent, mode, step, config))
            .collect();
    }
    frontier
}

fn rank(a: &LeafCandidate, b: &LeafCandidate) -> Ordering {
    a.approx_cost
        .total_cmp(&b.approx_cost)
        .then_with(|| a.sequence.modes.cmp(&b.sequence.modes))
}

/// Tree search over mode sequences followed by a final solve on the cheapest leaf.
///
/// Leaves are solved in parallel on the current rayon pool and merged in sequence
/// order, so the result does not depend on the number of workers.
pub fn plan(
    model: &dyn DynamicsModel,
    cost: &QuadraticCost,
    x0: &DVector<f64>,
    config: &HybridConfig,
) -> Result<HybridPlan> {
    config.validate(model)?;
    if x0.len() != model.state_dim() {
        return Err(Error::Dimension {
            context: "initial state",
            expected: model.state_dim(),
            actual: x0.len(),
        });
    }
    let sequences = candidate_sequences(config);

    if sequences.len() == 1 {
        // One candidate: no tree, a single constrained DDP solve.
        let sequence = sequences.into_iter().next().expect("one sequence");
        let start = Instant::now();
        let inputs = hold_inputs(model, x0, sequence.modes[0], config.horizon)
            .map_err(|e| Error::NoPlan(format!("{:?}: initialization failed: {e}", sequence.modes)))?;
        let schedule = sequence.schedule(config.horizon);
        let result = solve(
            model,
            cost,
            x0,
            &inputs,
            &schedule,
            &config.with_cap(config.final_iterations),
        )?;
        let leaf = LeafCandidate {
            sequence: sequence.clone(),
            trajectory: Some(result.trajectory.clone()),
            approx_cost: result.cost,
            iterations: result.iterations,
            cost_log: result.cost_log.clone(),
            pruned: None,
        };
        return Ok(HybridPlan {
            best: sequence,
            trajectory: result.trajectory,
            law: result.law,
            cost: result.cost,
            converged: result.converged,
            final_iterations: result.iterations,
            cost_log: result.cost_log,
            leaves: vec![leaf],
            timing: PlanTiming {
                tree_seconds: 0.0,
                final_seconds: start.elapsed().as_secs_f64(),
            },
        });
    }

    let start = Instant::now();
    let roots = root_nodes(model, cost, x0, config);
    let mut leaves = roots.clone();
    for switches in 1..=config.max_switches {
        leaves.extend(explore(model, cost, x0, &roots, switches, config));
    }
    debug_assert_eq!(leaves.len(), sequences.len());
    let tree_seconds = start.elapsed().as_secs_f64();
    for leaf in &leaves {
        debug!(
            "leaf {:?} at {:?}: cost {:.6e}{}",
            leaf.sequence.modes,
            leaf.sequence.switch_steps,
            leaf.approx_cost,
            leaf.pruned
                .as_deref()
                .map(|r| format!(" (pruned: {r})"))
                .unwrap_or_default()
        );
    }

    let Some(winner) = leaves.iter().filter(|l| !l.is_pruned()).min_by(|a, b| rank(a, b)) else {
        let reasons: Vec<String> = leaves
            .iter()
            .map(|l| format!("{:?}: {}", l.sequence.modes, l.pruned.as_deref().unwrap_or("?")))
            .collect();
        return Err(Error::NoPlan(format!("all leaves pruned; {}", reasons.join("; "))));
    };
    info!(
        "best sequence {:?} (cost {:.6e})",
        winner.sequence.modes, winner.approx_cost
    );

    let start = Instant::now();
    let warm = winner.trajectory.as_ref().expect("unpruned leaves keep trajectories");
    let schedule = winner.sequence.schedule(config.horizon);
    let result = solve(
        model,
        cost,
        x0,
        &warm.inputs,
        &schedule,
        &config.with_cap(config.final_iterations),
    )?;
    let final_seconds = start.elapsed().as_secs_f64();
    Ok(HybridPlan {
        best: winner.sequence.clone(),
        trajectory: result.trajectory,
        law: result.law,
        cost: result.cost,
        converged: result.converged,
        final_iterations: result.iterations,
        cost_log: result.cost_log,
        leaves,
        timing: PlanTiming {
            tree_seconds,
            final_seconds,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafRecord {
    pub modes: Vec<ModeId>,
    pub switch_steps: Vec<usize>,
    /// `None` when pruned.
    pub approx_cost: Option<f64>,
    pub iterations: usize,
    pub pruned: Option<String>,
}

/// Serialized form of a [`HybridPlan`]; gains are flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub modes: Vec<ModeId>,
    pub switch_steps: Vec<usize>,
    pub cost: f64,
    pub converged: bool,
    pub final_iterations: usize,
    pub cost_log: Vec<f64>,
    pub trajectory: TrajectoryRecord,
    pub feedforward: Vec<Vec<f64>>,
    pub gains: Vec<Vec<f64>>,
    pub leaves: Vec<LeafRecord>,
    pub timing: PlanTiming,
}

impl HybridPlan {
    pub fn to_record(&self, model: &dyn DynamicsModel) -> PlanRecord {
        PlanRecord {
            modes: self.best.modes.clone(),
            switch_steps: self.best.switch_steps.clone(),
            cost: self.cost,
            converged: self.converged,
            final_iterations: self.final_iterations,
            cost_log: self.cost_log.clone(),
            trajectory: self.trajectory.to_record(model),
            feedforward: self
                .law
                .feedforward
                .iter()
                .map(|k| k.iter().copied().collect())
                .collect(),
            gains: self
                .law
                .feedback
                .iter()
                .map(|g| g.transpose().iter().copied().collect())
                .collect(),
            leaves: self
                .leaves
                .iter()
                .map(|l| LeafRecord {
                    modes: l.sequence.modes.clone(),
                    switch_steps: l.sequence.switch_steps.clone(),
                    approx_cost: (!l.is_pruned()).then_some(l.approx_cost),
                    iterations: l.iterations,
                    pruned: l.pruned.clone(),
                })
                .collect(),
            timing: self.timing,
        }
    }
}

impl PlanRecord {
    pub fn to_plan(&self) -> Result<HybridPlan> {
        let trajectory = self.trajectory.to_trajectory()?;
        let horizon = trajectory.horizon();
        let n = trajectory.initial_state().len();
        let m = trajectory.inputs.first().map_or(0, |u| u.len());
        if self.gains.len() != horizon || self.feedforward.len() != horizon {
            return Err(Error::Dimension {
                context: "plan gains",
                expected: horizon,
                actual: self.gains.len(),
            });
        }
        let mut feedback = Vec::with_capacity(horizon);
        for g in &self.gains {
            if g.len() != m * n {
                return Err(Error::Dimension {
                    context: "gain entries",
                    expected: m * n,
                    actual: g.len(),
                });
            }
            feedback.push(DMatrix::from_row_slice(m, n, g));
        }
        let feedforward = self.feedforward.iter().map(|k| DVector::from_vec(k.clone())).collect();
        let best = ModeSequence {
            modes: self.modes.clone(),
            switch_steps: self.switch_steps.clone(),
        };
        if best.schedule(horizon) != trajectory.modes {
            return Err(Error::Config("plan mode schedule does not match its trajectory".into()));
        }
        Ok(HybridPlan {
            best,
            trajectory,
            law: ControlLaw { feedforward, feedback },
            cost: self.cost,
            converged: self.converged,
            final_iterations: self.final_iterations,
            cost_log: self.cost_log.clone(),
            leaves: self
                .leaves
                .iter()
                .map(|l| LeafCandidate {
                    sequence: ModeSequence {
                        modes: l.modes.clone(),
                        switch_steps: l.switch_steps.clone(),
                    },
                    trajectory: None,
                    approx_cost: l.approx_cost.unwrap_or(f64::INFINITY),
                    iterations: l.iterations,
                    cost_log: Vec::new(),
                    pruned: l.pruned.clone(),
                })
                .collect(),
            timing: self.timing,
        })
    }
}
