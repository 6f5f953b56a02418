//! The `plan`, `simulate` and `ablate` commands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hddp::error::Error;
use hddp::hybrid::{plan, PlanRecord};
use hddp::sim::{
    ablation_sweep, pusher_positions, simulate, success, terminal_error, AblationRecord, Execution, SweepCase,
};
use hddp::trajectory::DynamicsModel;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, Model, ModelKind};

/// Exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// At least one initial state had every leaf pruned.
    NoPlan,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Self::Ok => 0,
            Self::NoPlan => 2,
        }
    }
}

/// Command-line overrides shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Zero every wall-clock field so outputs are byte-stable.
    pub no_timing: bool,
}

impl Overrides {
    fn out_dir(&self, exp: &Experiment) -> PathBuf {
        self.out.clone().unwrap_or_else(|| exp.output_dir.clone())
    }
}

/// A plan file: the plan plus enough context to check it against a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub experiment: String,
    pub model: ModelKind,
    pub initial_state: Vec<f64>,
    pub goal: Vec<f64>,
    pub success: bool,
    pub terminal_error: Vec<f64>,
    pub plan: PlanRecord,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// State in display units: angular coordinates in degrees.
fn display(model: &dyn DynamicsModel, kind: ModelKind, x: &DVector<f64>) -> String {
    let mut deg = model.angular_coordinates();
    if kind == ModelKind::Pivoting {
        deg.push(1);
    }
    let parts: Vec<String> = x
        .iter()
        .enumerate()
        .map(
            |(i, v)| match (deg.contains(&i), kind == ModelKind::Pivoting && i == 1) {
                (true, true) => format!("{:.2}°/s", v.to_degrees()),
                (true, false) => format!("{:.2}°", v.to_degrees()),
                _ => format!("{v:.4}"),
            },
        )
        .collect();
    format!("({})", parts.join(", "))
}

pub fn cmd_plan(exp: &Experiment, overrides: &Overrides, out: &mut dyn Write) -> Result<Status> {
    let dir = overrides.out_dir(exp);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let model = exp.model.as_dyn();
    let kind = exp.model.kind();
    let p = &exp.planner;
    writeln!(
        out,
        "{}: {} modes {:?}, N_s={}, N_i={}, N={}",
        exp.name,
        kind.label(),
        p.modes,
        p.max_switches,
        p.tree_iterations,
        p.horizon
    )?;
    let mut status = Status::Ok;
    for (i, x0) in exp.initial_states.iter().enumerate() {
        let start = display(model, kind, x0);
        match plan(model, &exp.cost, x0, p) {
            Ok(result) => {
                let final_state = result.trajectory.final_state();
                let ok = success(final_state, &exp.cost.goal, &exp.criteria);
                let mut record = result.to_record(model);
                if overrides.no_timing {
                    record.timing.tree_seconds = 0.0;
                    record.timing.final_seconds = 0.0;
                }
                writeln!(
                    out,
                    "  [{i}] {start} -> {}  modes {:?} switches {:?} cost {:.6e} success {} tree {:.3}s final {:.3}s",
                    display(model, kind, final_state),
                    record.modes,
                    record.switch_steps,
                    record.cost,
                    ok,
                    record.timing.tree_seconds,
                    record.timing.final_seconds,
                )?;
                let file = PlanFile {
                    experiment: exp.name.clone(),
                    model: kind,
                    initial_state: x0.iter().copied().collect(),
                    goal: exp.cost.goal.iter().copied().collect(),
                    success: ok,
                    terminal_error: terminal_error(final_state, &exp.cost.goal, &exp.criteria)?
                        .iter()
                        .copied()
                        .collect(),
                    plan: record,
                };
                write_json(&dir.join(format!("plan_{i:03}.json")), &file)?;
            }
            Err(Error::NoPlan(reason)) => {
                writeln!(out, "  [{i}] {start} -> no plan: {reason}")?;
                status = Status::NoPlan;
            }
            Err(e) => return Err(e).with_context(|| format!("planning from initial state {i}")),
        }
    }
    Ok(status)
}

/// Loads a plan file and checks it against the experiment's model.
pub fn load_plan(exp: &Experiment, path: &Path) -> Result<PlanFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: PlanFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let model = exp.model.as_dyn();
    if file.model != exp.model.kind() {
        bail!(
            "plan is for {} but the config selects {}",
            file.model.label(),
            exp.model.kind().label()
        );
    }
    let traj = &file.plan.trajectory;
    if traj.states.iter().any(|x| x.len() != model.state_dim())
        || traj.inputs.iter().any(|u| u.len() != model.input_dim())
    {
        bail!(
            "plan dimensions do not match the model (state {}, input {})",
            model.state_dim(),
            model.input_dim()
        );
    }
    let known = model.modes();
    if let Some(m) = traj.modes.iter().find(|m| !known.contains(m)) {
        bail!("plan uses mode {m}, which the model does not have");
    }
    Ok(file)
}

#[derive(Debug, Serialize)]
struct PusherRow {
    step: usize,
    x: f64,
    y: f64,
    mode: usize,
    relocated: bool,
}

fn execution_label(e: Execution) -> &'static str {
    match e {
        Execution::ClosedLoop => "closed-loop",
        Execution::OpenLoop => "open-loop",
    }
}

fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub fn cmd_simulate(exp: &Experiment, plan_path: &Path, overrides: &Overrides, out: &mut dyn Write) -> Result<Status> {
    let file = load_plan(exp, plan_path)?;
    let nominal = file.plan.to_plan()?;
    let dir = overrides.out_dir(exp);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let model = exp.model.as_dyn();
    let kind = exp.model.kind();
    let base_seed = overrides.seed.unwrap_or(exp.noise.seed);
    writeln!(
        out,
        "{}: simulating {} ({} runs per execution)",
        exp.name,
        plan_path.display(),
        exp.runs
    )?;

    for &execution in &exp.executions {
        let label = execution_label(execution);
        let mut errors = Vec::with_capacity(exp.runs);
        for r in 0..exp.runs {
            let seed = base_seed + r as u64;
            let result = simulate(
                model,
                &nominal,
                &exp.cost.goal,
                &exp.noise.with_seed(seed),
                &exp.criteria,
                execution,
            )?;
            let err_text = if result.diverged_at.is_some() {
                format!("diverged at step {}", result.diverged_at.unwrap_or_default())
            } else {
                format!("error {}", display(model, kind, &result.terminal_error))
            };
            writeln!(out, "  {label} seed {seed}: success {} {err_text}", result.success)?;
            write_json(
                &dir.join(format!("sim_{label}_{r:02}.json")),
                &result.to_record(model, seed),
            )?;
            if let Model::Pushing(m) = &exp.model {
                let mut w = csv::Writer::from_path(dir.join(format!("pusher_{label}_{r:02}.csv")))?;
                for p in pusher_positions(&result.trajectory, &m.params) {
                    w.serialize(PusherRow {
                        step: p.step,
                        x: p.x,
                        y: p.y,
                        mode: p.mode,
                        relocated: p.relocated,
                    })?;
                }
                w.flush()?;
            }
            errors.push(result.terminal_error);
        }
        let sd = DVector::from_iterator(
            model.state_dim(),
            (0..model.state_dim()).map(|i| sample_sd(&errors.iter().map(|e| e[i]).collect::<Vec<_>>())),
        );
        writeln!(out, "  {label} terminal error s.d. {}", display(model, kind, &sd))?;
    }
    Ok(Status::Ok)
}

#[derive(Debug, Serialize)]
struct AblationRow<'a> {
    experiment: &'a str,
    axis: &'a str,
    value: usize,
    contact_set_size: usize,
    max_switches: usize,
    tree_iterations: usize,
    horizon: usize,
    n: usize,
    successes: usize,
    success_rate: f64,
    plan_time_tree_mean: f64,
    plan_time_tree_sd: f64,
    plan_time_final_mean: f64,
    plan_time_final_sd: f64,
}

/// Runs the configured sweep and returns its records (timings zeroed on request).
pub fn run_ablation(exp: &Experiment, overrides: &Overrides) -> Result<Vec<AblationRecord>> {
    let Some(ablation) = &exp.ablation else {
        bail!("the config has no [ablation] section");
    };
    let cases: Vec<SweepCase> = ablation
        .models
        .iter()
        .flat_map(|m| {
            exp.initial_states.iter().map(move |x0| SweepCase {
                model: m.as_dyn(),
                x0: x0.clone(),
            })
        })
        .collect();
    let mut records = ablation_sweep(&cases, &exp.cost, &exp.criteria, &exp.planner, &ablation.points)?;
    if overrides.no_timing {
        for r in &mut records {
            r.tree_time_mean = 0.0;
            r.tree_time_sd = 0.0;
            r.final_time_mean = 0.0;
            r.final_time_sd = 0.0;
        }
    }
    Ok(records)
}

pub fn cmd_ablate(exp: &Experiment, overrides: &Overrides, out: &mut dyn Write) -> Result<Status> {
    let records = run_ablation(exp, overrides)?;
    let ablation = exp.ablation.as_ref().expect("checked by run_ablation");
    let axis = ablation.axis;
    let value_of = |r: &AblationRecord| match axis {
        crate::config::AblationAxis::MaxSwitches => r.max_switches,
        crate::config::AblationAxis::TreeIterations => r.tree_iterations,
        crate::config::AblationAxis::Horizon => r.horizon,
    };

    let dir = overrides.out_dir(exp);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &records {
        w.serialize(AblationRow {
            experiment: &exp.name,
            axis: axis.label(),
            value: value_of(r),
            contact_set_size: r.contact_set_size,
            max_switches: r.max_switches,
            tree_iterations: r.tree_iterations,
            horizon: r.horizon,
            n: r.samples,
            successes: r.successes,
            success_rate: r.success_rate,
            plan_time_tree_mean: r.tree_time_mean,
            plan_time_tree_sd: r.tree_time_sd,
            plan_time_final_mean: r.final_time_mean,
            plan_time_final_sd: r.final_time_sd,
        })?;
    }
    w.flush()?;

    let sizes: Vec<usize> = {
        let mut s: Vec<usize> = records.iter().map(|r| r.contact_set_size).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    writeln!(
        out,
        "{}: success rate by {} (rows) and contact-set size (columns)",
        exp.name,
        axis.label()
    )?;
    write!(out, "{:>16}", axis.label())?;
    for s in &sizes {
        write!(out, "{s:>8}")?;
    }
    writeln!(out)?;
    for point in &ablation.points {
        let row: Vec<&AblationRecord> = records
            .iter()
            .filter(|r| {
                r.max_switches == point.max_switches
                    && r.tree_iterations == point.tree_iterations
                    && r.horizon == point.horizon
            })
            .collect();
        write!(out, "{:>16}", row.first().map(|r| value_of(r)).unwrap_or_default())?;
        for r in row {
            write!(out, "{:>8.3}", r.success_rate)?;
        }
        writeln!(out)?;
    }
    writeln!(out, "wrote {}", path.display())?;
    Ok(Status::Ok)
}
