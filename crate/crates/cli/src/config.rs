//! Experiment configuration: TOML schema, model-specific defaults and validation.
//!
//! Angular state coordinates (pushing θ; pivoting θ and θ̇) are written in degrees
//! and degrees per second in initial states, goals, success thresholds and state
//! noise. Cost weights apply to the internal radian values.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hddp::ddp::DdpConfig;
use hddp::hybrid::HybridConfig;
use hddp::primitives::{PivotingModel, PivotingParams, PushingModel, PushingParams};
use hddp::sim::{AblationPoint, Execution, NoiseModel, SuccessCriteria};
use hddp::trajectory::{DynamicsModel, ModeId, QuadraticCost};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::presets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pushing,
    Pivoting,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Pushing => "pushing",
            Self::Pivoting => "pivoting",
        }
    }
}

/// The file as written. Every section is optional; missing values take the
/// replication defaults of the selected model.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
    pub pushing: Option<toml::Table>,
    pub pivoting: Option<toml::Table>,
    #[serde(default)]
    pub planner: PlannerSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub success: SuccessSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    pub ablation: Option<AblationSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub max_switches: Option<usize>,
    pub modes: Option<Vec<ModeId>>,
    pub horizon: Option<usize>,
    pub tree_iterations: Option<usize>,
    pub final_iterations: Option<usize>,
    pub ddp: Option<DdpConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: Option<Vec<f64>>,
    pub r: Option<Vec<f64>>,
    pub q_terminal: Option<Vec<f64>>,
    pub goal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// Explicit initial states.
    pub states: Option<Vec<Vec<f64>>>,
    /// One list of values per state coordinate; the Cartesian product is used.
    pub grid: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub state_sd: Option<Vec<f64>>,
    pub input_sd: Option<Vec<f64>>,
    pub input_bias_sd: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessSection {
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// Seeds `seed, seed + 1, ...` are used for the runs of every execution mode.
    pub runs: usize,
    pub executions: Vec<Execution>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            runs: 1,
            executions: vec![Execution::ClosedLoop],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    MaxSwitches,
    TreeIterations,
    Horizon,
}

impl AblationAxis {
    pub fn label(self) -> &'static str {
        match self {
            Self::MaxSwitches => "max_switches",
            Self::TreeIterations => "tree_iterations",
            Self::Horizon => "horizon",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    pub vary: AblationAxis,
    pub values: Vec<usize>,
    /// Pivoting only: width/height ratios, each planned from every initial state.
    pub aspect_ratios: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// A model with concrete parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Pushing(PushingModel),
    Pivoting(PivotingModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Pushing(_) => ModelKind::Pushing,
            Self::Pivoting(_) => ModelKind::Pivoting,
        }
    }

    pub fn as_dyn(&self) -> &dyn DynamicsModel {
        match self {
            Self::Pushing(m) => m,
            Self::Pivoting(m) => m,
        }
    }
}

/// Resolved ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub axis: AblationAxis,
    pub points: Vec<AblationPoint>,
    /// One model per aspect ratio (pivoting) or the configured model.
    pub models: Vec<Model>,
}

/// A fully resolved experiment in internal (SI, radian) units.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub name: String,
    pub model: Model,
    pub planner: HybridConfig,
    pub cost: QuadraticCost,
    pub initial_states: Vec<DVector<f64>>,
    pub noise: NoiseModel,
    pub criteria: SuccessCriteria,
    pub runs: usize,
    pub executions: Vec<Execution>,
    pub ablation: Option<Ablation>,
    pub output_dir: PathBuf,
}

fn angular(kind: ModelKind) -> Vec<usize> {
    match kind {
        ModelKind::Pushing => vec![2],
        ModelKind::Pivoting => vec![0, 1],
    }
}

/// Converts the degree-valued coordinates of a state-shaped vector to radians.
fn to_internal(kind: ModelKind, values: &[f64]) -> DVector<f64> {
    let mut v = DVector::from_column_slice(values);
    for i in angular(kind) {
        if i < v.len() {
            v[i] = v[i].to_radians();
        }
    }
    v
}

fn replication_pushing() -> PushingParams {
    PushingParams {
        mu_ground: 0.3,
        ..PushingParams::default()
    }
}

/// Overlays `table` on `base`, so a partial section keeps the replication values.
fn overlay<T: Serialize + for<'de> Deserialize<'de>>(
    base: &T,
    table: Option<&toml::Table>,
    section: &str,
) -> Result<T> {
    let mut merged = toml::Table::try_from(base).context("serializing defaults")?;
    if let Some(t) = table {
        for (k, v) in t {
            merged.insert(k.clone(), v.clone());
        }
    }
    merged.try_into().map_err(|e| anyhow!("[{section}]: {e}"))
}

fn check_len(field: &str, values: &[f64], expected: usize) -> Result<()> {
    if values.len() != expected {
        bail!("{field}: expected {expected} values, got {}", values.len());
    }
    if values.iter().any(|v| !v.is_finite()) {
        bail!("{field}: values must be finite");
    }
    Ok(())
}

fn pushing_start_circle() -> Vec<Vec<f64>> {
    (0..8)
        .map(|i| {
            let a = (45.0 * i as f64).to_radians();
            let (s, c) = a.sin_cos();
            // Round away floating noise so presets print cleanly.
            vec![(0.3 * c * 1e9).round() / 1e9, (0.3 * s * 1e9).round() / 1e9, 0.0]
        })
        .collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("invalid configuration: {e}"))
    }

    /// Reads a config file, or an embedded preset when `source` names one and is
    /// not an existing path.
    pub fn load(source: &str) -> Result<Self> {
        let path = Path::new(source);
        let text = if path.exists() {
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        } else if let Some(text) = presets::get(source) {
            text.to_string()
        } else {
            bail!(
                "no config file or preset named {source:?}; presets: {}",
                presets::names().join(", ")
            );
        };
        Self::parse(&text).with_context(|| format!("in {source}"))
    }

    pub fn resolve(&self) -> Result<Experiment> {
        let kind = self.model;
        let model = match kind {
            ModelKind::Pushing => {
                if self.pivoting.is_some() {
                    bail!("[pivoting] given for a pushing experiment");
                }
                let params = overlay(&replication_pushing(), self.pushing.as_ref(), "pushing")?;
                params.validate().map_err(|e| anyhow!("[pushing]: {e}"))?;
                Model::Pushing(PushingModel::new(params))
            }
            ModelKind::Pivoting => {
                if self.pushing.is_some() {
                    bail!("[pushing] given for a pivoting experiment");
                }
                let params = overlay(&PivotingParams::default(), self.pivoting.as_ref(), "pivoting")?;
                params.validate().map_err(|e| anyhow!("[pivoting]: {e}"))?;
                Model::Pivoting(PivotingModel::new(params))
            }
        };
        let dynamics = model.as_dyn();
        let (n, m) = (dynamics.state_dim(), dynamics.input_dim());

        let p = &self.planner;
        let defaults = match kind {
            ModelKind::Pushing => (1, vec![0, 1, 3], 24),
            ModelKind::Pivoting => (2, vec![2, 3], 16),
        };
        let planner = HybridConfig {
            max_switches: p.max_switches.unwrap_or(defaults.0),
            modes: p.modes.clone().unwrap_or(defaults.1),
            horizon: p.horizon.unwrap_or(defaults.2),
            tree_iterations: p.tree_iterations.unwrap_or(10),
            final_iterations: p.final_iterations.unwrap_or(100),
            ddp: p.ddp.clone().unwrap_or_default(),
        };
        planner.validate(dynamics).map_err(|e| anyhow!("[planner]: {e}"))?;

        let c = &self.cost;
        let (q, r, qn, goal) = match kind {
            ModelKind::Pushing => (
                vec![1.0, 1.0, 0.1],
                vec![0.01, 0.01],
                vec![100.0, 100.0, 10.0],
                vec![0.0; 3],
            ),
            ModelKind::Pivoting => (vec![1.0, 0.01], vec![0.001; 4], vec![100.0, 10.0], vec![10.0, 0.0]),
        };
        let q = c.q.clone().unwrap_or(q);
        let r = c.r.clone().unwrap_or(if m == 3 { vec![0.01, 0.01, 0.0] } else { r });
        let qn = c.q_terminal.clone().unwrap_or(qn);
        let goal = c.goal.clone().unwrap_or(goal);
        check_len("cost.q", &q, n)?;
        check_len("cost.r", &r, m)?;
        check_len("cost.q_terminal", &qn, n)?;
        check_len("cost.goal", &goal, n)?;
        let cost = QuadraticCost::new(
            DVector::from_vec(q),
            DVector::from_vec(r),
            DVector::from_vec(qn),
            to_internal(kind, &goal),
            dynamics.angular_coordinates(),
        )
        .map_err(|e| anyhow!("[cost]: {e}"))?;

        let initial_states = self.initial_states(kind, n)?;

        let noise_default = match kind {
            ModelKind::Pushing => NoiseModel::pushing_default(m),
            ModelKind::Pivoting => NoiseModel::pivoting_default(),
        };
        let ns = &self.noise;
        let noise = NoiseModel {
            state_sd: match &ns.state_sd {
                Some(v) => {
                    check_len("noise.state_sd", v, n)?;
                    to_internal(kind, v).iter().copied().collect()
                }
                None => noise_default.state_sd.clone(),
            },
            input_sd: ns.input_sd.clone().unwrap_or(noise_default.input_sd.clone()),
            input_bias_sd: ns.input_bias_sd.clone().unwrap_or(noise_default.input_bias_sd.clone()),
            seed: self.seed,
        };
        noise.validate(n, m).map_err(|e| anyhow!("[noise]: {e}"))?;

        let mut criteria = match kind {
            ModelKind::Pushing => SuccessCriteria::pushing(),
            ModelKind::Pivoting => SuccessCriteria::pivoting(),
        };
        if let Some(t) = &self.success.thresholds {
            check_len("success.thresholds", t, n)?;
            criteria.thresholds = to_internal(kind, t).iter().copied().collect();
        }
        criteria.validate().map_err(|e| anyhow!("[success]: {e}"))?;

        if self.simulate.runs == 0 || self.simulate.executions.is_empty() {
            bail!("[simulate]: runs and executions must be non-empty");
        }

        let ablation = self
            .ablation
            .as_ref()
            .map(|a| self.resolve_ablation(a, &model, &planner))
            .transpose()?;

        Ok(Experiment {
            name: self.name.clone().unwrap_or_else(|| "experiment".into()),
            model,
            planner,
            cost,
            initial_states,
            noise,
            criteria,
            runs: self.simulate.runs,
            executions: self.simulate.executions.clone(),
            ablation,
            output_dir: self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        })
    }

    fn initial_states(&self, kind: ModelKind, n: usize) -> Result<Vec<DVector<f64>>> {
        let raw: Vec<Vec<f64>> = match (&self.initial.states, &self.initial.grid) {
            (Some(_), Some(_)) => bail!("[initial]: give either states or grid, not both"),
            (Some(states), None) => states.clone(),
            (None, Some(axes)) => {
                if axes.len() != n || axes.iter().any(Vec::is_empty) {
                    bail!("initial.grid: expected {n} non-empty axes");
                }
                axes.iter().fold(vec![Vec::new()], |acc, axis| {
                    acc.iter()
                        .flat_map(|prefix| {
                            axis.iter().map(move |&v| {
                                let mut next = prefix.clone();
                                next.push(v);
                                next
                            })
                        })
                        .collect()
                })
            }
            (None, None) => match kind {
                ModelKind::Pushing => pushing_start_circle(),
                ModelKind::Pivoting => vec![vec![80.0, 0.0]],
            },
        };
        if raw.is_empty() {
            bail!("[initial]: at least one initial state is required");
        }
        raw.iter()
            .enumerate()
            .map(|(i, s)| {
                check_len(&format!("initial.states[{i}]"), s, n)?;
                Ok(to_internal(kind, s))
            })
            .collect()
    }

    fn resolve_ablation(&self, a: &AblationSection, model: &Model, planner: &HybridConfig) -> Result<Ablation> {
        if a.values.is_empty() {
            bail!("ablation.values: the grid is empty");
        }
        let points = a
            .values
            .iter()
            .map(|&v| {
                let mut p = AblationPoint {
                    max_switches: planner.max_switches,
                    tree_iterations: planner.tree_iterations,
                    horizon: planner.horizon,
                };
                match a.vary {
                    AblationAxis::MaxSwitches => p.max_switches = v,
                    AblationAxis::TreeIterations => p.tree_iterations = v,
                    AblationAxis::Horizon => p.horizon = v,
                }
                if p.horizon <= p.max_switches {
                    bail!(
                        "ablation.values: horizon {} too short for {} switches",
                        p.horizon,
                        p.max_switches
                    );
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        let models = match (model, &a.aspect_ratios) {
            (Model::Pivoting(base), Some(ratios)) => ratios
                .iter()
                .map(|&aspect| {
                    let params = PivotingParams {
                        width: aspect * base.params.height,
                        ..base.params.clone()
                    };
                    params.validate().map_err(|e| anyhow!("ablation.aspect_ratios: {e}"))?;
                    Ok(Model::Pivoting(PivotingModel::new(params)))
                })
                .collect::<Result<Vec<_>>>()?,
            (Model::Pushing(_), Some(_)) => bail!("ablation.aspect_ratios applies to pivoting only"),
            (_, None) => vec![model.clone()],
        };
        if models.is_empty() {
            bail!("ablation.aspect_ratios: at least one ratio is required");
        }
        Ok(Ablation {
            axis: a.vary,
            points,
            models,
        })
    }
}

/// Loads and resolves in one step.
pub fn load_experiment(source: &str) -> Result<Experiment> {
    ExperimentConfig::load(source)?.resolve()
}
