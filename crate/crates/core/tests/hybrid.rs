mod common;

use common::scenarios::{pivoting_cost, pivoting_model, pose, pushing_cost, pushing_model};
use hddp::ddp::solve;
use hddp::hybrid::{plan, static_equilibrium_input, HybridConfig, HybridPlan, PlanRecord};
use hddp::primitives::{corner, corner_frame, rotation, PivotingParams};
use hddp::qp::project_feasible;
use hddp::trajectory::{DynamicsModel, ModeId};
use nalgebra::{DVector, Vector2};

fn pushing_config(modes: Vec<ModeId>) -> HybridConfig {
    HybridConfig {
        max_switches: 1,
        modes,
        horizon: 24,
        tree_iterations: 10,
        ..HybridConfig::default()
    }
}

/// Static balance of the pivoting body checked by brute force over the corner normal
/// force: solve the moment balance about the pivot for the tangential force, then the
/// ground reaction from the force balance, and test both friction triangles.
fn equilibrium_exists(theta: f64, mode: ModeId, p: &PivotingParams) -> bool {
    let cross = |a: Vector2<f64>, b: Vector2<f64>| a.x * b.y - a.y * b.x;
    let rot = rotation(theta);
    let arm = rot * (corner(mode, p) - p.pivot());
    let com = rot * (-p.pivot());
    let weight = Vector2::new(0.0, -p.mass * p.gravity);
    let (n, t) = corner_frame(mode);
    let (n, t) = (rot * n, rot * t);
    let steps = 20_000;
    (0..=steps).any(|i| {
        let f_n = p.n_max * i as f64 / steps as f64;
        // cross(arm, f_n n + f_t t) + cross(com, weight) = 0
        let lever_t = cross(arm, t);
        let residual = f_n * cross(arm, n) + cross(com, weight);
        let f_t = if lever_t.abs() > 1e-12 {
            -residual / lever_t
        } else if residual.abs() < 1e-9 {
            0.0
        } else {
            return false;
        };
        if f_t.abs() > p.mu * f_n + 1e-9 {
            return false;
        }
        let ground = -(weight + n * f_n + t * f_t);
        ground.y >= -1e-9 && ground.y <= p.n_max && ground.x.abs() <= p.mu * ground.y + 1e-9
    })
}

#[test]
fn balanced_square_needs_no_finger_force() {
    let model = pivoting_model(1.0);
    let x = DVector::from_vec(vec![45f64.to_radians(), 0.0]);
    for mode in [1, 2, 3] {
        let u = static_equilibrium_input(&model, &x, mode).unwrap();
        assert!(u[0].abs() < 1e-9 && u[1].abs() < 1e-9, "mode {mode}: {u}");
        assert!((u[3] - model.params.mass * model.params.gravity).abs() < 1e-9);
        assert!(u[2].abs() < 1e-9);
    }
}

#[test]
fn pivoting_equilibrium_matches_brute_force() {
    let mut checked = 0;
    for aspect in [0.5, 1.0, 1.5] {
        let model = pivoting_model(aspect);
        for deg in (0..=90).step_by(5) {
            let theta = (deg as f64).to_radians();
            let x = DVector::from_vec(vec![theta, 0.0]);
            for mode in [1, 2, 3] {
                let qp = static_equilibrium_input(&model, &x, mode).is_ok();
                let oracle = equilibrium_exists(theta, mode, &model.params);
                assert_eq!(qp, oracle, "aspect {aspect}, {deg}°, mode {mode}");
                checked += usize::from(!oracle);
            }
        }
    }
    // The sweep must exercise infeasible cases, not only trivially feasible ones.
    assert!(checked > 0);
}

#[test]
fn lower_corner_cannot_hold_at_eighty_degrees() {
    let model = pivoting_model(1.0);
    let x = DVector::from_vec(vec![80f64.to_radians(), 0.0]);
    assert!(static_equilibrium_input(&model, &x, 1).is_err());
    assert!(!equilibrium_exists(80f64.to_radians(), 1, &model.params));
}

#[test]
fn pushing_is_never_pruned_by_equilibrium() {
    let model = pushing_model();
    let result = plan(
        &model,
        &pushing_cost(),
        &pose(0.2, -0.1, 30.0),
        &pushing_config(vec![0, 1, 2, 3]),
    )
    .unwrap();
    assert_eq!(result.leaves.len(), 4 + 12);
    assert!(result.leaves.iter().all(|l| !l.is_pruned()), "{:?}", result.leaves);
}

#[test]
fn single_contact_is_one_constrained_solve() {
    let model = pushing_model();
    let cost = pushing_cost();
    let x0 = pose(-0.3, 0.0, 0.0);
    let config = pushing_config(vec![0]);
    let result = plan(&model, &cost, &x0, &config).unwrap();
    assert_eq!(result.leaves.len(), 1);
    assert_eq!(result.timing.tree_seconds, 0.0);
    assert!(result.best.switch_steps.is_empty());

    // Same solve by hand: equilibrium (zero) inputs, final iteration cap.
    let hold = static_equilibrium_input(&model, &x0, 0).unwrap();
    let u0 = project_feasible(&hold, &model.constraints(&x0, 0)).unwrap();
    let direct = solve(
        &model,
        &cost,
        &x0,
        &vec![u0; config.horizon],
        &vec![0; config.horizon],
        &hddp::ddp::DdpConfig {
            max_iterations: config.final_iterations,
            ..config.ddp.clone()
        },
    )
    .unwrap();
    assert_eq!(direct.trajectory, result.trajectory);
    assert_eq!(direct.cost, result.cost);
}

#[test]
fn more_contacts_reach_starts_behind_the_goal() {
    let model = pushing_model();
    let cost = pushing_cost();
    let x0 = pose(0.3, 0.0, 0.0);
    let goal = |p: &HybridPlan| {
        let f = p.trajectory.final_state();
        f[0].abs() < 0.05 && f[1].abs() < 0.05 && f[2].abs() < 5f64.to_radians()
    };
    let left = plan(&model, &cost, &x0, &pushing_config(vec![0])).unwrap();
    assert!(!goal(&left));
    let three = plan(&model, &cost, &x0, &pushing_config(vec![0, 1, 3])).unwrap();
    assert!(goal(&three));
}

#[test]
fn winner_is_cheapest_unpruned_leaf() {
    let model = pushing_model();
    let result = plan(
        &model,
        &pushing_cost(),
        &pose(0.1, 0.2, -20.0),
        &pushing_config(vec![0, 1, 3]),
    )
    .unwrap();
    let best = result
        .leaves
        .iter()
        .filter(|l| !l.is_pruned())
        .map(|l| l.approx_cost)
        .fold(f64::INFINITY, f64::min);
    let winner = result.leaves.iter().find(|l| l.sequence == result.best).unwrap();
    assert_eq!(winner.approx_cost, best);
    assert!(result.cost <= winner.approx_cost);
}

#[test]
fn zero_final_iterations_returns_winning_leaf() {
    let model = pushing_model();
    let config = HybridConfig {
        final_iterations: 0,
        ..pushing_config(vec![0, 1, 2])
    };
    let result = plan(&model, &pushing_cost(), &pose(0.1, -0.2, 10.0), &config).unwrap();
    let winner = result.leaves.iter().find(|l| l.sequence == result.best).unwrap();
    assert_eq!(Some(&result.trajectory), winner.trajectory.as_ref());
    assert!(!result.converged);
}

#[test]
fn superset_leaves_repeat_subset_leaves() {
    // A node depends only on its own mode prefix, so every sequence available to a
    // subset of modes is optimized identically in the superset.
    let model = pushing_model();
    let cost = pushing_cost();
    let x0 = pose(0.15, 0.1, 25.0);
    let small = plan(&model, &cost, &x0, &pushing_config(vec![0, 3])).unwrap();
    let large = plan(&model, &cost, &x0, &pushing_config(vec![0, 1, 3])).unwrap();
    for leaf in &small.leaves {
        let twin = large.leaves.iter().find(|l| l.sequence == leaf.sequence).unwrap();
        assert_eq!(twin.approx_cost, leaf.approx_cost);
    }
    let best = |p: &HybridPlan| {
        p.leaves
            .iter()
            .filter(|l| !l.is_pruned())
            .map(|l| l.approx_cost)
            .fold(f64::INFINITY, f64::min)
    };
    assert!(best(&large) <= best(&small));
}

fn stripped(mut r: PlanRecord) -> PlanRecord {
    r.timing.tree_seconds = 0.0;
    r.timing.final_seconds = 0.0;
    r
}

#[test]
fn plans_do_not_depend_on_worker_count() {
    let model = pivoting_model(1.0);
    let config = HybridConfig {
        max_switches: 2,
        modes: vec![1, 2, 3],
        horizon: 16,
        ..HybridConfig::default()
    };
    let x0 = DVector::from_vec(vec![80f64.to_radians(), 0.0]);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| plan(&model, &pivoting_cost(), &x0, &config).unwrap())
    };
    let a = serde_json::to_string(&stripped(run(1).to_record(&model))).unwrap();
    let b = serde_json::to_string(&stripped(run(4).to_record(&model))).unwrap();
    assert_eq!(a, b);
}

#[test]
fn plan_record_round_trips() {
    let model = pushing_model();
    let result = plan(
        &model,
        &pushing_cost(),
        &pose(-0.2, 0.1, 15.0),
        &pushing_config(vec![0, 1]),
    )
    .unwrap();
    let record = result.to_record(&model);
    let json = serde_json::to_string(&record).unwrap();
    let back: PlanRecord = serde_json::from_str(&json).unwrap();
    assert_eq!(back, record);
    let restored = back.to_plan().unwrap();
    assert_eq!(restored.trajectory, result.trajectory);
    assert_eq!(restored.law.feedback, result.law.feedback);
    assert_eq!(restored.best, result.best);
}

#[test]
fn invalid_configs_are_rejected() {
    let model = pushing_model();
    let x0 = pose(0.0, 0.0, 0.0);
    for modes in [vec![], vec![7], vec![0, 0]] {
        assert!(plan(&model, &pushing_cost(), &x0, &pushing_config(modes)).is_err());
    }
    let short = HybridConfig {
        horizon: 1,
        ..pushing_config(vec![0, 1])
    };
    assert!(plan(&model, &pushing_cost(), &x0, &short).is_err());
}
