mod common;

use common::linear::Linear;
use common::oracles::riccati;
use hddp::ddp::{backward_pass, forward_pass, projected_rollout, q_expansion, solve, DdpConfig};
use hddp::trajectory::{total_cost, QuadraticCost};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cost(n: usize, m: usize, goal: DVector<f64>) -> QuadraticCost {
    QuadraticCost::new(
        DVector::from_fn(n, |i, _| 1.0 + 0.5 * i as f64),
        DVector::from_element(m, 0.1),
        DVector::from_element(n, 20.0),
        goal,
        vec![],
    )
    .unwrap()
}

fn tight_config() -> DdpConfig {
    DdpConfig {
        reg_init: 1e-9,
        ..DdpConfig::default()
    }
}

fn random_system(rng: &mut ChaCha8Rng) -> Linear {
    let n = rng.random_range(2..=4);
    let m = rng.random_range(1..=2);
    let a = DMatrix::from_fn(n, n, |i, j| f64::from(i == j) + rng.random_range(-0.2..0.2));
    let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    Linear { a, b, bound: None }
}

#[test]
fn double_integrator_reaches_riccati_cost() {
    let model = Linear::double_integrator(Some(100.0));
    let c = cost(2, 1, DVector::zeros(2));
    let x0 = DVector::from_vec(vec![1.0, -0.5]);
    let horizon = 30;
    let result = solve(
        &model,
        &c,
        &x0,
        &vec![DVector::zeros(1); horizon],
        &vec![0; horizon],
        &tight_config(),
    )
    .unwrap();
    let (_, optimal) = riccati(
        &model.a,
        &model.b,
        &DMatrix::from_diagonal(&c.q),
        &DMatrix::from_diagonal(&c.r),
        &DMatrix::from_diagonal(&c.q_terminal),
        horizon,
        &x0,
    );
    assert!(result.converged);
    assert!(result.iterations <= 2, "{} iterations", result.iterations);
    assert!(
        (result.cost - optimal).abs() <= 1e-6 * optimal,
        "{} vs {optimal}",
        result.cost
    );
}

#[test]
fn gains_match_riccati_on_random_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let model = random_system(&mut rng);
        let (n, m) = (model.a.nrows(), model.b.ncols());
        let c = cost(n, m, DVector::zeros(n));
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let horizon = 12;
        let (gains, _) = riccati(
            &model.a,
            &model.b,
            &DMatrix::from_diagonal(&c.q),
            &DMatrix::from_diagonal(&c.r),
            &DMatrix::from_diagonal(&c.q_terminal),
            horizon,
            &x0,
        );
        // Roll out the Riccati policy so the trajectory is already optimal.
        let mut x = x0.clone();
        let mut inputs = Vec::new();
        for gain in &gains {
            let u = gain * &x;
            x = &model.a * &x + &model.b * &u;
            inputs.push(u);
        }
        let traj = projected_rollout(&model, &x0, &inputs, &vec![0; horizon]).unwrap();
        let pass = backward_pass(&traj, &model, &c, 0.0).unwrap();
        for ((k_ff, gain), oracle) in pass.law.feedforward.iter().zip(&pass.law.feedback).zip(&gains) {
            assert!(k_ff.amax() <= 1e-8);
            assert!((gain - oracle).amax() <= 1e-8);
        }
    }
}

#[test]
fn q_uu_matches_lqr_expression() {
    // With l = uᵀRu the Hessian is 2(R + BᵀPB), P from the Riccati recursion.
    let model = Linear::double_integrator(None);
    let c = cost(2, 1, DVector::zeros(2));
    let horizon = 6;
    let traj = projected_rollout(
        &model,
        &DVector::from_vec(vec![0.4, 0.1]),
        &vec![DVector::zeros(1); horizon],
        &vec![0; horizon],
    )
    .unwrap();
    let pass = backward_pass(&traj, &model, &c, 0.0).unwrap();
    let mut p = DMatrix::from_diagonal(&c.q_terminal);
    let r = DMatrix::from_diagonal(&c.r);
    let q = DMatrix::from_diagonal(&c.q);
    for k in (0..horizon).rev() {
        let s = &r + model.b.transpose() * &p * &model.b;
        // V_xx = 2P for the cost convention without ½.
        assert!((&pass.values[k + 1].v_xx - &p * 2.0).amax() <= 1e-9);
        let expected_quu = &s * 2.0;
        let terms = c.expansion(&traj.states[k], &traj.inputs[k]);
        let q_uu = q_expansion(&pass.values[k + 1], &terms, &model.a, &model.b, 0.0).q_uu;
        assert!((expected_quu - q_uu).amax() <= 1e-9);
        let gain = -s.clone().try_inverse().unwrap() * model.b.transpose() * &p * &model.a;
        p = &q + model.a.transpose() * &p * &model.a + model.a.transpose() * &p * &model.b * gain;
    }
}

#[test]
fn expected_improvement_is_exact_on_quadratic_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let model = random_system(&mut rng);
        let (n, m) = (model.a.nrows(), model.b.ncols());
        let c = cost(n, m, DVector::from_element(n, 0.3));
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let inputs: Vec<_> = (0..10)
            .map(|_| DVector::from_fn(m, |_, _| rng.random_range(-0.5..0.5)))
            .collect();
        let traj = projected_rollout(&model, &x0, &inputs, &[0; 10]).unwrap();
        let base = total_cost(&traj, &c).unwrap();
        let pass = backward_pass(&traj, &model, &c, 0.0).unwrap();
        for alpha in [1.0, 0.5, 0.125] {
            let next = forward_pass(&model, &traj, &pass.law, alpha).unwrap();
            let actual = total_cost(&next, &c).unwrap() - base;
            let expected = pass.expected_change(alpha);
            assert!(
                (actual - expected).abs() <= 1e-8 * (1.0 + base),
                "{actual} vs {expected}"
            );
        }
    }
}

#[test]
fn saturated_problem_descends_monotonically_and_stays_feasible() {
    let model = Linear::double_integrator(Some(0.5));
    let c = cost(2, 1, DVector::from_vec(vec![1.0, 0.0]));
    let x0 = DVector::zeros(2);
    let result = solve(
        &model,
        &c,
        &x0,
        &vec![DVector::zeros(1); 40],
        &[0; 40],
        &DdpConfig::default(),
    )
    .unwrap();
    assert!(result.cost_log.windows(2).all(|w| w[1] <= w[0]));
    assert!(result.iterations >= 1);
    assert!(result.trajectory.inputs.iter().all(|u| u[0].abs() <= 0.5 + 1e-9));
    assert!(result.trajectory.inputs.iter().any(|u| (u[0].abs() - 0.5).abs() < 1e-9));
}
