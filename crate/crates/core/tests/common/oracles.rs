//! Independent reference implementations used to check the library.
//! Nothing here calls into the solver paths it is used to verify.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use hddp::qp::QuadraticProgram;

/// Enumerates every subset of inequality rows, solves the equality-constrained KKT
/// system for each, and keeps the best KKT-consistent candidate.
pub fn brute_force_qp(qp: &QuadraticProgram) -> Option<(DVector<f64>, f64)> {
    let m = qp.g.len();
    let p = qp.a_ineq.nrows();
    let q = qp.a_eq.nrows();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << p) {
        let rows: Vec<usize> = (0..p).filter(|i| mask & (1 << i) != 0).collect();
        let k = q + rows.len();
        if k > m {
            continue;
        }
        let mut e = DMatrix::zeros(k, m);
        let mut f = DVector::zeros(k);
        for i in 0..q {
            e.set_row(i, &qp.a_eq.row(i));
            f[i] = qp.b_eq[i];
        }
        for (j, &r) in rows.iter().enumerate() {
            e.set_row(q + j, &qp.a_ineq.row(r));
            f[q + j] = qp.b_ineq[r];
        }
        let mut kkt = DMatrix::zeros(m + k, m + k);
        kkt.view_mut((0, 0), (m, m)).copy_from(&qp.h);
        kkt.view_mut((0, m), (m, k)).copy_from(&(-e.transpose()));
        kkt.view_mut((m, 0), (k, m)).copy_from(&e);
        let mut rhs = DVector::zeros(m + k);
        rhs.rows_mut(0, m).copy_from(&(-&qp.g));
        rhs.rows_mut(m, k).copy_from(&f);
        if kkt.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let z = sol.rows(0, m).into_owned();
        let multipliers_ok = (0..rows.len()).all(|j| sol[m + q + j] >= -1e-9);
        let primal_ok = (&qp.a_ineq * &z - &qp.b_ineq).iter().all(|&s| s >= -1e-9);
        if !(multipliers_ok && primal_ok) {
            continue;
        }
        let obj = 0.5 * z.dot(&(&qp.h * &z)) + qp.g.dot(&z);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((z, obj));
        }
    }
    best
}

/// Largest KKT residual of a candidate primal-dual point:
/// stationarity, primal feasibility, dual feasibility and complementary slackness.
pub fn kkt_residual(
    qp: &QuadraticProgram,
    z: &DVector<f64>,
    lambda_ineq: &DVector<f64>,
    lambda_eq: &DVector<f64>,
) -> f64 {
    let stationarity =
        (&qp.h * z + &qp.g - qp.a_ineq.transpose() * lambda_ineq - qp.a_eq.transpose() * lambda_eq).amax();
    let slack = &qp.a_ineq * z - &qp.b_ineq;
    let primal = slack.iter().fold(0.0_f64, |acc, &s| acc.max(-s));
    let eq = if qp.a_eq.nrows() > 0 {
        (&qp.a_eq * z - &qp.b_eq).amax()
    } else {
        0.0
    };
    let dual = lambda_ineq.iter().fold(0.0_f64, |acc, &l| acc.max(-l));
    let complementarity = slack
        .iter()
        .zip(lambda_ineq.iter())
        .fold(0.0_f64, |acc, (s, l)| acc.max((s * l).abs()));
    stationarity.max(primal).max(eq).max(dual).max(complementarity)
}

/// Random strictly convex QP with m <= 3, p <= 6 inequalities and at most one
/// equality, all built around a known feasible point.
pub fn random_feasible_qp<R: Rng>(rng: &mut R) -> QuadraticProgram {
    let m = rng.random_range(1..=3);
    let p = rng.random_range(0..=6);
    let q = if m > 1 { rng.random_range(0..=1) } else { 0 };
    let feasible = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    let factor = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    let h = factor.transpose() * &factor + DMatrix::identity(m, m) * 0.1;
    let g = DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0));
    let a_ineq = DMatrix::from_fn(p, m, |_, _| rng.random_range(-1.0..1.0));
    let slack = DVector::from_fn(p, |_, _| {
        if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    });
    let b_ineq = &a_ineq * &feasible - slack;
    let a_eq = DMatrix::from_fn(q, m, |_, _| rng.random_range(-1.0..1.0));
    let b_eq = &a_eq * &feasible;
    QuadraticProgram {
        h,
        g,
        a_ineq,
        b_ineq,
        a_eq,
        b_eq,
    }
}

/// Finite-horizon discrete Riccati recursion for
/// `Σ (xᵀQx + uᵀRu) + x_Nᵀ Q_N x_N` with `x_{k+1} = A x_k + B u_k`.
/// Returns the gains (u = K x) and the optimal cost from `x0`.
pub fn riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    q_terminal: &DMatrix<f64>,
    horizon: usize,
    x0: &DVector<f64>,
) -> (Vec<DMatrix<f64>>, f64) {
    // The cost uses xᵀQx (no ½), so the value function is xᵀPx with P_N = Q_N.
    let mut p = q_terminal.clone();
    let mut gains = vec![DMatrix::zeros(b.ncols(), a.nrows()); horizon];
    for k in (0..horizon).rev() {
        let s = r + b.transpose() * &p * b;
        let s_inv = s.clone().try_inverse().expect("R + BᵀPB invertible");
        let gain = -&s_inv * b.transpose() * &p * a;
        p = q + a.transpose() * &p * a + a.transpose() * &p * b * &gain;
        p = (&p + p.transpose()) * 0.5;
        gains[k] = gain;
    }
    let cost = x0.dot(&(&p * x0));
    (gains, cost)
}
