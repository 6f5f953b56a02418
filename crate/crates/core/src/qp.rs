//! Dense primal active-set solver for small strictly convex quadratic programs
//!
//! ```text
//! minimize    ½ zᵀ H z + gᵀ z
//! subject to  A z >= b,   G z = h
//! ```
//!
//! Equalities are eliminated through a null-space parametrization `z = z_p + Z y`.
//! The remaining inequality-constrained problem is solved by a primal active-set
//! iteration started from the equality-constrained minimizer. When that point is
//! infeasible an elastic phase one (one extra slack variable) finds a feasible start
//! or proves the constraint system empty.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{BoxBound, Geometry, InputConstraintSet};
use crate::error::{check_dim, Error, Result};

/// Rank threshold (relative to the largest singular value) for equality rows.
const RANK_TOL: f64 = 1e-10;
/// Primal feasibility tolerance for the equality system and phase one.
const FEAS_TOL: f64 = 1e-9;
/// Negative multipliers above this are treated as zero.
const DUAL_TOL: f64 = 1e-11;
/// Weight of the proximal term in the phase-one objective.
const PHASE_ONE_PROX: f64 = 1e-6;
/// Inputs already feasible within this tolerance are returned unchanged by projection.
const PROJECTION_IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl QuadraticProgram {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let m = g.len();
        Self {
            h,
            g,
            a_ineq: DMatrix::zeros(0, m),
            b_ineq: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, m),
            b_eq: DVector::zeros(0),
        }
    }

    /// Objective `½ zᵀ H z + gᵀ z + (constraints)` with constraints taken from `cons`.
    pub fn with_constraints(h: DMatrix<f64>, g: DVector<f64>, cons: &InputConstraintSet) -> Self {
        Self {
            h,
            g,
            a_ineq: cons.a.clone(),
            b_ineq: cons.b.clone(),
            a_eq: cons.g.clone(),
            b_eq: cons.h.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Inequality rows in the final working set, ascending.
    pub active_set: Vec<usize>,
    pub status: QpStatus,
    /// Multipliers of the inequality rows (zero off the active set).
    pub lambda_ineq: DVector<f64>,
    /// Multipliers of the equality rows.
    pub lambda_eq: DVector<f64>,
    pub iterations: usize,
}

impl QpSolution {
    fn infeasible(m: usize, p: usize, q: usize) -> Self {
        Self {
            z: DVector::zeros(m),
            active_set: Vec::new(),
            status: QpStatus::Infeasible,
            lambda_ineq: DVector::zeros(p),
            lambda_eq: DVector::zeros(q),
            iterations: 0,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

struct EqualityElimination {
    particular: DVector<f64>,
    /// Columns span the null space of the equality rows.
    null_space: DMatrix<f64>,
}

fn eliminate_equalities(a_eq: &DMatrix<f64>, b_eq: &DVector<f64>) -> Option<EqualityElimination> {
    let m = a_eq.ncols();
    let q = a_eq.nrows();
    if q == 0 {
        return Some(EqualityElimination {
            particular: DVector::zeros(m),
            null_space: DMatrix::identity(m, m),
        });
    }
    // Pad with zero rows so the SVD returns a full right basis.
    let rows = q.max(m);
    let mut padded = DMatrix::zeros(rows, m);
    padded.rows_mut(0, q).copy_from(a_eq);
    let svd = padded.svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sigma_max = svd.singular_values.max();
    let tol = RANK_TOL * sigma_max.max(1.0);

    let mut particular = DVector::zeros(m);
    let mut null_cols = Vec::new();
    // Deterministic order: singular vectors in the order the SVD returns them.
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let v = v_t.row(i).transpose();
        if s > tol {
            let coeff = u.column(i).rows(0, q).dot(b_eq) / s;
            particular += v * coeff;
        } else {
            null_cols.push(v);
        }
    }
    let residual = (a_eq * &particular - b_eq).amax();
    if residual > FEAS_TOL * (1.0 + b_eq.amax()) {
        return None;
    }
    let null_space = if null_cols.is_empty() {
        DMatrix::zeros(m, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    Some(EqualityElimination { particular, null_space })
}

/// Orthonormal basis (as columns) of the null space of `rows`.
pub fn null_space(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let zeros = DVector::zeros(rows.nrows());
    match eliminate_equalities(rows, &zeros) {
        Some(elim) => elim.null_space,
        None => unreachable!("homogeneous rows are always consistent"),
    }
}

struct ActiveSetOutcome {
    y: DVector<f64>,
    working: Vec<usize>,
    lambda: DVector<f64>,
    status: QpStatus,
    iterations: usize,
}

/// Primal active set for `min ½ yᵀHy + gᵀy s.t. C y >= d`, started at a feasible `y`.
fn primal_active_set(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    mut y: DVector<f64>,
    max_iterations: usize,
) -> ActiveSetOutcome {
    let r = y.len();
    let p = c.nrows();
    let mut working: Vec<usize> = Vec::new();
    let mut lambda = DVector::zeros(p);

    for iteration in 0..max_iterations {
        let grad = h * &y + g;
        let w = working.len();
        let mut kkt = DMatrix::zeros(r + w, r + w);
        kkt.view_mut((0, 0), (r, r)).copy_from(h);
        for (j, &row) in working.iter().enumerate() {
            for col in 0..r {
                kkt[(r + j, col)] = c[(row, col)];
                kkt[(col, r + j)] = c[(row, col)];
            }
        }
        let mut rhs = DVector::zeros(r + w);
        rhs.rows_mut(0, r).copy_from(&(-&grad));
        let Some(sol) = kkt.lu().solve(&rhs) else {
            return ActiveSetOutcome {
                y,
                working,
                lambda,
                status: QpStatus::MaxIterations,
                iterations: iteration,
            };
        };
        let step = sol.rows(0, r).into_owned();

        if step.amax() <= 1e-12 * (1.0 + y.amax()) {
            // Multipliers of C y >= d appear with a flipped sign in the KKT system.
            lambda.fill(0.0);
            let mut most_negative: Option<(usize, f64)> = None;
            for (j, &row) in working.iter().enumerate() {
                let l = -sol[r + j];
                lambda[row] = l;
                if l < -DUAL_TOL {
                    let better = match most_negative {
                        None => true,
                        Some((best_row, best)) => l < best || (l == best && row < best_row),
                    };
                    if better {
                        most_negative = Some((row, l));
                    }
                }
            }
            match most_negative {
                None => {
                    return ActiveSetOutcome {
                        y,
                        working,
                        lambda,
                        status: QpStatus::Optimal,
                        iterations: iteration + 1,
                    }
                }
                Some((row, _)) => {
                    working.retain(|&i| i != row);
                    lambda[row] = 0.0;
                }
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..p {
            if working.contains(&i) {
                continue;
            }
            let rate = c.row(i).dot(&step.transpose());
            if rate < -1e-14 {
                let slack = (c.row(i).dot(&y.transpose()) - d[i]).max(0.0);
                let ratio = slack / -rate;
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(i);
                }
            }
        }
        y += step * alpha;
        if let Some(i) = blocking {
            working.push(i);
            working.sort_unstable();
        }
    }
    ActiveSetOutcome {
        y,
        working,
        lambda,
        status: QpStatus::MaxIterations,
        iterations: max_iterations,
    }
}

/// Solves a strictly convex QP. A semidefinite `H` is rejected.
pub fn solve_qp(qp: &QuadraticProgram) -> Result<QpSolution> {
    let m = qp.dim();
    let p = qp.a_ineq.nrows();
    let q = qp.a_eq.nrows();
    check_dim("qp H rows", m, qp.h.nrows())?;
    check_dim("qp H cols", m, qp.h.ncols())?;
    check_dim("qp A cols", m, qp.a_ineq.ncols())?;
    check_dim("qp b", p, qp.b_ineq.len())?;
    check_dim("qp G cols", m, qp.a_eq.ncols())?;
    check_dim("qp h", q, qp.b_eq.len())?;

    let h = (&qp.h + qp.h.transpose()) * 0.5;
    if h.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    let max_iterations = 100 * (p + q).max(1);

    let Some(elim) = eliminate_equalities(&qp.a_eq, &qp.b_eq) else {
        return Ok(QpSolution::infeasible(m, p, q));
    };
    let zmat = &elim.null_space;
    let r = zmat.ncols();
    let c = &qp.a_ineq * zmat;
    let d = &qp.b_ineq - &qp.a_ineq * &elim.particular;

    let (y, working, lambda_ineq, status, iterations) = if r == 0 {
        let y = DVector::zeros(0);
        if d.iter().any(|&di| di > FEAS_TOL) {
            return Ok(QpSolution::infeasible(m, p, q));
        }
        (y, Vec::new(), DVector::zeros(p), QpStatus::Optimal, 0)
    } else {
        let h_r = zmat.transpose() * &h * zmat;
        let g_r = zmat.transpose() * (&h * &elim.particular + &qp.g);
        let chol = h_r.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let y0 = chol.solve(&(-&g_r));

        let violation = (&d - &c * &y0).iter().fold(0.0_f64, |acc, &v| acc.max(v));
        let (start, phase_one_iterations) = if violation <= 0.0 {
            (y0, 0)
        } else {
            match phase_one(&c, &d, &y0, violation, max_iterations) {
                Some(found) => found,
                None => return Ok(QpSolution::infeasible(m, p, q)),
            }
        };
        let out = primal_active_set(&h_r, &g_r, &c, &d, start, max_iterations);
        (
            out.y,
            out.working,
            out.lambda,
            out.status,
            out.iterations + phase_one_iterations,
        )
    };

    let z = &elim.particular + zmat * &y;
    let lambda_eq = equality_multipliers(&h, &qp.g, &qp.a_ineq, &qp.a_eq, &z, &lambda_ineq);
    Ok(QpSolution {
        z,
        active_set: working,
        status,
        lambda_ineq,
        lambda_eq,
        iterations,
    })
}

/// Elastic phase one: `min t + ε/2 (|y - y0|² + t²)` over `C y + t >= d`, `t >= 0`.
fn phase_one(
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    y0: &DVector<f64>,
    violation: f64,
    max_iterations: usize,
) -> Option<(DVector<f64>, usize)> {
    let r = y0.len();
    let p = c.nrows();
    let mut c1 = DMatrix::zeros(p + 1, r + 1);
    c1.view_mut((0, 0), (p, r)).copy_from(c);
    for i in 0..p {
        c1[(i, r)] = 1.0;
    }
    c1[(p, r)] = 1.0;
    let mut d1 = DVector::zeros(p + 1);
    d1.rows_mut(0, p).copy_from(d);
    let h1 = DMatrix::identity(r + 1, r + 1) * PHASE_ONE_PROX;
    let mut g1 = DVector::zeros(r + 1);
    g1.rows_mut(0, r).copy_from(&(-y0 * PHASE_ONE_PROX));
    g1[r] = 1.0;
    let mut start = DVector::zeros(r + 1);
    start.rows_mut(0, r).copy_from(y0);
    start[r] = violation;

    let out = primal_active_set(&h1, &g1, &c1, &d1, start, max_iterations);
    let slack = out.y[r];
    let scale = 1.0 + d.amax();
    if out.status != QpStatus::Optimal || slack > FEAS_TOL * scale {
        return None;
    }
    Some((out.y.rows(0, r).into_owned(), out.iterations))
}

fn equality_multipliers(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a_ineq: &DMatrix<f64>,
    a_eq: &DMatrix<f64>,
    z: &DVector<f64>,
    lambda_ineq: &DVector<f64>,
) -> DVector<f64> {
    let q = a_eq.nrows();
    if q == 0 {
        return DVector::zeros(0);
    }
    let residual = h * z + g - a_ineq.transpose() * lambda_ineq;
    a_eq.transpose()
        .svd(true, true)
        .solve(&residual, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(q))
}

/// True iff `A u >= b - tol` row-wise and `|G u - h|_∞ <= tol`.
pub fn check_feasible(cons: &InputConstraintSet, u: &DVector<f64>, tol: f64) -> bool {
    if u.len() != cons.input_dim() {
        return false;
    }
    let ineq_ok = (&cons.a * u - &cons.b).iter().all(|&s| s >= -tol);
    let eq_ok = (&cons.g * u - &cons.h).iter().all(|&r| r.abs() <= tol);
    ineq_ok && eq_ok
}

/// Euclidean projection of `u` onto the constraint set.
///
/// Friction-cone and box geometries are projected algebraically; everything else goes
/// through [`solve_qp`]. An infeasible set yields [`Error::InfeasibleConstraints`].
pub fn project_feasible(u: &DVector<f64>, cons: &InputConstraintSet) -> Result<DVector<f64>> {
    check_dim("projection input", cons.input_dim(), u.len())?;
    if check_feasible(cons, u, PROJECTION_IDENTITY_TOL) {
        return Ok(u.clone());
    }
    match &cons.geometry {
        Geometry::FrictionCone {
            normal,
            tangent,
            mu,
            n_max,
            boxes,
        } => {
            if *n_max < 0.0 || boxes.iter().any(|b| b.lower > b.upper) {
                return Err(Error::InfeasibleConstraints { mode: None });
            }
            let mut z = u.clone();
            let (n, t) = project_friction_triangle(u[*normal], u[*tangent], *mu, *n_max);
            z[*normal] = n;
            z[*tangent] = t;
            clamp_boxes(&mut z, boxes);
            Ok(z)
        }
        Geometry::Box(boxes) => {
            if boxes.iter().any(|b| b.lower > b.upper) {
                return Err(Error::InfeasibleConstraints { mode: None });
            }
            let mut z = u.clone();
            clamp_boxes(&mut z, boxes);
            Ok(z)
        }
        Geometry::General => project_via_qp(u, cons),
    }
}

/// Projection through the general QP path, ignoring any geometry tag.
pub fn project_via_qp(u: &DVector<f64>, cons: &InputConstraintSet) -> Result<DVector<f64>> {
    let m = u.len();
    let qp = QuadraticProgram::with_constraints(DMatrix::identity(m, m), -u, cons);
    let sol = solve_qp(&qp)?;
    match sol.status {
        QpStatus::Optimal => Ok(sol.z),
        _ => Err(Error::InfeasibleConstraints { mode: None }),
    }
}

fn clamp_boxes(z: &mut DVector<f64>, boxes: &[BoxBound]) {
    for b in boxes {
        z[b.index] = z[b.index].clamp(b.lower, b.upper);
    }
}

/// Nearest point of `{0 <= n <= n_max, |t| <= mu n}` to `(n, t)`.
pub fn project_friction_triangle(n: f64, t: f64, mu: f64, n_max: f64) -> (f64, f64) {
    if n >= 0.0 && n <= n_max && t.abs() <= mu * n {
        return (n, t);
    }
    // Candidate edges: the two cone rays (truncated at n_max) and the cap n = n_max.
    let norm = (1.0 + mu * mu).sqrt();
    let mut best = (0.0, 0.0);
    let mut best_dist = n * n + t * t;
    let mut consider = |cand: (f64, f64)| {
        let dist = (cand.0 - n).powi(2) + (cand.1 - t).powi(2);
        if dist < best_dist {
            best_dist = dist;
            best = cand;
        }
    };
    for sign in [1.0, -1.0] {
        let dir = (1.0 / norm, sign * mu / norm);
        let len = if n_max.is_finite() { n_max * norm } else { f64::INFINITY };
        let s = (n * dir.0 + t * dir.1).clamp(0.0, len);
        consider((s * dir.0, s * dir.1));
    }
    if n_max.is_finite() {
        let cap = mu * n_max;
        consider((n_max, t.clamp(-cap, cap)));
    }
    best
}
