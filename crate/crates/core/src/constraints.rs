//! Linear input constraint sets `A u >= b`, `G u = h`, evaluated at a fixed state and mode.

use nalgebra::{DMatrix, DVector};

/// Inclusive bounds on a single input coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxBound {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

/// Shape hint that allows an algebraic projection instead of a QP.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    General,
    /// `0 <= f_n <= n_max`, `|f_t| <= mu f_n` on the (normal, tangent) coordinates, plus
    /// independent bounds on other coordinates. `n_max` may be infinite.
    FrictionCone {
        normal: usize,
        tangent: usize,
        mu: f64,
        n_max: f64,
        boxes: Vec<BoxBound>,
    },
    Box(Vec<BoxBound>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputConstraintSet {
    /// Inequality rows, `a * u >= b`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Equality rows, `g * u = h`.
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub geometry: Geometry,
}

impl InputConstraintSet {
    /// The unconstrained set on `m` inputs.
    pub fn unconstrained(m: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, m),
            b: DVector::zeros(0),
            g: DMatrix::zeros(0, m),
            h: DVector::zeros(0),
            geometry: Geometry::General,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_inequalities(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_equalities(&self) -> usize {
        self.g.nrows()
    }

    /// Appends the four rows of a friction triangle on coordinates `(normal, tangent)`:
    /// `f_n >= 0`, `-f_n >= -n_max`, `mu f_n - f_t >= 0`, `mu f_n + f_t >= 0`.
    pub fn with_friction_cone(mut self, normal: usize, tangent: usize, mu: f64, n_max: f64) -> Self {
        let m = self.input_dim();
        let mut rows = DMatrix::zeros(4, m);
        rows[(0, normal)] = 1.0;
        rows[(1, normal)] = -1.0;
        rows[(2, normal)] = mu;
        rows[(2, tangent)] = -1.0;
        rows[(3, normal)] = mu;
        rows[(3, tangent)] = 1.0;
        let rhs = DVector::from_vec(vec![0.0, -n_max, 0.0, 0.0]);
        self.push_inequalities(&rows, &rhs);
        self.geometry = match self.geometry {
            Geometry::General if self.num_inequalities() == 4 && self.num_equalities() == 0 => Geometry::FrictionCone {
                normal,
                tangent,
                mu,
                n_max,
                boxes: Vec::new(),
            },
            _ => Geometry::General,
        };
        self
    }

    /// Appends `lower <= u[index] <= upper`.
    pub fn with_bounds(mut self, index: usize, lower: f64, upper: f64) -> Self {
        let m = self.input_dim();
        let mut rows = DMatrix::zeros(2, m);
        rows[(0, index)] = 1.0;
        rows[(1, index)] = -1.0;
        let rhs = DVector::from_vec(vec![lower, -upper]);
        let fresh = self.num_inequalities() == 0 && self.num_equalities() == 0;
        self.push_inequalities(&rows, &rhs);
        let bound = BoxBound { index, lower, upper };
        self.geometry = match std::mem::replace(&mut self.geometry, Geometry::General) {
            Geometry::General if fresh => Geometry::Box(vec![bound]),
            Geometry::Box(mut boxes) if boxes.iter().all(|b| b.index != index) => {
                boxes.push(bound);
                Geometry::Box(boxes)
            }
            Geometry::FrictionCone {
                normal,
                tangent,
                mu,
                n_max,
                mut boxes,
            } if index != normal && index != tangent && boxes.iter().all(|b| b.index != index) => {
                boxes.push(bound);
                Geometry::FrictionCone {
                    normal,
                    tangent,
                    mu,
                    n_max,
                    boxes,
                }
            }
            _ => Geometry::General,
        };
        self
    }

    /// Appends general inequality rows; drops any closed-form geometry tag.
    pub fn with_inequalities(mut self, rows: &DMatrix<f64>, rhs: &DVector<f64>) -> Self {
        self.push_inequalities(rows, rhs);
        self.geometry = Geometry::General;
        self
    }

    /// Appends equality rows; drops any closed-form geometry tag.
    pub fn with_equalities(mut self, rows: &DMatrix<f64>, rhs: &DVector<f64>) -> Self {
        let m = self.input_dim();
        assert_eq!(rows.ncols(), m, "equality rows must have {m} columns");
        let q = self.g.nrows();
        let mut g = DMatrix::zeros(q + rows.nrows(), m);
        g.rows_mut(0, q).copy_from(&self.g);
        g.rows_mut(q, rows.nrows()).copy_from(rows);
        let mut h = DVector::zeros(q + rhs.len());
        h.rows_mut(0, q).copy_from(&self.h);
        h.rows_mut(q, rhs.len()).copy_from(rhs);
        self.g = g;
        self.h = h;
        self.geometry = Geometry::General;
        self
    }

    fn push_inequalities(&mut self, rows: &DMatrix<f64>, rhs: &DVector<f64>) {
        let m = self.input_dim();
        assert_eq!(rows.ncols(), m, "inequality rows must have {m} columns");
        let p = self.a.nrows();
        let mut a = DMatrix::zeros(p + rows.nrows(), m);
        a.rows_mut(0, p).copy_from(&self.a);
        a.rows_mut(p, rows.nrows()).copy_from(rows);
        let mut b = DVector::zeros(p + rhs.len());
        b.rows_mut(0, p).copy_from(&self.b);
        b.rows_mut(p, rhs.len()).copy_from(rhs);
        self.a = a;
        self.b = b;
    }

    /// Largest violation over all rows (zero when feasible).
    pub fn max_violation(&self, u: &DVector<f64>) -> f64 {
        let ineq = (&self.b - &self.a * u).iter().fold(0.0_f64, |acc, &r| acc.max(r));
        let eq = (&self.g * u - &self.h).iter().fold(0.0_f64, |acc, &r| acc.max(r.abs()));
        ineq.max(eq)
    }
}
