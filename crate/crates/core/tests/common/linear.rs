//! Linear test system `x' = A x + B u` with optional symmetric input bounds.
#![allow(dead_code)]

use hddp::constraints::InputConstraintSet;
use hddp::trajectory::{DynamicsModel, ModeId};
use nalgebra::{DMatrix, DVector};

pub struct Linear {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bound: Option<f64>,
}

impl Linear {
    pub fn double_integrator(bound: Option<f64>) -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.005, 0.1]),
            bound,
        }
    }
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

    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>, _mode: ModeId) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
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
