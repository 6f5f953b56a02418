//! Models and costs shared by the planner and simulation tests.
#![allow(dead_code)]

use hddp::primitives::{PivotingModel, PivotingParams, PushingModel, PushingParams};
use hddp::trajectory::QuadraticCost;
use nalgebra::DVector;

pub fn pushing_model() -> PushingModel {
    PushingModel::new(PushingParams {
        mu_ground: 0.3,
        ..PushingParams::default()
    })
}

pub fn pushing_cost() -> QuadraticCost {
    QuadraticCost::new(
        DVector::from_vec(vec![1.0, 1.0, 0.1]),
        DVector::from_vec(vec![0.01, 0.01]),
        DVector::from_vec(vec![100.0, 100.0, 10.0]),
        DVector::zeros(3),
        vec![2],
    )
    .unwrap()
}

pub fn pivoting_model(aspect: f64) -> PivotingModel {
    PivotingModel::new(PivotingParams::with_aspect(aspect, 0.1))
}

pub fn pivoting_cost() -> QuadraticCost {
    QuadraticCost::new(
        DVector::from_vec(vec![1.0, 0.01]),
        DVector::from_element(4, 0.001),
        DVector::from_vec(vec![100.0, 10.0]),
        DVector::from_vec(vec![10f64.to_radians(), 0.0]),
        vec![0],
    )
    .unwrap()
}

pub fn pose(x: f64, y: f64, theta_deg: f64) -> DVector<f64> {
    DVector::from_vec(vec![x, y, theta_deg.to_radians()])
}
