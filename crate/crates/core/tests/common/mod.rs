//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use epidiff::model::{ParamVector, Transition, TransitionTable};
use nalgebra::DMatrix;

/// Largest absolute difference scaled by the largest reference entry.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Linear decay chain: `x → ∅` at `a x`, `x → y` at `b x`, `y → ∅` at `c y`.
/// Drift `A y` with `A = [[-(a+b), 0], [b, -c]]`.
pub fn linear_table() -> TransitionTable {
    let loss = Transition::new("loss", vec![-1, 0], |_, y, th| th[0] * y[0]).unwrap();
    let mv = Transition::new("move", vec![-1, 1], |_, y, th| th[1] * y[0]).unwrap();
    let clear = Transition::new("clear", vec![0, -1], |_, y, th| th[2] * y[1]).unwrap();
    TransitionTable::new("linear", vec!["x".into(), "y".into()], vec![loss, mv, clear], false, 1).unwrap()
}

pub fn linear_theta() -> ParamVector {
    ParamVector::new(&[("a", 0.3, 0.01, 10.0, true), ("b", 0.5, 0.01, 10.0, true), ("c", 0.2, 0.01, 10.0, true)])
        .unwrap()
}

pub fn linear_a() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[-0.8, 0.0, 0.5, -0.2])
}

pub fn expm(t: f64) -> DMatrix<f64> {
    (linear_a() * t).exp()
}

pub fn linear_sigma(y: &[f64]) -> DMatrix<f64> {
    // a x [1 0; 0 0] + b x [1 -1; -1 1] + c y [0 0; 0 1]
    let (x, yy) = (y[0], y[1]);
    DMatrix::from_row_slice(2, 2, &[0.3 * x + 0.5 * x, -0.5 * x, -0.5 * x, 0.5 * x + 0.2 * yy])
}
