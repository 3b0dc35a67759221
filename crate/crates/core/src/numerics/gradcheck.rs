//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Magnitude below which gradient differences are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_relative_error: f64,
    /// `(parameter, element)` of the largest error.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares the gradient of the scalar built by `f` with central
/// differences of step `eps` for every element of every parameter.
pub fn check_gradients<F>(params: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut t = Tape::no_grad();
        let vs: Vec<Var> = ps.iter().map(|p| t.param(p.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).item())
    };
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for p in 0..params.len() {
        for e in 0..params[p].len() {
            let orig = work[p].data()[e];
            work[p].data_mut()[e] = orig + eps;
            let up = eval(&work)?;
            work[p].data_mut()[e] = orig - eps;
            let down = eval(&work)?;
            work[p].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[p].data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (p, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
