use serde::{Deserialize, Serialize};

use super::predictions::Predictions;
use crate::error::{Error, Result};

/// Targets with magnitude below this many vehicles per five minutes are
/// left out of MAPE.
pub const DEFAULT_MAPE_FLOOR: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// Percentage.
    pub value: f64,
    /// Fraction of entries skipped by the floor.
    pub skipped: f64,
}

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyMetric);
    }
    Ok(())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / pred.len() as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check(pred, target)?;
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((s / pred.len() as f64).sqrt())
}

/// `100 · mean(|p − t| / |t|)` over entries with `|t| ≥ floor`.
pub fn mape(pred: &[f64], target: &[f64], floor: f64) -> Result<Mape> {
    check(pred, target)?;
    let mut sum = 0.0;
    let mut kept = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if t.abs() >= floor {
            sum += (p - t).abs() / t.abs();
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::EmptyMetric);
    }
    Ok(Mape {
        value: 100.0 * sum / kept as f64,
        skipped: 1.0 - kept as f64 / pred.len() as f64,
    })
}

/// Errors of one horizon step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    /// 1-based horizon step.
    pub horizon: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mape: Mape,
    /// Scored (pair, detector) entries.
    pub count: usize,
}

/// Scores every horizon step of `pred` against aligned `truth`.
pub fn score(pred: &Predictions, truth: &Predictions, floor: f64) -> Result<Vec<StepScore>> {
    pred.check_aligned(truth)?;
    (0..pred.horizon)
        .map(|h| {
            let p = pred.step(h);
            let t = truth.step(h);
            Ok(StepScore {
                horizon: h + 1,
                mae: mae(&p, &t)?,
                rmse: rmse(&p, &t)?,
                mape: mape(&p, &t, floor)?,
                count: p.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry() {
        assert_eq!(mae(&[110.0], &[100.0]).unwrap(), 10.0);
        assert_eq!(rmse(&[110.0], &[100.0]).unwrap(), 10.0);
        assert!((mape(&[110.0], &[100.0], 1.0).unwrap().value - 10.0).abs() < 1e-12);
    }

    #[test]
    fn exact_is_zero() {
        let v = [3.0, 5.0, 8.0];
        assert_eq!(mae(&v, &v).unwrap(), 0.0);
        assert_eq!(rmse(&v, &v).unwrap(), 0.0);
        assert_eq!(mape(&v, &v, 1.0).unwrap().value, 0.0);
    }

    #[test]
    fn rmse_equals_mae_when_errors_are_equal() {
        let p = [0.0, 20.0];
        let t = [10.0, 10.0];
        assert_eq!(mae(&p, &t).unwrap(), 10.0);
        assert_eq!(rmse(&p, &t).unwrap(), 10.0);
        assert_eq!(mape(&p, &t, 1.0).unwrap().value, 100.0);
    }

    #[test]
    fn floor_skips_small_targets() {
        let m = mape(&[5.0, 110.0], &[0.5, 100.0], 1.0).unwrap();
        assert!((m.value - 10.0).abs() < 1e-12);
        assert_eq!(m.skipped, 0.5);
        assert!(matches!(mape(&[1.0], &[0.0], 1.0), Err(Error::EmptyMetric)));
    }

    #[test]
    fn empty_and_mismatched() {
        assert!(matches!(mae(&[], &[]), Err(Error::EmptyMetric)));
        assert!(matches!(rmse(&[1.0], &[]), Err(Error::LengthMismatch(_))));
    }
}
