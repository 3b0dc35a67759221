use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverse-sigmoid decay of the probability of feeding ground truth to
/// the decoder: `p(i) = τ / (τ + exp(i/τ))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSchedule {
    pub tau: f64,
    /// Global iteration counter across epochs.
    pub iteration: u64,
}

impl SamplingSchedule {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!(
                "sampling decay τ must be positive, got {tau}"
            )));
        }
        Ok(Self { tau, iteration: 0 })
    }

    /// Schedule whose probability crosses one half at iteration `mid`.
    pub fn centered_at(mid: u64) -> Result<Self> {
        Self::new(tau_for_midpoint(mid as f64))
    }

    pub fn probability(&self) -> f64 {
        sampling_probability(self.tau, self.iteration)
    }

    pub fn advance(&mut self) {
        self.iteration += 1;
    }
}

pub fn sampling_probability(tau: f64, iteration: u64) -> f64 {
    let e = iteration as f64 / tau;
    // exp overflows past ~709
    if e > 700.0 {
        return 0.0;
    }
    tau / (tau + e.exp())
}

/// Solves `exp(mid/τ) = τ`, i.e. `τ ln τ = mid`, for `τ ≥ 1`. Bisection on a
/// monotone function.
pub fn tau_for_midpoint(mid: f64) -> f64 {
    if mid <= 0.0 {
        return 1.0;
    }
    let f = |t: f64| t * t.ln() - mid;
    let (mut lo, mut hi) = (1.0, 2.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if f(m) < 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_value() {
        let s = SamplingSchedule::new(30.0).unwrap();
        assert_eq!(s.probability(), 30.0 / 31.0);
    }

    #[test]
    fn strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 0..2000 {
            let p = sampling_probability(50.0, i);
            assert!(p < prev);
            prev = p;
        }
        assert_eq!(sampling_probability(1.0, 10_000), 0.0);
    }

    #[test]
    fn midpoint_solver() {
        for mid in [10.0, 500.0, 7000.0] {
            let tau = tau_for_midpoint(mid);
            assert!(((mid / tau).exp() - tau).abs() / tau < 1e-9);
            assert!((sampling_probability(tau, mid as u64) - 0.5).abs() < 1e-9);
        }
    }
}
