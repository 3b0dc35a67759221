use chrono::NaiveDateTime;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{SlidingWindowDataset, STEP_MINUTES};
use crate::error::{Error, Result};

/// Autoregressive order on the differenced target.
pub const AR_ORDER: usize = 2;

/// Regression rows required per coefficient.
pub const ROWS_PER_PARAMETER: usize = 10;

/// `Δy_t = c + Σ_{i=1..2} a_i Δy_{t−i} + Σ_k b_k Δx_{k,t−1} + e_t` fitted by
/// ordinary least squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArimaxFit {
    pub intercept: f64,
    pub ar: [f64; AR_ORDER],
    pub exog: Vec<f64>,
    /// OLS standard errors in the order intercept, AR, exogenous.
    pub std_errors: Vec<f64>,
    /// Set when `XᵀX` was singular and a small ridge penalty was added.
    pub ridge: bool,
    pub rows: usize,
}

/// A contiguous stretch of a target series and its exogenous channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub target: Vec<f64>,
    /// One series per exogenous channel, each as long as `target`.
    pub exog: Vec<Vec<f64>>,
}

fn diff(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[1] - w[0]).collect()
}

impl ArimaxFit {
    pub fn num_parameters(exog: usize) -> usize {
        1 + AR_ORDER + exog
    }

    pub fn fit(segments: &[Segment]) -> Result<Self> {
        let n_exog = segments.first().map(|s| s.exog.len()).unwrap_or(0);
        let p = Self::num_parameters(n_exog);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut ys = Vec::new();
        for seg in segments {
            if seg.exog.len() != n_exog || seg.exog.iter().any(|x| x.len() != seg.target.len()) {
                return Err(Error::LengthMismatch(
                    "exogenous channels must match the target length".into(),
                ));
            }
            let dy = diff(&seg.target);
            let dx: Vec<Vec<f64>> = seg.exog.iter().map(|x| diff(x)).collect();
            for t in AR_ORDER..dy.len() {
                let mut row = Vec::with_capacity(p);
                row.push(1.0);
                for i in 1..=AR_ORDER {
                    row.push(dy[t - i]);
                }
                row.extend(dx.iter().map(|x| x[t - 1]));
                rows.push(row);
                ys.push(dy[t]);
            }
        }
        let n = rows.len();
        if n <= ROWS_PER_PARAMETER * p {
            return Err(Error::InsufficientData(format!(
                "{n} regression rows for {p} coefficients; more than {} needed",
                ROWS_PER_PARAMETER * p
            )));
        }
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        let y = DVector::from_vec(ys);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;
        let (chol, ridge) = match xtx.clone().cholesky().filter(well_conditioned) {
            Some(c) => (c, false),
            None => {
                let scale = xtx.trace() / p as f64;
                let lambda = 1e-8 * if scale > 0.0 { scale } else { 1.0 };
                let reg = &xtx + DMatrix::identity(p, p) * lambda;
                let c = reg.cholesky().ok_or_else(|| {
                    Error::InsufficientData("regression matrix is singular even with ridge".into())
                })?;
                (c, true)
            }
        };
        let beta = chol.solve(&xty);
        let resid = &y - &x * &beta;
        let dof = (n - p).max(1) as f64;
        let sigma2 = resid.norm_squared() / dof;
        let inv = chol.inverse();
        let std_errors = (0..p)
            .map(|i| (sigma2 * inv[(i, i)]).max(0.0).sqrt())
            .collect();
        Ok(Self {
            intercept: beta[0],
            ar: [beta[1], beta[2]],
            exog: beta.iter().skip(1 + AR_ORDER).copied().collect(),
            std_errors,
            ridge,
            rows: n,
        })
    }

    /// Recursive forecast of `horizon` levels after the end of `target`.
    /// Exogenous levels are held at their last observation, so their
    /// differences vanish after the first step. Outputs are clipped at zero.
    pub fn forecast(&self, target: &[f64], exog: &[&[f64]], horizon: usize) -> Result<Vec<f64>> {
        if target.len() < AR_ORDER + 1 {
            return Err(Error::InsufficientData(format!(
                "ARIMAX needs {} history points, got {}",
                AR_ORDER + 1,
                target.len()
            )));
        }
        if exog.len() != self.exog.len() || exog.iter().any(|x| x.len() < 2) {
            return Err(Error::LengthMismatch("exogenous history".into()));
        }
        let n = target.len();
        let mut dy: Vec<f64> = diff(&target[n - AR_ORDER - 1..]);
        let mut level = target[n - 1];
        let mut out = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let mut next = self.intercept;
            for i in 1..=AR_ORDER {
                next += self.ar[i - 1] * dy[dy.len() - i];
            }
            if h == 0 {
                for (b, x) in self.exog.iter().zip(exog) {
                    let m = x.len();
                    next += b * (x[m - 1] - x[m - 2]);
                }
            }
            dy.push(next);
            level += next;
            out.push(level.max(0.0));
        }
        Ok(out)
    }
}

/// Rejects factorizations whose pivots span more than twelve decades, which
/// happens when columns are exactly collinear up to rounding.
fn well_conditioned(c: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> bool {
    let l = c.l_dirty();
    let piv: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).collect();
    let max = piv.iter().copied().fold(0.0, f64::max);
    let min = piv.iter().copied().fold(f64::INFINITY, f64::min);
    max > 0.0 && min > 1e-12 * max
}

/// One ARIMAX fit per detector with every other detector as an exogenous
/// channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArimaxModel {
    pub detectors: usize,
    pub fits: Vec<ArimaxFit>,
}

fn others(d: usize, k: usize) -> impl Iterator<Item = usize> {
    (0..d).filter(move |&j| j != k)
}

/// Splits timestamped rows into runs of consecutive five-minute steps.
fn contiguous_runs(flow: Vec<(NaiveDateTime, Vec<f64>)>) -> Vec<Vec<Vec<f64>>> {
    let step = chrono::Duration::minutes(STEP_MINUTES as i64);
    let mut runs: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut last: Option<NaiveDateTime> = None;
    for (ts, row) in flow {
        match last {
            Some(l) if ts - l == step => runs.last_mut().expect("run started").push(row),
            _ => runs.push(vec![row]),
        }
        last = Some(ts);
    }
    runs
}

impl ArimaxModel {
    /// Fits on the flow visible in the training split, inputs included.
    pub fn fit(train: &SlidingWindowDataset) -> Result<Self> {
        let d = train.num_detectors();
        let runs = contiguous_runs(train.observed_flow().into_iter().collect());
        let mut fits = Vec::with_capacity(d);
        for k in 0..d {
            let segments: Vec<Segment> = runs
                .iter()
                .map(|run| Segment {
                    target: run.iter().map(|r| r[k]).collect(),
                    exog: others(d, k)
                        .map(|j| run.iter().map(|r| r[j]).collect())
                        .collect(),
                })
                .collect();
            fits.push(ArimaxFit::fit(&segments)?);
        }
        Ok(Self { detectors: d, fits })
    }

    /// Whether any detector's fit needed the ridge fallback.
    pub fn used_ridge(&self) -> bool {
        self.fits.iter().any(|f| f.ridge)
    }

    /// `B × H × D` forecast from each sample's input window.
    pub fn predict(&self, ds: &SlidingWindowDataset) -> Result<Vec<f64>> {
        let (d, f, s, h) = (self.detectors, ds.features, ds.window, ds.horizon);
        if ds.num_detectors() != d {
            return Err(Error::shape("arimax", &[ds.num_detectors()], &[d]));
        }
        let mut out = Vec::with_capacity(ds.len() * h * d);
        for sample in &ds.samples {
            let series: Vec<Vec<f64>> = (0..d)
                .map(|k| (0..s).map(|t| sample.inputs[(t * d + k) * f]).collect())
                .collect();
            let mut per_detector = Vec::with_capacity(d);
            for (k, fit) in self.fits.iter().enumerate() {
                let exog: Vec<&[f64]> = others(d, k).map(|j| series[j].as_slice()).collect();
                per_detector.push(fit.forecast(&series[k], &exog, h)?);
            }
            for step in 0..h {
                out.extend(per_detector.iter().map(|p| p[step]));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constructed_ar_process_recovers_coefficient() {
        // y_t = y_{t−1} + 0.5 (y_{t−1} − y_{t−2}) + 0.3 Δx_{t−1}. Without the
        // driver the two lagged differences are proportional and the AR(2)
        // regression is not identifiable.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..50.0)).collect();
        let mut y = vec![100.0, 102.0, 101.0];
        for t in 3..400 {
            y.push(y[t - 1] + 0.5 * (y[t - 1] - y[t - 2]) + 0.3 * (x[t - 1] - x[t - 2]));
        }
        let fit = ArimaxFit::fit(&[Segment {
            target: y,
            exog: vec![x],
        }])
        .unwrap();
        assert!((fit.ar[0] - 0.5).abs() < 1e-6, "{fit:?}");
        assert!(fit.ar[1].abs() < 1e-6);
        assert!((fit.exog[0] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn random_walk_has_no_ar_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut y = vec![0.0];
        let mut x = vec![0.0];
        for _ in 0..3000 {
            let e: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.sample(StandardNormal);
            y.push(y.last().unwrap() + e);
            x.push(x.last().unwrap() + u);
        }
        let fit = ArimaxFit::fit(&[Segment {
            target: y,
            exog: vec![x],
        }])
        .unwrap();
        for i in 0..AR_ORDER {
            assert!(fit.ar[i].abs() < 4.0 * fit.std_errors[1 + i], "{fit:?}");
        }
        assert!(!fit.ridge);
    }

    #[test]
    fn too_few_rows() {
        let seg = Segment {
            target: (0..20).map(|v| v as f64).collect(),
            exog: vec![],
        };
        assert!(matches!(
            ArimaxFit::fit(&[seg]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn singular_design_uses_ridge() {
        // two identical exogenous channels make XᵀX singular
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..10.0)).collect();
        let y: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..10.0)).collect();
        let fit = ArimaxFit::fit(&[Segment {
            target: y,
            exog: vec![x.clone(), x],
        }])
        .unwrap();
        assert!(fit.ridge);
    }

    #[test]
    fn forecast_is_clipped_and_recursive() {
        let fit = ArimaxFit {
            intercept: -5.0,
            ar: [0.0, 0.0],
            exog: vec![],
            std_errors: vec![],
            ridge: false,
            rows: 0,
        };
        let f = fit.forecast(&[10.0, 10.0, 8.0], &[], 3).unwrap();
        assert_eq!(f, vec![3.0, 0.0, 0.0]);
    }
}
