use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::windows::SlidingWindowDataset;
use crate::error::{Error, Result};

/// What a zeroing augmentation silences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ZeroMode {
    /// Every input channel of these detectors reads zero.
    Detectors { ids: Vec<String> },
    /// All detectors read zero on this fraction of the dataset's days.
    Days { fraction: f64 },
}

/// Days chosen for zeroing: exactly `round(fraction · n)` of `days`,
/// determined by `seed`.
pub fn pick_days(days: &[NaiveDate], fraction: f64, seed: u64) -> Result<BTreeSet<NaiveDate>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Fraction(fraction));
    }
    let k = (fraction * days.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(days.choose_multiple(&mut rng, k).copied().collect())
}

/// Replaces raw input values with zero. Targets are untouched: the sensor
/// reports zeros while traffic keeps flowing.
pub fn augment_zero(
    ds: &SlidingWindowDataset,
    mode: &ZeroMode,
    seed: u64,
) -> Result<SlidingWindowDataset> {
    if ds.normalized {
        return Err(Error::Config("zeroing applies to raw data".into()));
    }
    let (d, f, s) = (ds.detectors.len(), ds.features, ds.window);
    let mut out = ds.clone();
    match mode {
        ZeroMode::Detectors { ids } => {
            let idx: Vec<usize> = ids
                .iter()
                .map(|id| {
                    ds.detectors
                        .iter()
                        .position(|x| x == id)
                        .ok_or_else(|| Error::UnknownDetector(id.clone()))
                })
                .collect::<Result<_>>()?;
            for sample in &mut out.samples {
                for t in 0..s {
                    for &k in &idx {
                        for c in 0..f {
                            sample.inputs[(t * d + k) * f + c] = 0.0;
                        }
                    }
                }
            }
        }
        ZeroMode::Days { fraction } => {
            let chosen = pick_days(&ds.days(), *fraction, seed)?;
            for sample in &mut out.samples {
                for t in 0..s {
                    if chosen.contains(&sample.input_time(t, s).date()) {
                        sample.inputs[t * d * f..(t + 1) * d * f].fill(0.0);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::windows::Sample;
    use super::*;

    fn dataset(days: usize) -> SlidingWindowDataset {
        let d0 = NaiveDate::from_ymd_opt(2017, 1, 2).unwrap();
        let samples = (0..days)
            .map(|i| Sample {
                target_start: (d0 + chrono::Duration::days(i as i64))
                    .and_hms_opt(7, 0, 0)
                    .unwrap(),
                inputs: vec![3.0; 3 * 2],
                targets: vec![4.0; 2 * 2],
            })
            .collect();
        SlidingWindowDataset {
            plan_id: "P2".into(),
            window: 3,
            horizon: 2,
            detectors: vec!["a".into(), "b".into()],
            features: 1,
            samples,
            normalized: false,
        }
    }

    #[test]
    fn zero_fraction_is_identity() {
        let ds = dataset(10);
        let out = augment_zero(&ds, &ZeroMode::Days { fraction: 0.0 }, 1).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn all_detectors_zeroed() {
        let ds = dataset(4);
        let out = augment_zero(
            &ds,
            &ZeroMode::Detectors {
                ids: vec!["a".into(), "b".into()],
            },
            1,
        )
        .unwrap();
        assert!(out
            .samples
            .iter()
            .all(|s| s.inputs.iter().all(|v| *v == 0.0)));
        assert!(out
            .samples
            .iter()
            .all(|s| s.targets.iter().all(|v| *v == 4.0)));
    }

    #[test]
    fn quarter_of_hundred_days_is_deterministic() {
        let ds = dataset(100);
        let mode = ZeroMode::Days { fraction: 0.25 };
        let a = augment_zero(&ds, &mode, 42).unwrap();
        let b = augment_zero(&ds, &mode, 42).unwrap();
        let zeroed = |x: &SlidingWindowDataset| -> Vec<NaiveDate> {
            x.samples
                .iter()
                .filter(|s| s.inputs.iter().all(|v| *v == 0.0))
                .map(|s| s.day())
                .collect()
        };
        assert_eq!(zeroed(&a).len(), 25);
        assert_eq!(zeroed(&a), zeroed(&b));
    }

    #[test]
    fn fraction_out_of_range() {
        let ds = dataset(3);
        assert!(matches!(
            augment_zero(&ds, &ZeroMode::Days { fraction: 1.5 }, 0),
            Err(Error::Fraction(_))
        ));
    }
}
