use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::dataset::{slot_of, SlidingWindowDataset};
use crate::error::{Error, Result};

/// Per-detector mean of the training flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantMean {
    pub means: Vec<f64>,
}

impl ConstantMean {
    /// Means over every distinct target timestamp of `train`.
    pub fn fit(train: &SlidingWindowDataset) -> Result<Self> {
        let flow = train.target_flow();
        if flow.is_empty() {
            return Err(Error::InsufficientData(
                "constant mean needs training flow".into(),
            ));
        }
        let d = train.num_detectors();
        let mut sums = vec![0.0; d];
        for row in flow.values() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        let n = flow.len() as f64;
        Ok(Self {
            means: sums.into_iter().map(|s| s / n).collect(),
        })
    }

    /// `B × H × D` forecast for every sample of `ds`.
    pub fn predict(&self, ds: &SlidingWindowDataset) -> Vec<f64> {
        let per_sample: Vec<f64> = (0..ds.horizon)
            .flat_map(|_| self.means.iter().map(|m| m.max(0.0)))
            .collect();
        ds.samples.iter().flat_map(|_| per_sample.clone()).collect()
    }
}

/// Historical average by weekday and time of day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeasonalNaive {
    detectors: usize,
    /// `(weekday from Monday, slot) → per-detector average`.
    table: BTreeMap<(u32, usize), Vec<f64>>,
}

impl SeasonalNaive {
    pub fn fit(train: &SlidingWindowDataset) -> Result<Self> {
        let d = train.num_detectors();
        let mut acc: BTreeMap<(u32, usize), (Vec<f64>, usize)> = BTreeMap::new();
        for (ts, row) in train.target_flow() {
            let e = acc.entry(key(ts)).or_insert_with(|| (vec![0.0; d], 0));
            for (s, v) in e.0.iter_mut().zip(&row) {
                *s += v;
            }
            e.1 += 1;
        }
        if acc.is_empty() {
            return Err(Error::InsufficientData(
                "seasonal naive needs training flow".into(),
            ));
        }
        let table = acc
            .into_iter()
            .map(|(k, (sum, n))| (k, sum.into_iter().map(|s| s / n as f64).collect()))
            .collect();
        Ok(Self {
            detectors: d,
            table,
        })
    }

    /// Per-detector average for the weekday and time of day of `ts`.
    pub fn at(&self, ts: NaiveDateTime) -> Result<&[f64]> {
        let (weekday, slot) = key(ts);
        self.table
            .get(&(weekday, slot))
            .map(Vec::as_slice)
            .ok_or(Error::NoHistory { weekday, slot })
    }

    pub fn predict(&self, ds: &SlidingWindowDataset) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ds.len() * ds.horizon * self.detectors);
        for s in &ds.samples {
            for h in 0..ds.horizon {
                out.extend(self.at(s.target_time(h))?.iter().map(|v| v.max(0.0)));
            }
        }
        Ok(out)
    }
}

fn key(ts: NaiveDateTime) -> (u32, usize) {
    (ts.date().weekday().num_days_from_monday(), slot_of(ts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use chrono::NaiveDate;

    fn ds(days: &[(NaiveDate, f64)]) -> SlidingWindowDataset {
        let samples = days
            .iter()
            .map(|(d, v)| Sample {
                target_start: d.and_hms_opt(8, 0, 0).unwrap(),
                inputs: vec![*v; 2],
                targets: vec![*v; 2],
            })
            .collect();
        SlidingWindowDataset {
            plan_id: "P2".into(),
            window: 2,
            horizon: 2,
            detectors: vec!["a".into()],
            features: 1,
            samples,
            normalized: false,
        }
    }

    fn date(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 1, d).unwrap()
    }

    #[test]
    fn constant_mean_of_two_values() {
        let train = ds(&[(date(2), 100.0), (date(3), 200.0)]);
        let m = ConstantMean::fit(&train).unwrap();
        assert_eq!(m.means, vec![150.0]);
        let a = m.predict(&ds(&[(date(9), 1.0)]));
        let b = m.predict(&ds(&[(date(9), 7.0)]));
        assert_eq!(a, vec![150.0, 150.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn two_mondays_average() {
        // 2017-01-02 and 2017-01-09 are Mondays
        let train = ds(&[(date(2), 100.0), (date(9), 120.0), (date(3), 500.0)]);
        let m = SeasonalNaive::fit(&train).unwrap();
        let p = m.predict(&ds(&[(date(16), 0.0)])).unwrap();
        assert_eq!(p, vec![110.0, 110.0]);
    }

    #[test]
    fn missing_weekday_is_an_error() {
        let m = SeasonalNaive::fit(&ds(&[(date(2), 1.0)])).unwrap();
        assert!(matches!(
            m.predict(&ds(&[(date(4), 1.0)])),
            Err(Error::NoHistory { weekday: 2, .. })
        ));
    }
}
