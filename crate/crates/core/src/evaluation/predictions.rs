use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::dataset::{csv_open_error, SlidingWindowDataset, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};

/// Forecasts of one method for every pair of a split, in raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub method: String,
    pub window: usize,
    pub horizon: usize,
    pub detectors: Vec<String>,
    /// Timestamp of the first target step of each pair.
    pub target_starts: Vec<NaiveDateTime>,
    /// `N × H × D`.
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    method: String,
    window: usize,
    target_start: String,
    horizon: usize,
    detector_id: String,
    value: f64,
}

impl Predictions {
    pub fn new(method: &str, ds: &SlidingWindowDataset, values: Vec<f64>) -> Result<Self> {
        let want = ds.len() * ds.horizon * ds.num_detectors();
        if values.len() != want {
            return Err(Error::LengthMismatch(format!(
                "{} prediction values for {} pairs × {} steps × {} detectors",
                values.len(),
                ds.len(),
                ds.horizon,
                ds.num_detectors()
            )));
        }
        Ok(Self {
            method: method.to_string(),
            window: ds.window,
            horizon: ds.horizon,
            detectors: ds.detectors.clone(),
            target_starts: ds.samples.iter().map(|s| s.target_start).collect(),
            values,
        })
    }

    /// Ground-truth targets of `ds` in the same shape.
    pub fn truth(ds: &SlidingWindowDataset) -> Self {
        let values = ds
            .samples
            .iter()
            .flat_map(|s| s.targets.iter().copied())
            .collect();
        Self::new("truth", ds, values).expect("targets have the dataset shape")
    }

    pub fn len(&self) -> usize {
        self.target_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_starts.is_empty()
    }

    pub fn at(&self, pair: usize, step: usize, detector: usize) -> f64 {
        let d = self.detectors.len();
        self.values[(pair * self.horizon + step) * d + detector]
    }

    /// Values of horizon step `step` (0-based) for every pair and detector.
    pub fn step(&self, step: usize) -> Vec<f64> {
        let d = self.detectors.len();
        (0..self.len())
            .flat_map(|p| (0..d).map(move |k| (p, k)))
            .map(|(p, k)| self.at(p, step, k))
            .collect()
    }

    /// Checks that `other` covers the same pairs, steps and detectors.
    pub fn check_aligned(&self, other: &Predictions) -> Result<()> {
        if self.horizon != other.horizon
            || self.detectors != other.detectors
            || self.target_starts != other.target_starts
        {
            return Err(Error::LengthMismatch(format!(
                "{} ({} pairs, H={}, {} detectors) vs {} ({} pairs, H={}, {} detectors)",
                self.method,
                self.len(),
                self.horizon,
                self.detectors.len(),
                other.method,
                other.len(),
                other.horizon,
                other.detectors.len()
            )));
        }
        Ok(())
    }

    /// Long format: `method,window,target_start,horizon,detector_id,value`
    /// with 1-based horizon steps.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_open_error(path, e))?;
        for (p, ts) in self.target_starts.iter().enumerate() {
            for h in 0..self.horizon {
                for (k, id) in self.detectors.iter().enumerate() {
                    w.serialize(Row {
                        method: self.method.clone(),
                        window: self.window,
                        target_start: ts.format(TIMESTAMP_FORMAT).to_string(),
                        horizon: h + 1,
                        detector_id: id.clone(),
                        value: self.at(p, h, k),
                    })?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_open_error(path, e))?;
        let mut method = None;
        let mut window = 0;
        let mut detectors: Vec<String> = Vec::new();
        let mut horizon = 0;
        let mut cells: BTreeMap<(NaiveDateTime, usize, usize), f64> = BTreeMap::new();
        for (i, rec) in reader.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            };
            let row = rec.map_err(|e| err(e.to_string()))?;
            let ts = NaiveDateTime::parse_from_str(&row.target_start, TIMESTAMP_FORMAT)
                .map_err(|e| err(format!("timestamp `{}`: {e}", row.target_start)))?;
            match &method {
                None => {
                    method = Some(row.method.clone());
                    window = row.window;
                }
                Some(m) if *m != row.method || window != row.window => {
                    return Err(err("one method and window per file".into()));
                }
                _ => {}
            }
            if row.horizon == 0 {
                return Err(err("horizon steps are 1-based".into()));
            }
            horizon = horizon.max(row.horizon);
            let k = match detectors.iter().position(|d| *d == row.detector_id) {
                Some(k) => k,
                None => {
                    detectors.push(row.detector_id.clone());
                    detectors.len() - 1
                }
            };
            if cells.insert((ts, row.horizon - 1, k), row.value).is_some() {
                return Err(err("duplicate cell".into()));
            }
        }
        let target_starts: Vec<NaiveDateTime> = cells
            .keys()
            .map(|(ts, _, _)| *ts)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let d = detectors.len();
        if cells.len() != target_starts.len() * horizon * d {
            return Err(Error::LengthMismatch(format!(
                "{}: incomplete prediction grid",
                path.display()
            )));
        }
        // BTreeMap order is (timestamp, step, detector index): the value layout
        let values = cells.into_values().collect();
        Ok(Self {
            method: method.unwrap_or_default(),
            window,
            horizon,
            detectors,
            target_starts,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use chrono::NaiveDate;

    #[test]
    fn csv_round_trip() {
        let d0 = NaiveDate::from_ymd_opt(2017, 1, 2).unwrap();
        let ds = SlidingWindowDataset {
            plan_id: "P2".into(),
            window: 2,
            horizon: 2,
            detectors: vec!["b".into(), "a".into()],
            features: 1,
            samples: (0..3)
                .map(|i| Sample {
                    target_start: d0.and_hms_opt(7, 5 * i, 0).unwrap(),
                    inputs: vec![0.0; 4],
                    targets: vec![1.5 * i as f64, 2.0, 3.0, 0.1],
                })
                .collect(),
            normalized: false,
        };
        let p = Predictions::truth(&ds);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        p.write_csv(&path).unwrap();
        assert_eq!(Predictions::read_csv(&path).unwrap(), p);
        assert_eq!(p.step(1), vec![3.0, 0.1, 3.0, 0.1, 3.0, 0.1]);
    }
}
