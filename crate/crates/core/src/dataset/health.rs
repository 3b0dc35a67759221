use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::series::{csv_open_error, DetectorSeries};
use crate::error::{Error, Result};

/// Per-detector, per-day health flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HealthCalendar {
    flags: BTreeMap<(String, NaiveDate), bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    date: NaiveDate,
    detector_id: String,
    healthy: u8,
}

impl HealthCalendar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, detector: &str, date: NaiveDate, healthy: bool) {
        self.flags.insert((detector.to_string(), date), healthy);
    }

    pub fn get(&self, detector: &str, date: NaiveDate) -> Option<bool> {
        self.flags.get(&(detector.to_string(), date)).copied()
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_open_error(path, e))?;
        let mut cal = Self::new();
        for (i, rec) in reader.deserialize::<Row>().enumerate() {
            let row = rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: e.to_string(),
            })?;
            if row.healthy > 1 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 2,
                    msg: format!("healthy must be 0 or 1, got {}", row.healthy),
                });
            }
            cal.set(&row.detector_id, row.date, row.healthy == 1);
        }
        Ok(cal)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_open_error(path, e))?;
        for ((id, date), healthy) in &self.flags {
            w.serialize(Row {
                date: *date,
                detector_id: id.clone(),
                healthy: u8::from(*healthy),
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Keeps only days on which every detector in `series` is healthy. Surviving
/// days keep all of their points.
pub fn filter_healthy_days(
    series: &[DetectorSeries],
    calendar: &HealthCalendar,
) -> Result<Vec<DetectorSeries>> {
    let dates: BTreeSet<NaiveDate> = series.iter().flat_map(|s| s.dates()).collect();
    let mut keep = BTreeSet::new();
    for date in dates {
        let mut all = true;
        for s in series {
            match calendar.get(&s.detector_id, date) {
                Some(h) => all &= h,
                None => {
                    return Err(Error::CalendarGap {
                        detector: s.detector_id.clone(),
                        date: date.to_string(),
                    })
                }
            }
        }
        if all {
            keep.insert(date);
        }
    }
    Ok(series
        .iter()
        .map(|s| {
            let idx: Vec<usize> = (0..s.timestamps.len())
                .filter(|&i| keep.contains(&s.timestamps[i].date()))
                .collect();
            DetectorSeries {
                detector_id: s.detector_id.clone(),
                timestamps: idx.iter().map(|&i| s.timestamps[i]).collect(),
                flow: idx.iter().map(|&i| s.flow[i]).collect(),
                occupancy: s
                    .occupancy
                    .as_ref()
                    .map(|o| idx.iter().map(|&i| o[i]).collect()),
            }
        })
        .collect())
}
