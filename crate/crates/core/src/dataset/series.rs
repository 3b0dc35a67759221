use std::collections::HashMap;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STEP_MINUTES: u32 = 5;
pub const SLOTS_PER_DAY: usize = 288;

pub(crate) const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Five-minute aggregates from one detector.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorSeries {
    pub detector_id: String,
    pub timestamps: Vec<NaiveDateTime>,
    /// Vehicles per five minutes.
    pub flow: Vec<f64>,
    /// Occupancy fraction, when the detector reports it.
    pub occupancy: Option<Vec<f64>>,
}

/// A run of missing five-minute points inside a series.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gap {
    pub detector_id: String,
    pub after: NaiveDateTime,
    pub before: NaiveDateTime,
}

pub fn slot_of(ts: NaiveDateTime) -> usize {
    (ts.hour() * 60 + ts.minute()) as usize / STEP_MINUTES as usize
}

pub fn slot_time(date: NaiveDate, slot: usize) -> NaiveDateTime {
    let minutes = slot as u32 * STEP_MINUTES;
    date.and_hms_opt(minutes / 60, minutes % 60, 0)
        .expect("slot within a day")
}

fn aligned(ts: NaiveDateTime) -> bool {
    ts.second() == 0 && ts.nanosecond() == 0 && ts.minute().is_multiple_of(STEP_MINUTES)
}

impl DetectorSeries {
    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if self.flow.len() != n || self.occupancy.as_ref().is_some_and(|o| o.len() != n) {
            return Err(Error::InvalidSeries(format!(
                "{}: channel lengths differ",
                self.detector_id
            )));
        }
        for (i, ts) in self.timestamps.iter().enumerate() {
            if !aligned(*ts) {
                return Err(Error::InvalidSeries(format!(
                    "{}: timestamp {ts} is not on a five-minute boundary",
                    self.detector_id
                )));
            }
            if i > 0 && *ts <= self.timestamps[i - 1] {
                return Err(Error::InvalidSeries(format!(
                    "{}: timestamps not strictly increasing at {ts}",
                    self.detector_id
                )));
            }
            if !(self.flow[i] >= 0.0) {
                return Err(Error::InvalidSeries(format!(
                    "{}: negative flow at {ts}",
                    self.detector_id
                )));
            }
        }
        Ok(())
    }

    pub fn gaps(&self) -> Vec<Gap> {
        let step = chrono::Duration::minutes(STEP_MINUTES as i64);
        self.timestamps
            .windows(2)
            .filter(|w| w[1] - w[0] != step)
            .map(|w| Gap {
                detector_id: self.detector_id.clone(),
                after: w[0],
                before: w[1],
            })
            .collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut d: Vec<NaiveDate> = self.timestamps.iter().map(|t| t.date()).collect();
        d.dedup();
        d
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    timestamp: String,
    detector_id: String,
    flow: f64,
    occupancy: Option<f64>,
}

/// Reads the long-format detector CSV
/// (`timestamp,detector_id,flow,occupancy`). Series keep first-seen order.
pub fn load_series(path: &Path) -> Result<Vec<DetectorSeries>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_open_error(path, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, DetectorSeries> = HashMap::new();
    let mut occ_seen: HashMap<String, (bool, bool)> = HashMap::new();
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let row = rec.map_err(|e| parse_err(e.to_string()))?;
        let ts = NaiveDateTime::parse_from_str(row.timestamp.trim(), TIMESTAMP_FORMAT)
            .map_err(|e| parse_err(format!("timestamp `{}`: {e}", row.timestamp)))?;
        if !(row.flow >= 0.0) || !row.flow.is_finite() {
            return Err(parse_err(format!("negative or invalid flow {}", row.flow)));
        }
        let s = by_id.entry(row.detector_id.clone()).or_insert_with(|| {
            order.push(row.detector_id.clone());
            DetectorSeries {
                detector_id: row.detector_id.clone(),
                timestamps: Vec::new(),
                flow: Vec::new(),
                occupancy: Some(Vec::new()),
            }
        });
        if let Some(last) = s.timestamps.last() {
            if ts <= *last {
                return Err(parse_err(format!(
                    "timestamp {ts} for {} is not after {last}",
                    row.detector_id
                )));
            }
        }
        if !aligned(ts) {
            return Err(parse_err(format!(
                "timestamp {ts} is not five-minute aligned"
            )));
        }
        s.timestamps.push(ts);
        s.flow.push(row.flow);
        let seen = occ_seen.entry(row.detector_id.clone()).or_default();
        match row.occupancy {
            Some(o) => {
                seen.0 = true;
                if let Some(v) = s.occupancy.as_mut() {
                    v.push(o);
                }
            }
            None => {
                seen.1 = true;
                s.occupancy = None;
            }
        }
    }
    let mut out: Vec<DetectorSeries> = order
        .into_iter()
        .map(|id| by_id.remove(&id).expect("inserted above"))
        .collect();
    for s in &mut out {
        if occ_seen
            .get(&s.detector_id)
            .is_some_and(|(_, missing)| *missing)
        {
            s.occupancy = None;
        }
        s.validate()?;
    }
    Ok(out)
}

pub fn write_series(path: &Path, series: &[DetectorSeries]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_open_error(path, e))?;
    w.write_record(["timestamp", "detector_id", "flow", "occupancy"])?;
    for s in series {
        for (i, ts) in s.timestamps.iter().enumerate() {
            let occ = s
                .occupancy
                .as_ref()
                .map(|o| format!("{:?}", o[i]))
                .unwrap_or_default();
            w.write_record([
                ts.format(TIMESTAMP_FORMAT).to_string(),
                s.detector_id.clone(),
                format!("{:?}", s.flow[i]),
                occ,
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn csv_open_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// Drops detectors (e.g. permanently faulty ones) from a series set.
pub fn exclude_detectors(series: Vec<DetectorSeries>, ids: &[String]) -> Vec<DetectorSeries> {
    series
        .into_iter()
        .filter(|s| !ids.contains(&s.detector_id))
        .collect()
}

/// Dense day × slot × detector × channel array over a contiguous date range.
///
/// A day is usable only if every detector has all 288 points on it.
#[derive(Clone, Debug)]
pub struct FlowGrid {
    detectors: Vec<String>,
    start: NaiveDate,
    days: usize,
    channels: usize,
    values: Vec<f64>,
    complete: Vec<bool>,
}

impl FlowGrid {
    /// `order` fixes the detector axis; channel 0 is flow, channel 1 (when
    /// `with_occupancy`) is occupancy.
    pub fn from_series(
        series: &[DetectorSeries],
        order: &[String],
        with_occupancy: bool,
    ) -> Result<Self> {
        let lookup: Vec<&DetectorSeries> = order
            .iter()
            .map(|id| {
                series
                    .iter()
                    .find(|s| &s.detector_id == id)
                    .ok_or_else(|| Error::UnknownDetector(id.clone()))
            })
            .collect::<Result<_>>()?;
        if with_occupancy {
            if let Some(s) = lookup.iter().find(|s| s.occupancy.is_none()) {
                return Err(Error::InvalidSeries(format!(
                    "{} has no occupancy channel",
                    s.detector_id
                )));
            }
        }
        let first = lookup
            .iter()
            .filter_map(|s| s.timestamps.first())
            .min()
            .ok_or_else(|| Error::InvalidSeries("no data".into()))?
            .date();
        let last = lookup
            .iter()
            .filter_map(|s| s.timestamps.last())
            .max()
            .expect("non-empty")
            .date();
        let days = (last - first).num_days() as usize + 1;
        let d = order.len();
        let channels = if with_occupancy { 2 } else { 1 };
        let mut values = vec![0.0; days * SLOTS_PER_DAY * d * channels];
        let mut counts = vec![0usize; days * d];
        for (di, s) in lookup.iter().enumerate() {
            for (i, ts) in s.timestamps.iter().enumerate() {
                let day = (ts.date() - first).num_days() as usize;
                let slot = slot_of(*ts);
                let base = ((day * SLOTS_PER_DAY + slot) * d + di) * channels;
                values[base] = s.flow[i];
                if with_occupancy {
                    values[base + 1] = s.occupancy.as_ref().expect("checked")[i];
                }
                counts[day * d + di] += 1;
            }
        }
        let complete = (0..days)
            .map(|day| (0..d).all(|di| counts[day * d + di] == SLOTS_PER_DAY))
            .collect();
        Ok(Self {
            detectors: order.to_vec(),
            start: first,
            days,
            channels,
            values,
            complete,
        })
    }

    pub fn detectors(&self) -> &[String] {
        &self.detectors
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_days(&self) -> usize {
        self.days
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start + chrono::Duration::days(day as i64)
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        let i = (date - self.start).num_days();
        (i >= 0 && (i as usize) < self.days).then_some(i as usize)
    }

    pub fn is_complete(&self, day: usize) -> bool {
        self.complete.get(day).copied().unwrap_or(false)
    }

    /// Values of all detectors and channels at a global slot index
    /// (`day · 288 + slot`).
    pub fn at(&self, global_slot: usize) -> &[f64] {
        let w = self.detectors.len() * self.channels;
        &self.values[global_slot * w..(global_slot + 1) * w]
    }
}
