use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::series::{slot_time, FlowGrid, SLOTS_PER_DAY, STEP_MINUTES};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::signal_graph::SignalTimingPlan;

/// Window sizes tried by default: 15 min, 30 min, 1 h, 2 h.
pub const DEFAULT_WINDOWS: [usize; 4] = [3, 6, 12, 24];
pub const DEFAULT_HORIZON: usize = 6;

/// One aligned (input window, target horizon) pair in raw units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Timestamp of the first target step.
    pub target_start: NaiveDateTime,
    /// `S × D × F`, row-major.
    pub inputs: Vec<f64>,
    /// `H × D` flow.
    pub targets: Vec<f64>,
}

impl Sample {
    pub fn day(&self) -> NaiveDate {
        self.target_start.date()
    }

    /// Timestamp of input step `i` (0 is the oldest) for window size `s`.
    pub fn input_time(&self, i: usize, s: usize) -> NaiveDateTime {
        self.target_start - step(s as i64 - i as i64)
    }

    pub fn target_time(&self, h: usize) -> NaiveDateTime {
        self.target_start + step(h as i64)
    }
}

fn step(n: i64) -> chrono::Duration {
    chrono::Duration::minutes(n * STEP_MINUTES as i64)
}

/// Sliding-window pairs for one signal plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlidingWindowDataset {
    pub plan_id: String,
    pub window: usize,
    pub horizon: usize,
    pub detectors: Vec<String>,
    /// Input channels per detector; channel 0 is flow.
    pub features: usize,
    pub samples: Vec<Sample>,
    #[serde(default)]
    pub normalized: bool,
}

impl SlidingWindowDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_detectors(&self) -> usize {
        self.detectors.len()
    }

    /// Distinct target days in chronological order.
    pub fn days(&self) -> Vec<NaiveDate> {
        self.samples
            .iter()
            .map(Sample::day)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn input_tensor(&self, i: usize) -> Tensor {
        let shape = [self.window, self.detectors.len(), self.features];
        Tensor::new(shape.to_vec(), self.samples[i].inputs.clone()).expect("sample shape")
    }

    pub fn target_tensor(&self, i: usize) -> Tensor {
        let shape = [self.horizon, self.detectors.len(), 1];
        Tensor::new(shape.to_vec(), self.samples[i].targets.clone()).expect("sample shape")
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Self {
        Self {
            plan_id: self.plan_id.clone(),
            window: self.window,
            horizon: self.horizon,
            detectors: self.detectors.clone(),
            features: self.features,
            samples,
            normalized: self.normalized,
        }
    }

    /// Samples whose target day is in `days`.
    pub fn filter_days(&self, days: &BTreeSet<NaiveDate>) -> Self {
        self.with_samples(
            self.samples
                .iter()
                .filter(|s| days.contains(&s.day()))
                .cloned()
                .collect(),
        )
    }

    /// Raw flow by (timestamp, detector) reconstructed from inputs and
    /// targets. Every in-period slot appears as some target.
    pub fn observed_flow(&self) -> BTreeMap<NaiveDateTime, Vec<f64>> {
        let d = self.detectors.len();
        let f = self.features;
        let mut out = BTreeMap::new();
        for s in &self.samples {
            for i in 0..self.window {
                let row: Vec<f64> = (0..d).map(|k| s.inputs[(i * d + k) * f]).collect();
                out.entry(s.input_time(i, self.window)).or_insert(row);
            }
            for h in 0..self.horizon {
                out.entry(s.target_time(h))
                    .or_insert_with(|| s.targets[h * d..(h + 1) * d].to_vec());
            }
        }
        out
    }

    /// Only the target side of [`SlidingWindowDataset::observed_flow`]: the
    /// in-period flow.
    pub fn target_flow(&self) -> BTreeMap<NaiveDateTime, Vec<f64>> {
        let d = self.detectors.len();
        let mut out = BTreeMap::new();
        for s in &self.samples {
            for h in 0..self.horizon {
                out.entry(s.target_time(h))
                    .or_insert_with(|| s.targets[h * d..(h + 1) * d].to_vec());
            }
        }
        out
    }

    pub fn normalize(&self, stats: &NormStats) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            stats.normalize_inputs(&mut s.inputs);
            stats.normalize_targets(&mut s.targets);
        }
        out.normalized = true;
        out
    }

    pub fn denormalize(&self, stats: &NormStats) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            stats.denormalize_inputs(&mut s.inputs);
            stats.denormalize_targets(&mut s.targets);
        }
        out.normalized = false;
        out
    }

    /// Restriction to a subset of detectors, in the given order.
    pub fn select_detectors(&self, keep: &[String]) -> Result<Self> {
        let idx: Vec<usize> = keep
            .iter()
            .map(|k| {
                self.detectors
                    .iter()
                    .position(|d| d == k)
                    .ok_or_else(|| Error::UnknownDetector(k.clone()))
            })
            .collect::<Result<_>>()?;
        let (d, f) = (self.detectors.len(), self.features);
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                target_start: s.target_start,
                inputs: (0..self.window)
                    .flat_map(|t| {
                        idx.iter()
                            .flat_map(move |&k| (0..f).map(move |c| (t * d + k) * f + c))
                    })
                    .map(|i| s.inputs[i])
                    .collect(),
                targets: (0..self.horizon)
                    .flat_map(|h| idx.iter().map(move |&k| h * d + k))
                    .map(|i| s.targets[i])
                    .collect(),
            })
            .collect();
        let mut out = self.with_samples(samples);
        out.detectors = keep.to_vec();
        Ok(out)
    }
}

/// Builds every pair of one plan. For each activation period on each
/// eligible day, targets lie inside the period while inputs may reach back
/// `start_buffer` steps before it, so the pair count per period does not
/// depend on the window size when `start_buffer == window`.
pub fn slice_plan_windows(
    grid: &FlowGrid,
    plan: &SignalTimingPlan,
    window: usize,
    horizon: usize,
    start_buffer: usize,
) -> Result<SlidingWindowDataset> {
    if window == 0 || horizon == 0 {
        return Err(Error::Config("window and horizon must be positive".into()));
    }
    if start_buffer < window {
        return Err(Error::Config(format!(
            "start buffer {start_buffer} shorter than window {window}"
        )));
    }
    let step = STEP_MINUTES;
    let d = grid.detectors().len();
    let f = grid.channels();
    let mut samples = Vec::new();
    for w in &plan.activation {
        let first = (w.start_minute / step) as usize;
        let end = w.end_minute.div_ceil(step) as usize;
        let points = end - first;
        if points < horizon {
            return Err(Error::PeriodTooShort { points, horizon });
        }
        for day in 0..grid.num_days() {
            let date = grid.date(day);
            if !plan.days.contains_date(date) || !grid.is_complete(day) {
                continue;
            }
            let period_start = day * SLOTS_PER_DAY + first;
            if period_start < window {
                continue;
            }
            // the buffer may reach into the previous day
            let buffer_day = (period_start - window) / SLOTS_PER_DAY;
            if buffer_day != day && !grid.is_complete(buffer_day) {
                continue;
            }
            for j in 0..=(points - horizon) {
                let t0 = period_start + j;
                let mut inputs = Vec::with_capacity(window * d * f);
                for g in (t0 - window)..t0 {
                    inputs.extend_from_slice(grid.at(g));
                }
                let mut targets = Vec::with_capacity(horizon * d);
                for g in t0..t0 + horizon {
                    let row = grid.at(g);
                    targets.extend((0..d).map(|k| row[k * f]));
                }
                samples.push(Sample {
                    target_start: slot_time(date, first + j),
                    inputs,
                    targets,
                });
            }
        }
    }
    samples.sort_by_key(|s| s.target_start);
    Ok(SlidingWindowDataset {
        plan_id: plan.id.clone(),
        window,
        horizon,
        detectors: grid.detectors().to_vec(),
        features: f,
        samples,
        normalized: false,
    })
}

/// Per detector-channel z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub detectors: usize,
    pub features: usize,
    /// `D × F`.
    pub mean: Vec<f64>,
    /// `D × F`; a zero deviation is replaced by 1.
    pub std: Vec<f64>,
}

impl NormStats {
    /// Statistics over every distinct timestamp covered by the dataset.
    pub fn fit(ds: &SlidingWindowDataset) -> Result<Self> {
        if ds.normalized {
            return Err(Error::Config("statistics must be fit on raw data".into()));
        }
        let (d, f) = (ds.detectors.len(), ds.features);
        let mut by_time: BTreeMap<NaiveDateTime, Vec<Option<f64>>> = BTreeMap::new();
        for s in &ds.samples {
            for i in 0..ds.window {
                let entry = by_time
                    .entry(s.input_time(i, ds.window))
                    .or_insert_with(|| vec![None; d * f]);
                for (k, slot) in entry.iter_mut().enumerate() {
                    *slot = Some(s.inputs[i * d * f + k]);
                }
            }
            for h in 0..ds.horizon {
                let entry = by_time
                    .entry(s.target_time(h))
                    .or_insert_with(|| vec![None; d * f]);
                for k in 0..d {
                    entry[k * f] = Some(s.targets[h * d + k]);
                }
            }
        }
        if by_time.is_empty() {
            return Err(Error::InsufficientData(
                "no samples to fit statistics".into(),
            ));
        }
        let mut mean = vec![0.0; d * f];
        let mut std = vec![0.0; d * f];
        for k in 0..d * f {
            let vals: Vec<f64> = by_time.values().filter_map(|v| v[k]).collect();
            let n = vals.len().max(1) as f64;
            let m = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            mean[k] = m;
            std[k] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(Self {
            detectors: d,
            features: f,
            mean,
            std,
        })
    }

    pub fn normalize_inputs(&self, x: &mut [f64]) {
        let w = self.mean.len();
        for (i, v) in x.iter_mut().enumerate() {
            *v = (*v - self.mean[i % w]) / self.std[i % w];
        }
    }

    pub fn denormalize_inputs(&self, x: &mut [f64]) {
        let w = self.mean.len();
        for (i, v) in x.iter_mut().enumerate() {
            *v = *v * self.std[i % w] + self.mean[i % w];
        }
    }

    pub fn flow_mean(&self, detector: usize) -> f64 {
        self.mean[detector * self.features]
    }

    pub fn flow_std(&self, detector: usize) -> f64 {
        self.std[detector * self.features]
    }

    /// `values` is `… × D` flow.
    pub fn normalize_targets(&self, values: &mut [f64]) {
        for (i, v) in values.iter_mut().enumerate() {
            let k = i % self.detectors;
            *v = (*v - self.flow_mean(k)) / self.flow_std(k);
        }
    }

    pub fn denormalize_targets(&self, values: &mut [f64]) {
        for (i, v) in values.iter_mut().enumerate() {
            let k = i % self.detectors;
            *v = *v * self.flow_std(k) + self.flow_mean(k);
        }
    }

    pub fn select_detectors(&self, idx: &[usize]) -> Self {
        let f = self.features;
        let pick = |v: &[f64]| -> Vec<f64> {
            idx.iter()
                .flat_map(|&k| (0..f).map(move |c| v[k * f + c]))
                .collect()
        };
        Self {
            detectors: idx.len(),
            features: f,
            mean: pick(&self.mean),
            std: pick(&self.std),
        }
    }
}

/// Chronological train / validation / test partition at day granularity.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: SlidingWindowDataset,
    pub validation: SlidingWindowDataset,
    pub test: SlidingWindowDataset,
}

impl SplitDataset {
    pub fn stats(&self) -> Result<NormStats> {
        NormStats::fit(&self.train)
    }
}

/// Splits by whole days: the earliest `fractions[0]` of days train, the
/// next `fractions[1]` validate, and the rest test. Pairs whose inputs
/// reach into a day of another split are dropped.
pub fn chronological_split(ds: &SlidingWindowDataset, fractions: [f64; 3]) -> Result<SplitDataset> {
    if fractions.iter().any(|f| *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!(
            "fractions {fractions:?} must sum to 1"
        )));
    }
    let days = ds.days();
    let n = days.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_test = n.saturating_sub(n_train + n_val);
    for (name, frac, count) in [
        ("train", fractions[0], n_train),
        ("validation", fractions[1], n_val),
        ("test", fractions[2], n_test),
    ] {
        if frac > 0.0 && count == 0 {
            return Err(Error::InvalidSplit(format!(
                "{name} split of {n} days is too small for one window"
            )));
        }
    }
    let sets: Vec<BTreeSet<NaiveDate>> = [
        &days[..n_train],
        &days[n_train..n_train + n_val],
        &days[n_train + n_val..],
    ]
    .iter()
    .map(|d| d.iter().copied().collect())
    .collect();
    let pick = |set: &BTreeSet<NaiveDate>| {
        let mut part = ds.filter_days(set);
        part.samples.retain(|s| {
            (0..ds.window).all(|i| {
                let d = s.input_time(i, ds.window).date();
                d == s.day() || set.contains(&d) || !days.contains(&d)
            })
        });
        part
    };
    Ok(SplitDataset {
        train: pick(&sets[0]),
        validation: pick(&sets[1]),
        test: pick(&sets[2]),
    })
}

pub fn weekday_index(date: NaiveDate) -> u32 {
    date.weekday().num_days_from_monday()
}
