use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::StepScore;
use crate::dataset::{csv_open_error, STEP_MINUTES};
use crate::error::{Error, Result};

/// Horizon steps shown in the wide table (5, 15 and 30 minutes).
pub const REPORTED_HORIZONS: [usize; 3] = [1, 3, 6];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "RMSE")]
    Rmse,
    #[serde(rename = "MAE")]
    Mae,
    #[serde(rename = "MAPE")]
    Mape,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Rmse, Metric::Mae, Metric::Mape];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmse => "RMSE",
            Metric::Mae => "MAE",
            Metric::Mape => "MAPE",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub method: String,
    pub metric: Metric,
    pub window: usize,
    /// 1-based horizon step.
    pub horizon: usize,
}

/// Metric values keyed by method, metric, window and horizon step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    /// Methods in insertion order; rows of the wide report follow it.
    pub methods: Vec<String>,
    pub cells: BTreeMap<CellKey, f64>,
    /// Scored (pair, detector) entries per method and window.
    pub counts: BTreeMap<(String, usize), usize>,
    /// Fraction of entries MAPE skipped, per method and window.
    pub mape_skipped: BTreeMap<(String, usize), f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LongRow {
    method: String,
    metric: Metric,
    window: usize,
    horizon: usize,
    value: f64,
}

impl MetricTable {
    pub fn new() -> Self {
        Self::default()
    }

    fn note_method(&mut self, method: &str) {
        if !self.methods.iter().any(|m| m == method) {
            self.methods.push(method.to_string());
        }
    }

    pub fn insert(
        &mut self,
        method: &str,
        metric: Metric,
        window: usize,
        horizon: usize,
        value: f64,
    ) {
        self.note_method(method);
        self.cells.insert(
            CellKey {
                method: method.to_string(),
                metric,
                window,
                horizon,
            },
            value,
        );
    }

    /// Records the per-step scores of one method at one window.
    pub fn record(&mut self, method: &str, window: usize, scores: &[StepScore]) {
        let mut skipped = 0.0;
        for s in scores {
            self.insert(method, Metric::Rmse, window, s.horizon, s.rmse);
            self.insert(method, Metric::Mae, window, s.horizon, s.mae);
            self.insert(method, Metric::Mape, window, s.horizon, s.mape.value);
            skipped += s.mape.skipped;
        }
        if let Some(s) = scores.first() {
            self.counts.insert((method.to_string(), window), s.count);
            self.mape_skipped
                .insert((method.to_string(), window), skipped / scores.len() as f64);
        }
    }

    pub fn get(&self, method: &str, metric: Metric, window: usize, horizon: usize) -> Option<f64> {
        self.cells
            .get(&CellKey {
                method: method.to_string(),
                metric,
                window,
                horizon,
            })
            .copied()
    }

    pub fn windows(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.cells.keys().map(|k| k.window).collect();
        w.sort_unstable();
        w.dedup();
        w
    }

    pub fn horizons(&self) -> Vec<usize> {
        let mut h: Vec<usize> = self.cells.keys().map(|k| k.horizon).collect();
        h.sort_unstable();
        h.dedup();
        h
    }

    /// Copy holding only the given horizon steps.
    pub fn restrict_horizons(&self, horizons: &[usize]) -> Self {
        let mut out = self.clone();
        out.cells.retain(|k, _| horizons.contains(&k.horizon));
        out
    }

    /// Adds every cell of `other`, replacing duplicates.
    pub fn merge(&mut self, other: &MetricTable) {
        for m in &other.methods {
            self.note_method(m);
        }
        self.cells
            .extend(other.cells.iter().map(|(k, v)| (k.clone(), *v)));
        self.counts
            .extend(other.counts.iter().map(|(k, v)| (k.clone(), *v)));
        self.mape_skipped
            .extend(other.mape_skipped.iter().map(|(k, v)| (k.clone(), *v)));
    }

    /// True when every method was scored on the same number of entries at
    /// each window.
    pub fn counts_consistent(&self) -> bool {
        self.windows().iter().all(|w| {
            let mut c = self
                .counts
                .iter()
                .filter(|((_, win), _)| win == w)
                .map(|(_, n)| *n);
            match c.next() {
                Some(first) => c.all(|n| n == first),
                None => true,
            }
        })
    }

    fn column_label(window: usize, horizon: usize) -> String {
        format!("S{window}_{}min", horizon * STEP_MINUTES as usize)
    }

    fn parse_label(label: &str) -> Option<(usize, usize)> {
        let rest = label.strip_prefix('S')?;
        let (w, m) = rest.split_once('_')?;
        let minutes: usize = m.strip_suffix("min")?.parse().ok()?;
        if minutes == 0 || !minutes.is_multiple_of(STEP_MINUTES as usize) {
            return None;
        }
        Some((w.parse().ok()?, minutes / STEP_MINUTES as usize))
    }

    /// One row per method and metric, one column per window and horizon
    /// step. Missing cells are left empty.
    pub fn to_wide_csv(&self) -> String {
        let windows = self.windows();
        let horizons = self.horizons();
        let mut out = String::from("method,metric");
        for w in &windows {
            for h in &horizons {
                out.push(',');
                out.push_str(&Self::column_label(*w, *h));
            }
        }
        out.push('\n');
        for method in &self.methods {
            for metric in Metric::ALL {
                let mut line = format!("{method},{metric}");
                let mut any = false;
                for w in &windows {
                    for h in &horizons {
                        line.push(',');
                        if let Some(v) = self.get(method, metric, *w, *h) {
                            line.push_str(&format!("{v:?}"));
                            any = true;
                        }
                    }
                }
                if any {
                    out.push_str(&line);
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn from_wide_csv(text: &str, path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
        if header.get(0) != Some("method") || header.get(1) != Some("metric") {
            return Err(err(1, "expected `method,metric` leading columns".into()));
        }
        let columns = header
            .iter()
            .skip(2)
            .map(|l| Self::parse_label(l).ok_or_else(|| err(1, format!("bad column `{l}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut table = Self::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| err(line, e.to_string()))?;
            let method = rec.get(0).unwrap_or_default();
            let metric: Metric = rec
                .get(1)
                .unwrap_or_default()
                .parse()
                .map_err(|e: Error| err(line, e.to_string()))?;
            table.note_method(method);
            for ((w, h), cell) in columns.iter().zip(rec.iter().skip(2)) {
                if cell.is_empty() {
                    continue;
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| err(line, format!("bad value `{cell}`")))?;
                table.insert(method, metric, *w, *h, v);
            }
        }
        Ok(table)
    }

    /// Wide report restricted to the reported horizon steps.
    pub fn write_wide(&self, path: &Path) -> Result<()> {
        crate::error::write_string(
            path,
            &self.restrict_horizons(&REPORTED_HORIZONS).to_wide_csv(),
        )
    }

    pub fn read_wide(path: &Path) -> Result<Self> {
        Self::from_wide_csv(&crate::error::read_to_string(path)?, path)
    }

    /// Every cell as `method,metric,window,horizon,value`.
    pub fn write_long(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_open_error(path, e))?;
        for method in &self.methods {
            for (k, v) in self.cells.iter().filter(|(k, _)| &k.method == method) {
                w.serialize(LongRow {
                    method: k.method.clone(),
                    metric: k.metric,
                    window: k.window,
                    horizon: k.horizon,
                    value: *v,
                })?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Plain-text table for terminals.
    pub fn render(&self, horizons: &[usize]) -> String {
        let t = self.restrict_horizons(horizons);
        let windows = t.windows();
        let hs = t.horizons();
        let mut out = format!("{:<16}{:<6}", "method", "metric");
        for w in &windows {
            for h in &hs {
                out.push_str(&format!("{:>12}", Self::column_label(*w, *h)));
            }
        }
        out.push('\n');
        for method in &t.methods {
            for metric in Metric::ALL {
                out.push_str(&format!("{method:<16}{metric:<6}"));
                for w in &windows {
                    for h in &hs {
                        match t.get(method, metric, *w, *h) {
                            Some(v) => out.push_str(&format!("{v:>12.3}")),
                            None => out.push_str(&format!("{:>12}", "-")),
                        }
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}
