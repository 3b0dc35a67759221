use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::Serialize;

use super::predictions::Predictions;
use super::table::MetricTable;
use crate::dataset::{csv_open_error, STEP_MINUTES, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};

#[derive(Serialize)]
struct PlotRow<'a> {
    method: &'a str,
    window: usize,
    timestamp: String,
    horizon: usize,
    detector_id: &'a str,
    truth: f64,
    prediction: f64,
}

/// Files written by [`per_horizon_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub wide: PathBuf,
    pub long: PathBuf,
    pub plot: PathBuf,
}

/// Writes `metrics.csv` (reported horizons, wide), `metrics_long.csv`
/// (every cell) and `plot_data.csv`, which pairs each forecast with the
/// value it targets for external plotting.
pub fn per_horizon_report(
    table: &MetricTable,
    predictions: &[Predictions],
    truths: &[Predictions],
    dir: &Path,
) -> Result<ReportFiles> {
    if table.cells.is_empty() {
        return Err(Error::EmptyMetric);
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        wide: dir.join("metrics.csv"),
        long: dir.join("metrics_long.csv"),
        plot: dir.join("plot_data.csv"),
    };
    table.write_wide(&files.wide)?;
    table.write_long(&files.long)?;
    let mut w = csv::Writer::from_path(&files.plot).map_err(|e| csv_open_error(&files.plot, e))?;
    for pred in predictions {
        let truth = truths
            .iter()
            .find(|t| t.window == pred.window && t.check_aligned(pred).is_ok())
            .ok_or_else(|| {
                Error::LengthMismatch(format!(
                    "no test targets aligned with {} at S={}",
                    pred.method, pred.window
                ))
            })?;
        for (p, start) in pred.target_starts.iter().enumerate() {
            for h in 0..pred.horizon {
                let ts = *start + Duration::minutes((h as u32 * STEP_MINUTES) as i64);
                let stamp = ts.format(TIMESTAMP_FORMAT).to_string();
                for (k, id) in pred.detectors.iter().enumerate() {
                    w.serialize(PlotRow {
                        method: &pred.method,
                        window: pred.window,
                        timestamp: stamp.clone(),
                        horizon: h + 1,
                        detector_id: id,
                        truth: truth.at(p, h, k),
                        prediction: pred.at(p, h, k),
                    })?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(&files.plot, e))?;
    Ok(files)
}
