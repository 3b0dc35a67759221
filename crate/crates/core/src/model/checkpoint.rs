use std::path::Path;

use serde::{Deserialize, Serialize};

use super::seq2seq::{Batch, RecurrentModel, Seq2SeqModel};
use crate::dataset::NormStats;
use crate::error::{read_to_string, write_string, Error, Result};
use crate::signal_graph::DetectorGraph;

/// Trained model with everything needed to forecast from raw data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub plan_id: String,
    pub detectors: Vec<String>,
    /// Fingerprint of the transition matrix the model was trained against.
    pub graph_fingerprint: String,
    pub stats: NormStats,
    pub model: RecurrentModel,
}

impl Checkpoint {
    pub fn new(
        model: RecurrentModel,
        graph: &DetectorGraph,
        stats: NormStats,
        plan_id: &str,
    ) -> Self {
        Self {
            plan_id: plan_id.to_string(),
            detectors: graph.detector_ids(),
            graph_fingerprint: graph.fingerprint(),
            stats,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &serde_json::to_string(self)?)
    }

    /// Reads a checkpoint without attaching a graph.
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.display().to_string()));
        }
        Ok(serde_json::from_str(&read_to_string(path)?)?)
    }

    /// Reads a checkpoint and binds it to `graph`, refusing a graph with a
    /// different fingerprint.
    pub fn load(path: &Path, graph: &DetectorGraph) -> Result<Self> {
        let mut c = Self::read(path)?;
        c.attach(graph)?;
        Ok(c)
    }

    pub fn attach(&mut self, graph: &DetectorGraph) -> Result<()> {
        let fp = graph.fingerprint();
        if fp != self.graph_fingerprint {
            return Err(Error::Fingerprint {
                expected: self.graph_fingerprint.clone(),
                found: fp,
            });
        }
        if let RecurrentModel::Dcrnn(m) = &mut self.model {
            m.attach_graph(graph, false)?;
        }
        Ok(())
    }

    pub fn model(&self) -> &dyn Seq2SeqModel {
        &self.model
    }

    /// Forecasts from raw histories, `B × S × D × F` row-major, returning
    /// `B × H × D` raw flow.
    pub fn forecast(&self, history: &[f64]) -> Result<Vec<f64>> {
        let c = self.model.config();
        let per = c.window * c.detectors * c.features;
        if history.is_empty() || !history.len().is_multiple_of(per) {
            return Err(Error::LengthMismatch(format!(
                "history of {} values is not a positive multiple of S·D·F = {per}",
                history.len()
            )));
        }
        if history.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forecast history"));
        }
        let mut inputs = history.to_vec();
        self.stats.normalize_inputs(&mut inputs);
        let batch = Batch {
            size: history.len() / per,
            inputs,
            targets: None,
        };
        self.model.predict(&batch, &self.stats)
    }
}
