use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_string, Error, Result};
use crate::numerics::LrSchedule;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean absolute error in normalized units.
    #[default]
    Mae,
    Mse,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Dcrnn,
    Gru,
}

/// Everything a training run depends on besides the data and the graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    #[serde(default)]
    pub model: ModelKind,
    #[serde(default = "defaults::plan_id")]
    pub plan_id: String,
    #[serde(default = "defaults::window")]
    pub window: usize,
    #[serde(default = "defaults::horizon")]
    pub horizon: usize,
    #[serde(default = "defaults::k")]
    pub k: usize,
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr: LrSchedule,
    #[serde(default)]
    pub loss: LossKind,
    /// Global gradient-norm bound; `0` disables clipping.
    #[serde(default = "defaults::clip_norm")]
    pub clip_norm: f64,
    /// Adam's denominator guard.
    #[serde(default = "defaults::adam_epsilon")]
    pub adam_epsilon: f64,
    /// Scheduled-sampling decay; when absent the probability crosses one
    /// half at the middle iteration of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_tau: Option<f64>,
    /// Add occupancy as a second input channel.
    #[serde(default)]
    pub use_occupancy: bool,
    /// Train, validation and test fractions of the plan's days.
    #[serde(default = "defaults::split")]
    pub split: [f64; 3],
}

mod defaults {
    use crate::numerics::LrSchedule;

    pub fn plan_id() -> String {
        "P2".into()
    }
    pub fn window() -> usize {
        12
    }
    pub fn horizon() -> usize {
        6
    }
    pub fn k() -> usize {
        2
    }
    pub fn hidden() -> usize {
        16
    }
    pub fn epochs() -> usize {
        100
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn clip_norm() -> f64 {
        5.0
    }
    pub fn adam_epsilon() -> f64 {
        1e-8
    }
    /// Decade decay every 10 epochs from 0.01.
    pub fn lr() -> LrSchedule {
        LrSchedule {
            initial: 0.01,
            ..LrSchedule::default()
        }
    }
    pub fn split() -> [f64; 3] {
        [0.7, 0.1, 0.2]
    }
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            model: ModelKind::default(),
            plan_id: defaults::plan_id(),
            window: defaults::window(),
            horizon: defaults::horizon(),
            k: defaults::k(),
            hidden: defaults::hidden(),
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            lr: defaults::lr(),
            loss: LossKind::default(),
            clip_norm: defaults::clip_norm(),
            adam_epsilon: defaults::adam_epsilon(),
            sampling_tau: None,
            use_occupancy: false,
            split: defaults::split(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.window == 0 || self.horizon == 0 || self.hidden == 0 || self.batch_size == 0 {
            return bad("window, horizon, hidden and batch_size must be positive".into());
        }
        if !(1..=4).contains(&self.k) {
            return bad(format!("k must lie in 1..=4, got {}", self.k));
        }
        if !(self.lr.initial > 0.0) || !(self.lr.factor > 0.0) || !(self.lr.min_lr > 0.0) {
            return bad("learning-rate schedule values must be positive".into());
        }
        if self.lr.every == 0 {
            return bad("lr.every must be positive".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive".into());
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be non-negative".into());
        }
        if let Some(t) = self.sampling_tau {
            if !(t > 0.0) {
                return bad("sampling_tau must be positive".into());
            }
        }
        Ok(())
    }

    pub fn features(&self) -> usize {
        if self.use_occupancy {
            2
        } else {
            1
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let c: Self =
            toml::from_str(text).map_err(|e| crate::signal_graph::toml_error(text, origin, e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_toml()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let c = TrainConfig::parse("seed = 3\n", Path::new("t.toml")).unwrap();
        assert_eq!(c, TrainConfig::new(3));
        assert_eq!((c.epochs, c.batch_size, c.lr.initial), (100, 64, 0.01));
        let mut d = c.clone();
        d.sampling_tau = Some(12.5);
        d.model = ModelKind::Gru;
        d.split = [0.6, 0.2, 0.2];
        let again = TrainConfig::parse(&d.to_toml().unwrap(), Path::new("t.toml")).unwrap();
        assert_eq!(again, d);
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(TrainConfig::parse("epochs = 3\n", Path::new("t.toml")).is_err());
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = TrainConfig::parse("seed = 1\nepochz = 3\n", Path::new("t.toml")).unwrap_err();
        assert!(err.to_string().contains(":2"), "{err}");
    }
}
