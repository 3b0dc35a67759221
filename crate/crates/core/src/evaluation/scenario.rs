use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{score, DEFAULT_MAPE_FLOOR};
use super::predictions::Predictions;
use super::table::MetricTable;
use crate::baselines::{ArimaxModel, ConstantMean, SeasonalNaive};
use crate::dataset::{
    augment_zero, chronological_split, slice_plan_windows, weekday_index, FlowGrid,
    SlidingWindowDataset, SplitDataset, ZeroMode,
};
use crate::error::{read_to_string, Error, Result};
use crate::model::Checkpoint;
use crate::signal_graph::{restrict_graph, DetectorGraph, SignalTimingPlan};
use crate::training::{
    build_model, predict, train, ModelKind, PreparedData, TrainConfig, TrainLog,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dcrnn,
    Gru,
    Arimax,
    SeasonalNaive,
    ConstantMean,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Dcrnn,
        Method::Gru,
        Method::Arimax,
        Method::SeasonalNaive,
        Method::ConstantMean,
    ];

    /// Row label in reports.
    pub fn name(self) -> &'static str {
        match self {
            Method::Dcrnn => "DCRNN",
            Method::Gru => "GRU",
            Method::Arimax => "ARIMAX",
            Method::SeasonalNaive => "Seasonal Naive",
            Method::ConstantMean => "Constant Mean",
        }
    }

    fn model_kind(self) -> Option<ModelKind> {
        match self {
            Method::Dcrnn => Some(ModelKind::Dcrnn),
            Method::Gru => Some(ModelKind::Gru),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    FullInformation,
    /// Train and test on a subset of detectors with the induced graph.
    DetectorSubset,
    /// Listed detectors read zero.
    ZeroDetectors,
    /// All detectors read zero on a fraction of days.
    ZeroDays,
}

/// How the recurrent methods are partitioned into separately trained models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One model per window forecasting every horizon step.
    #[default]
    Joint,
    /// One model per weekday.
    DayOfWeek,
    /// One model per horizon step.
    SingleHorizon,
}

/// Zeroing fractions studied for the day ablation.
pub const ZERO_DAY_FRACTIONS: [f64; 4] = [0.05, 0.10, 0.25, 0.50];

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    pub kind: ScenarioKind,
    /// Kept detectors for a subset, silenced detectors for zeroing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detectors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    /// Train new models on the scenario data instead of reusing the
    /// full-information checkpoints.
    #[serde(default)]
    pub retrain: bool,
    pub seed: u64,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    /// Window sizes to evaluate; empty means the training config's window.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub windows: Vec<usize>,
    #[serde(default)]
    pub variant: Variant,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Self {
            name: String::new(),
            kind,
            detectors: Vec::new(),
            fraction: None,
            retrain: matches!(
                kind,
                ScenarioKind::FullInformation | ScenarioKind::DetectorSubset
            ),
            seed,
            methods: all_methods(),
            windows: Vec::new(),
            variant: Variant::Joint,
        }
    }

    pub fn full_information(seed: u64) -> Self {
        Self::new(ScenarioKind::FullInformation, seed)
    }

    pub fn zero_days(fraction: f64, retrain: bool, seed: u64) -> Self {
        Self {
            fraction: Some(fraction),
            retrain,
            ..Self::new(ScenarioKind::ZeroDays, seed)
        }
    }

    pub fn zero_detectors(ids: &[String], retrain: bool, seed: u64) -> Self {
        Self {
            detectors: ids.to_vec(),
            retrain,
            ..Self::new(ScenarioKind::ZeroDetectors, seed)
        }
    }

    pub fn detector_subset(keep: &[String], seed: u64) -> Self {
        Self {
            detectors: keep.to_vec(),
            ..Self::new(ScenarioKind::DetectorSubset, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scenario `{}`: {m}", self.name)));
        match self.kind {
            ScenarioKind::FullInformation => {
                if !self.detectors.is_empty() || self.fraction.is_some() {
                    return bad("full_information takes no detectors or fraction");
                }
            }
            ScenarioKind::DetectorSubset => {
                if self.detectors.is_empty() {
                    return Err(Error::EmptySubset);
                }
                if self.fraction.is_some() {
                    return bad("detector_subset takes no fraction");
                }
                if !self.retrain {
                    return bad("a detector subset changes the graph, so retrain must be true");
                }
            }
            ScenarioKind::ZeroDetectors => {
                if self.detectors.is_empty() {
                    return bad("zero_detectors needs at least one detector");
                }
                if self.fraction.is_some() {
                    return bad("zero_detectors takes no fraction");
                }
            }
            ScenarioKind::ZeroDays => {
                let f = self
                    .fraction
                    .ok_or_else(|| Error::Config("zero_days needs a fraction".into()))?;
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::Fraction(f));
                }
                if !self.detectors.is_empty() {
                    return bad("zero_days takes no detectors");
                }
            }
        }
        if self.methods.is_empty() {
            return bad("no methods");
        }
        if self.windows.contains(&0) {
            return bad("window sizes must be positive");
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let spec: Self =
            toml::from_str(text).map_err(|e| crate::signal_graph::toml_error(text, origin, e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Directory of recurrent checkpoints trained in the full-information
/// scenario, one file per method, window and variant part.
#[derive(Clone, Debug)]
pub struct CheckpointStore {
    pub dir: PathBuf,
}

impl CheckpointStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self, method: Method, window: usize, part: &str) -> PathBuf {
        let stem = match method {
            Method::Dcrnn => "dcrnn",
            Method::Gru => "gru",
            Method::Arimax => "arimax",
            Method::SeasonalNaive => "seasonal_naive",
            Method::ConstantMean => "constant_mean",
        };
        let suffix = if part.is_empty() {
            String::new()
        } else {
            format!("_{part}")
        };
        self.dir.join(format!("{stem}_s{window}{suffix}.json"))
    }
}

/// Everything a scenario run reads.
pub struct ScenarioContext<'a> {
    pub grid: &'a FlowGrid,
    /// Full-information graph; subsets are rebuilt from its source specs.
    pub graph: &'a DetectorGraph,
    /// Plan whose activation periods define the pairs.
    pub plan: &'a SignalTimingPlan,
    pub config: &'a TrainConfig,
    pub store: Option<&'a CheckpointStore>,
}

/// Training history of one recurrent model.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRun {
    pub method: Method,
    pub window: usize,
    pub part: String,
    pub log: TrainLog,
}

#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub spec: ScenarioSpec,
    pub table: MetricTable,
    /// Forecasts per method and window on the scenario's test split.
    pub predictions: Vec<Predictions>,
    /// Test targets, one entry per window.
    pub truths: Vec<Predictions>,
    pub runs: Vec<TrainingRun>,
}

/// Pairs of `ds` whose horizon is cut down to the single step `step`.
fn single_step(ds: &SlidingWindowDataset, step: usize) -> SlidingWindowDataset {
    let d = ds.num_detectors();
    let mut out = ds.clone();
    out.horizon = 1;
    for s in &mut out.samples {
        s.targets = s.targets[step * d..(step + 1) * d].to_vec();
    }
    out
}

fn split_map(
    split: &SplitDataset,
    f: impl Fn(&SlidingWindowDataset) -> SlidingWindowDataset,
) -> SplitDataset {
    SplitDataset {
        train: f(&split.train),
        validation: f(&split.validation),
        test: f(&split.test),
    }
}

struct Harness<'a> {
    ctx: &'a ScenarioContext<'a>,
    spec: &'a ScenarioSpec,
    runs: Vec<TrainingRun>,
}

impl Harness<'_> {
    /// Trains one recurrent model on `fit` (or loads it) and forecasts `test`.
    fn recurrent_part(
        &mut self,
        method: Method,
        config: &TrainConfig,
        graph: &DetectorGraph,
        fit: &SplitDataset,
        test: &SlidingWindowDataset,
        part: &str,
    ) -> Result<Vec<f64>> {
        let path = self.ctx.store.map(|s| s.path(method, config.window, part));
        let checkpoint = if self.spec.retrain {
            let mut cfg = config.clone();
            cfg.model = method.model_kind().expect("recurrent method");
            let data = PreparedData::new(fit.clone())?;
            let mut model = build_model(&cfg, graph)?;
            let log = train(&mut model, &data.normalized, &cfg)?;
            self.runs.push(TrainingRun {
                method,
                window: config.window,
                part: part.to_string(),
                log,
            });
            let ckpt = Checkpoint::new(model, graph, data.stats, &cfg.plan_id);
            if self.spec.kind == ScenarioKind::FullInformation {
                if let Some(p) = &path {
                    ckpt.save(p)?;
                }
            }
            ckpt
        } else {
            let p = path.ok_or_else(|| {
                Error::MissingCheckpoint(format!(
                    "{} S={} (no checkpoint directory)",
                    method.name(),
                    config.window
                ))
            })?;
            Checkpoint::load(&p, graph)?
        };
        Ok(predict(&checkpoint, test)?.values)
    }

    fn recurrent(
        &mut self,
        method: Method,
        config: &TrainConfig,
        graph: &DetectorGraph,
        fit: &SplitDataset,
        test: &SlidingWindowDataset,
    ) -> Result<Vec<f64>> {
        let d = test.num_detectors();
        let h = test.horizon;
        match self.spec.variant {
            Variant::Joint => self.recurrent_part(method, config, graph, fit, test, ""),
            Variant::SingleHorizon => {
                let mut values = vec![0.0; test.len() * h * d];
                let mut cfg = config.clone();
                cfg.horizon = 1;
                for step in 0..h {
                    let part_fit = split_map(fit, |x| single_step(x, step));
                    let part_test = single_step(test, step);
                    let v = self.recurrent_part(
                        method,
                        &cfg,
                        graph,
                        &part_fit,
                        &part_test,
                        &format!("h{}", step + 1),
                    )?;
                    for p in 0..test.len() {
                        values[(p * h + step) * d..(p * h + step + 1) * d]
                            .copy_from_slice(&v[p * d..(p + 1) * d]);
                    }
                }
                Ok(values)
            }
            Variant::DayOfWeek => {
                let mut values = vec![0.0; test.len() * h * d];
                let weekdays: BTreeSet<u32> = test
                    .samples
                    .iter()
                    .map(|s| weekday_index(s.day()))
                    .collect();
                for wd in weekdays {
                    let only = |x: &SlidingWindowDataset| {
                        let days: BTreeSet<_> = x
                            .days()
                            .into_iter()
                            .filter(|d| weekday_index(*d) == wd)
                            .collect();
                        x.filter_days(&days)
                    };
                    let part_fit = split_map(fit, only);
                    if part_fit.train.is_empty() {
                        return Err(Error::InsufficientData(format!(
                            "no training days for weekday {wd}"
                        )));
                    }
                    let part_test = only(test);
                    let v = self.recurrent_part(
                        method,
                        config,
                        graph,
                        &part_fit,
                        &part_test,
                        &format!("dow{wd}"),
                    )?;
                    let index: BTreeMap<_, _> = part_test
                        .samples
                        .iter()
                        .enumerate()
                        .map(|(i, s)| (s.target_start, i))
                        .collect();
                    for (p, s) in test.samples.iter().enumerate() {
                        if let Some(&i) = index.get(&s.target_start) {
                            values[p * h * d..(p + 1) * h * d]
                                .copy_from_slice(&v[i * h * d..(i + 1) * h * d]);
                        }
                    }
                }
                Ok(values)
            }
        }
    }
}

/// Evaluates every method of `spec` at every window on the scenario's test
/// split. Recurrent models are trained on the scenario data when `retrain`
/// is set and loaded from the checkpoint store otherwise; classical
/// baselines are refit, on the scenario training data when retraining and
/// on the full-information training data otherwise.
pub fn run_scenario(spec: &ScenarioSpec, ctx: &ScenarioContext) -> Result<ScenarioOutcome> {
    spec.validate()?;
    ctx.config.validate()?;
    let windows = if spec.windows.is_empty() {
        vec![ctx.config.window]
    } else {
        spec.windows.clone()
    };
    let graph = match spec.kind {
        ScenarioKind::DetectorSubset => restrict_graph(ctx.graph, &spec.detectors)?,
        _ => ctx.graph.clone(),
    };
    let mut harness = Harness {
        ctx,
        spec,
        runs: Vec::new(),
    };
    let mut table = MetricTable::new();
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    for &window in &windows {
        let mut config = ctx.config.clone();
        config.window = window;
        let mut ds = slice_plan_windows(ctx.grid, ctx.plan, window, config.horizon, window)?;
        if ds.detectors != graph.detector_ids() {
            ds = ds.select_detectors(&graph.detector_ids())?;
        }
        let scenario_ds = match spec.kind {
            ScenarioKind::ZeroDetectors => augment_zero(
                &ds,
                &ZeroMode::Detectors {
                    ids: spec.detectors.clone(),
                },
                spec.seed,
            )?,
            ScenarioKind::ZeroDays => augment_zero(
                &ds,
                &ZeroMode::Days {
                    fraction: spec.fraction.expect("validated"),
                },
                spec.seed,
            )?,
            _ => ds.clone(),
        };
        let scenario = chronological_split(&scenario_ds, config.split)?;
        let fit = if spec.retrain {
            scenario.clone()
        } else {
            chronological_split(&ds, config.split)?
        };
        let test = &scenario.test;
        if test.is_empty() {
            return Err(Error::InsufficientData("empty test split".into()));
        }
        let truth = Predictions::truth(test);
        for &method in &spec.methods {
            let values = match method {
                Method::ConstantMean => ConstantMean::fit(&fit.train)?.predict(test),
                Method::SeasonalNaive => SeasonalNaive::fit(&fit.train)?.predict(test)?,
                Method::Arimax => ArimaxModel::fit(&fit.train)?.predict(test)?,
                Method::Dcrnn | Method::Gru => {
                    harness.recurrent(method, &config, &graph, &fit, test)?
                }
            };
            let pred = Predictions::new(method.name(), test, values)?;
            table.record(
                method.name(),
                window,
                &score(&pred, &truth, DEFAULT_MAPE_FLOOR)?,
            );
            predictions.push(pred);
        }
        truths.push(truth);
    }
    Ok(ScenarioOutcome {
        spec: spec.clone(),
        table,
        predictions,
        truths,
        runs: harness.runs,
    })
}
