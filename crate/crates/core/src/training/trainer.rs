use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LossKind, ModelKind, TrainConfig};
use crate::dataset::{
    chronological_split, slice_plan_windows, FlowGrid, NormStats, SlidingWindowDataset,
    SplitDataset,
};
use crate::error::{Error, Result};
use crate::evaluation::Predictions;
use crate::model::{
    Batch, Checkpoint, DcrnnModel, GruSeq2Seq, ModelConfig, RecurrentModel, SamplingSchedule,
    Seq2SeqModel,
};
use crate::numerics::{clip_global_norm, AdamConfig, OptimizerState, Tape, Tensor, Var};
use crate::signal_graph::{DetectorGraph, SignalTimingPlan};

/// Pairs scored per inference batch.
const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub lr: f64,
    /// Ground-truth probability at the first iteration of the epoch.
    pub sampling_probability: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    /// Equality of every column except wall time.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.best_epoch == other.best_epoch
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.validation_loss.to_bits() == b.validation_loss.to_bits()
                    && a.lr.to_bits() == b.lr.to_bits()
                    && a.sampling_probability.to_bits() == b.sampling_probability.to_bits()
            })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut w =
            csv::Writer::from_path(path).map_err(|e| crate::dataset::csv_open_error(path, e))?;
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| crate::dataset::csv_open_error(path, e))?;
        let mut epochs = Vec::new();
        for (i, rec) in reader.deserialize::<EpochRecord>().enumerate() {
            epochs.push(rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: e.to_string(),
            })?);
        }
        let best_epoch = epochs
            .iter()
            .min_by(|a, b| a.validation_loss.total_cmp(&b.validation_loss))
            .map(|r| r.epoch);
        Ok(Self { epochs, best_epoch })
    }
}

/// Raw and normalized splits of one plan's pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub raw: SplitDataset,
    pub stats: NormStats,
    pub normalized: SplitDataset,
}

impl PreparedData {
    /// Normalizes `raw` with statistics of its training split.
    pub fn new(raw: SplitDataset) -> Result<Self> {
        let stats = raw.stats()?;
        Self::with_stats(raw, stats)
    }

    pub fn with_stats(raw: SplitDataset, stats: NormStats) -> Result<Self> {
        let normalized = SplitDataset {
            train: raw.train.normalize(&stats),
            validation: raw.validation.normalize(&stats),
            test: raw.test.normalize(&stats),
        };
        Ok(Self {
            raw,
            stats,
            normalized,
        })
    }
}

/// Slices `plan`'s pairs from `grid` with a start buffer of one window and
/// splits them chronologically.
pub fn prepare_data(
    grid: &FlowGrid,
    plan: &SignalTimingPlan,
    config: &TrainConfig,
) -> Result<PreparedData> {
    let ds = slice_plan_windows(grid, plan, config.window, config.horizon, config.window)?;
    PreparedData::new(chronological_split(&ds, config.split)?)
}

pub fn model_config(config: &TrainConfig, detectors: usize) -> ModelConfig {
    ModelConfig {
        window: config.window,
        horizon: config.horizon,
        detectors,
        features: config.features(),
        hidden: config.hidden,
        k: config.k,
    }
}

/// Fresh model of the configured kind, initialized from the config seed.
pub fn build_model(config: &TrainConfig, graph: &DetectorGraph) -> Result<RecurrentModel> {
    let mc = model_config(config, graph.len());
    Ok(match config.model {
        ModelKind::Dcrnn => RecurrentModel::Dcrnn(DcrnnModel::new(mc, graph, config.seed)?),
        ModelKind::Gru => RecurrentModel::Gru(GruSeq2Seq::new(mc, config.seed)?),
    })
}

fn loss_var(tape: &mut Tape, outputs: &[Var], targets: &[Var], kind: LossKind) -> Result<Var> {
    let mut total: Option<Var> = None;
    let mut count = 0;
    for (&y, &t) in outputs.iter().zip(targets) {
        count += tape.value(y).len();
        let e = tape.sub(y, t)?;
        let per = match kind {
            LossKind::Mae => tape.abs(e),
            LossKind::Mse => tape.mul(e, e)?,
        };
        let s = tape.sum(per);
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let total = total.ok_or_else(|| Error::Config("no decoder outputs".into()))?;
    tape.affine(total, 1.0 / count as f64, 0.0)
}

/// Loss over a whole normalized split in inference mode.
pub fn evaluate_loss<M: Seq2SeqModel + ?Sized>(
    model: &M,
    ds: &SlidingWindowDataset,
    kind: LossKind,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let batch = Batch::from_dataset(ds, chunk);
        let pred = model.forecast(&batch)?;
        let target = batch
            .targets
            .as_ref()
            .expect("dataset batches carry targets");
        for (p, t) in pred.iter().zip(target) {
            let e = p - t;
            sum += match kind {
                LossKind::Mae => e.abs(),
                LossKind::Mse => e * e,
            };
        }
        count += pred.len();
    }
    if count == 0 {
        return Err(Error::EmptyMetric);
    }
    Ok(sum / count as f64)
}

/// Trains `model` on the normalized training split, keeping the parameters
/// of the epoch with the lowest validation loss.
pub fn train(
    model: &mut RecurrentModel,
    data: &SplitDataset,
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    let train = &data.train;
    if !train.normalized {
        return Err(Error::Config("training data must be normalized".into()));
    }
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training split".into()));
    }
    let mc = model.config();
    if mc.detectors != train.num_detectors()
        || mc.window != train.window
        || mc.horizon != train.horizon
        || mc.features != train.features
    {
        return Err(Error::Config(format!(
            "model expects S={} H={} D={} F={}, data has S={} H={} D={} F={}",
            mc.window,
            mc.horizon,
            mc.detectors,
            mc.features,
            train.window,
            train.horizon,
            train.num_detectors(),
            train.features
        )));
    }
    let mut log = TrainLog::default();
    if config.epochs == 0 {
        return Ok(log);
    }
    let names = model.parameter_names();
    let mut params: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
    let mut opt = OptimizerState::new(
        &params,
        config.lr.lr(0),
        AdamConfig {
            eps: config.adam_epsilon,
            ..AdamConfig::default()
        },
    )?;
    let per_epoch = train.len().div_ceil(config.batch_size);
    let mut schedule = match config.sampling_tau {
        Some(t) => SamplingSchedule::new(t)?,
        None => SamplingSchedule::centered_at((per_epoch * config.epochs / 2) as u64)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let validation = if data.validation.is_empty() {
        train
    } else {
        &data.validation
    };
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let start = Instant::now();
    for epoch in 0..config.epochs {
        let lr = config.lr.lr(epoch);
        opt.set_lr(lr)?;
        let p_epoch = schedule.probability();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let p = schedule.probability();
            let teacher: Vec<bool> = (0..config.horizon)
                .map(|h| h > 0 && rng.gen::<f64>() < p)
                .collect();
            let batch = Batch::from_dataset(train, chunk);
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
            let fwd = model.forward(&mut tape, &vars, &batch, Some(&teacher))?;
            let targets = fwd
                .targets
                .as_ref()
                .expect("training batches carry targets");
            let loss = loss_var(&mut tape, &fwd.outputs, targets, config.loss)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch: bi,
                    lr,
                });
            }
            let grads = tape.backward(loss)?;
            let mut g: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
            if config.clip_norm > 0.0 {
                clip_global_norm(&mut g, config.clip_norm);
            }
            opt.adam_step(&mut params, &g, &names)?;
            write_back(model, &params);
            loss_sum += value * chunk.len() as f64;
            schedule.advance();
        }
        let train_loss = loss_sum / train.len() as f64;
        let validation_loss = evaluate_loss(model, validation, config.loss)?;
        if best.as_ref().is_none_or(|(b, _)| validation_loss < *b) {
            best = Some((validation_loss, params.clone()));
            log.best_epoch = Some(epoch);
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
            lr,
            sampling_probability: p_epoch,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    if let Some((_, p)) = best {
        write_back(model, &p);
    }
    Ok(log)
}

fn write_back(model: &mut RecurrentModel, params: &[Tensor]) {
    for (dst, src) in model.parameters_mut().into_iter().zip(params) {
        dst.data_mut().copy_from_slice(src.data());
    }
}

/// Raw-unit, zero-clipped forecasts of a checkpoint for every pair of a raw
/// dataset.
pub fn predict(checkpoint: &Checkpoint, ds: &SlidingWindowDataset) -> Result<Predictions> {
    if ds.normalized {
        return Err(Error::Config("predict expects raw data".into()));
    }
    if ds.detectors != checkpoint.detectors {
        return Err(Error::Config(format!(
            "dataset detectors {:?} differ from checkpoint detectors {:?}",
            ds.detectors, checkpoint.detectors
        )));
    }
    let norm = ds.normalize(&checkpoint.stats);
    let model = checkpoint.model();
    let mut values = Vec::with_capacity(ds.len() * ds.horizon * ds.num_detectors());
    let idx: Vec<usize> = (0..norm.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let batch = Batch::from_dataset(&norm, chunk).without_targets();
        values.extend(model.predict(&batch, &checkpoint.stats)?);
    }
    Predictions::new(checkpoint.model.name(), ds, values)
}
