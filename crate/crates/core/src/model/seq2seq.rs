use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cell::{gru_step, CellVars, DcgruCell, DenseGruCell, Mixing};
use crate::dataset::{NormStats, SlidingWindowDataset};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::signal_graph::{diffusion_supports, DetectorGraph};

/// Stacked cells in the encoder and in the decoder.
pub const LAYERS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input steps `S`.
    pub window: usize,
    /// Forecast steps `H`.
    pub horizon: usize,
    pub detectors: usize,
    /// Input channels per detector; channel 0 is flow.
    pub features: usize,
    /// Hidden units per detector.
    pub hidden: usize,
    /// Diffusion steps; ignored by the dense GRU.
    pub k: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.horizon == 0 || self.detectors == 0 {
            return Err(Error::Config(
                "window, horizon and detectors must be positive".into(),
            ));
        }
        if self.features == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "features and hidden size must be positive".into(),
            ));
        }
        if !(1..=4).contains(&self.k) {
            return Err(Error::Config(format!(
                "K must lie in 1..=4, got {}",
                self.k
            )));
        }
        Ok(())
    }
}

/// A batch of samples in normalized units. Inputs are `B × S × D × F`,
/// targets `B × H × D`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub inputs: Vec<f64>,
    pub targets: Option<Vec<f64>>,
}

impl Batch {
    pub fn from_dataset(ds: &SlidingWindowDataset, idx: &[usize]) -> Self {
        Self {
            size: idx.len(),
            inputs: idx
                .iter()
                .flat_map(|&i| ds.samples[i].inputs.iter().copied())
                .collect(),
            targets: Some(
                idx.iter()
                    .flat_map(|&i| ds.samples[i].targets.iter().copied())
                    .collect(),
            ),
        }
    }

    pub fn without_targets(mut self) -> Self {
        self.targets = None;
        self
    }
}

/// Decoder outputs and the matching targets, one tape value per horizon
/// step, in the model's internal row layout.
#[derive(Clone, Debug)]
pub struct Forward {
    pub outputs: Vec<Var>,
    pub targets: Option<Vec<Var>>,
}

/// Row layout of per-step tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layout {
    /// `(D·B) × C`, row `d·B + b`.
    NodeMajor,
    /// `B × (D·C)`.
    Flat,
}

impl Layout {
    /// Step `t` of a `B × T × D × C` buffer.
    fn step(self, data: &[f64], b: usize, t_len: usize, d: usize, c: usize, t: usize) -> Tensor {
        let mut out = vec![0.0; b * d * c];
        for bi in 0..b {
            let src = &data[((bi * t_len + t) * d) * c..((bi * t_len + t + 1) * d) * c];
            match self {
                Layout::Flat => out[bi * d * c..(bi + 1) * d * c].copy_from_slice(src),
                Layout::NodeMajor => {
                    for di in 0..d {
                        let row = di * b + bi;
                        out[row * c..(row + 1) * c].copy_from_slice(&src[di * c..(di + 1) * c]);
                    }
                }
            }
        }
        match self {
            Layout::Flat => Tensor::matrix(b, d * c, out),
            Layout::NodeMajor => Tensor::matrix(d * b, c, out),
        }
        .expect("sized above")
    }

    /// Gathers `H` single-channel step tensors back into `B × H × D`.
    fn gather(self, steps: &[&Tensor], b: usize, d: usize) -> Vec<f64> {
        let h = steps.len();
        let mut out = vec![0.0; b * h * d];
        for (t, s) in steps.iter().enumerate() {
            let v = s.data();
            for bi in 0..b {
                for di in 0..d {
                    out[(bi * h + t) * d + di] = match self {
                        Layout::Flat => v[bi * d + di],
                        Layout::NodeMajor => v[di * b + bi],
                    };
                }
            }
        }
        out
    }
}

/// Tape values of a whole stack.
struct Bound {
    encoder: Vec<CellVars>,
    decoder: Vec<CellVars>,
    projection: Var,
    projection_bias: Var,
}

#[allow(clippy::too_many_arguments)]
fn run(
    tape: &mut Tape,
    bound: &Bound,
    mixing: Mixing<'_>,
    layout: Layout,
    cfg: &ModelConfig,
    state_cols: usize,
    out_cols: usize,
    batch: &Batch,
    teacher: Option<&[bool]>,
) -> Result<Forward> {
    let (b, d, f) = (batch.size, cfg.detectors, cfg.features);
    if b == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    if batch.inputs.len() != b * cfg.window * d * f {
        return Err(Error::shape(
            "batch inputs",
            &[batch.inputs.len()],
            &[b, cfg.window, d, f],
        ));
    }
    if teacher.is_some() && batch.targets.is_none() {
        return Err(Error::MissingTargets);
    }
    let targets = match &batch.targets {
        Some(t) => {
            if t.len() != b * cfg.horizon * d {
                return Err(Error::shape(
                    "batch targets",
                    &[t.len()],
                    &[b, cfg.horizon, d],
                ));
            }
            Some(
                (0..cfg.horizon)
                    .map(|h| tape.constant(layout.step(t, b, cfg.horizon, d, 1, h)))
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };
    let rows = match layout {
        Layout::NodeMajor => d * b,
        Layout::Flat => b,
    };
    let mut states: Vec<Var> = (0..LAYERS)
        .map(|_| tape.constant(Tensor::zeros(&[rows, state_cols])))
        .collect();
    for s in 0..cfg.window {
        let mut x = tape.constant(layout.step(&batch.inputs, b, cfg.window, d, f, s));
        for (l, cell) in bound.encoder.iter().enumerate() {
            states[l] = gru_step(tape, cell, mixing, x, states[l])?;
            x = states[l];
        }
    }
    let go = tape.constant(Tensor::zeros(&[rows, out_cols]));
    let mut prev = go;
    let mut outputs = Vec::with_capacity(cfg.horizon);
    for h in 0..cfg.horizon {
        let mut x = if h == 0 {
            go
        } else {
            match (teacher, &targets) {
                (Some(flags), Some(t)) if flags.get(h).copied().unwrap_or(false) => t[h - 1],
                _ => prev,
            }
        };
        for (l, cell) in bound.decoder.iter().enumerate() {
            states[l] = gru_step(tape, cell, mixing, x, states[l])?;
            x = states[l];
        }
        let y = tape.matmul(x, bound.projection)?;
        let y = tape.add(y, bound.projection_bias)?;
        outputs.push(y);
        prev = y;
    }
    Ok(Forward { outputs, targets })
}

/// Common surface of the recurrent forecasters.
pub trait Seq2SeqModel {
    fn config(&self) -> &ModelConfig;
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;
    fn parameter_names(&self) -> Vec<String>;

    /// Forward pass with parameters already placed on the tape in
    /// [`Seq2SeqModel::parameters`] order. `teacher[h]` selects the ground
    /// truth of step `h − 1` as decoder input for step `h ≥ 1`; `None` is
    /// inference mode.
    fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        batch: &Batch,
        teacher: Option<&[bool]>,
    ) -> Result<Forward>;

    /// Decoder outputs as `B × H × D`.
    fn gather(&self, tape: &Tape, outputs: &[Var], batch_size: usize) -> Vec<f64>;

    fn bind_parameters(&self, tape: &mut Tape) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|p| tape.param(p.clone()))
            .collect()
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Normalized `B × H × D` forecast in inference mode.
    fn forecast(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::no_grad();
        let params = self.bind_parameters(&mut tape);
        let fwd = self.forward(&mut tape, &params, batch, None)?;
        Ok(self.gather(&tape, &fwd.outputs, batch.size))
    }

    /// Raw-unit `B × H × D` forecast clipped at zero.
    fn predict(&self, batch: &Batch, stats: &NormStats) -> Result<Vec<f64>> {
        let mut out = self.forecast(batch)?;
        stats.denormalize_targets(&mut out);
        out.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(out)
    }
}

fn split_params<'a>(params: &'a [Var], sizes: &[usize]) -> Vec<&'a [Var]> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &n in sizes {
        out.push(&params[at..at + n]);
        at += n;
    }
    out
}

/// Encoder–decoder of DCGRU cells over the detector graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcrnnModel {
    pub config: ModelConfig,
    pub encoder: Vec<DcgruCell>,
    pub decoder: Vec<DcgruCell>,
    /// `hidden × 1`, shared by all detectors.
    pub projection: Tensor,
    /// `1 × 1`.
    pub projection_bias: Tensor,
    /// Fingerprint of the graph the supports come from.
    pub graph_fingerprint: String,
    #[serde(skip)]
    supports: Vec<Arc<Tensor>>,
}

impl DcrnnModel {
    pub fn new(config: ModelConfig, graph: &DetectorGraph, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, h, k) = (config.features, config.hidden, config.k);
        let encoder = (0..LAYERS)
            .map(|l| DcgruCell::new(if l == 0 { f } else { h }, h, k, &mut rng))
            .collect();
        let decoder = (0..LAYERS)
            .map(|l| DcgruCell::new(if l == 0 { 1 } else { h }, h, k, &mut rng))
            .collect();
        let limit = (6.0 / (h + 1) as f64).sqrt();
        let projection = Tensor::from_fn(h, 1, |_, _| {
            use rand::Rng;
            rng.gen_range(-limit..limit)
        });
        let mut m = Self {
            config,
            encoder,
            decoder,
            projection,
            projection_bias: Tensor::zeros(&[1, 1]),
            graph_fingerprint: String::new(),
            supports: Vec::new(),
        };
        m.attach_graph(graph, true)?;
        Ok(m)
    }

    /// Builds the diffusion supports from `graph`. Unless `adopt` is set the
    /// graph fingerprint must equal the one recorded in the model.
    pub fn attach_graph(&mut self, graph: &DetectorGraph, adopt: bool) -> Result<()> {
        if graph.len() != self.config.detectors {
            return Err(Error::shape(
                "graph",
                &[graph.len()],
                &[self.config.detectors],
            ));
        }
        let fp = graph.fingerprint();
        if !adopt && fp != self.graph_fingerprint {
            return Err(Error::Fingerprint {
                expected: self.graph_fingerprint.clone(),
                found: fp,
            });
        }
        self.supports = diffusion_supports(graph, self.config.k)?;
        self.graph_fingerprint = fp;
        Ok(())
    }

    pub fn supports(&self) -> &[Arc<Tensor>] {
        &self.supports
    }

    fn cell_sizes(&self) -> Vec<usize> {
        let mut s = vec![6; 2 * LAYERS];
        s.extend([1, 1]);
        s
    }
}

impl Seq2SeqModel for DcrnnModel {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn parameters(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for c in self.encoder.iter().chain(&self.decoder) {
            out.extend(c.parameters());
        }
        out.push(&self.projection);
        out.push(&self.projection_bias);
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for c in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.extend(c.parameters_mut());
        }
        out.push(&mut self.projection);
        out.push(&mut self.projection_bias);
        out
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in 0..LAYERS {
            out.extend(DcgruCell::parameter_names(&format!("encoder.{l}")));
        }
        for l in 0..LAYERS {
            out.extend(DcgruCell::parameter_names(&format!("decoder.{l}")));
        }
        out.push("projection.weight".into());
        out.push("projection.bias".into());
        out
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        batch: &Batch,
        teacher: Option<&[bool]>,
    ) -> Result<Forward> {
        if self.supports.is_empty() {
            return Err(Error::Config(
                "model has no diffusion supports attached".into(),
            ));
        }
        let parts = split_params(params, &self.cell_sizes());
        let cells: Vec<&DcgruCell> = self.encoder.iter().chain(&self.decoder).collect();
        let mut bound_cells = Vec::with_capacity(cells.len());
        for (c, p) in cells.iter().zip(&parts) {
            bound_cells.push(c.bind(tape, p)?);
        }
        let decoder = bound_cells.split_off(LAYERS);
        let bound = Bound {
            encoder: bound_cells,
            decoder,
            projection: parts[2 * LAYERS][0],
            projection_bias: parts[2 * LAYERS + 1][0],
        };
        let mixing = Mixing::Diffusion {
            supports: &self.supports,
            k: self.config.k,
        };
        run(
            tape,
            &bound,
            mixing,
            Layout::NodeMajor,
            &self.config,
            self.config.hidden,
            1,
            batch,
            teacher,
        )
    }

    fn gather(&self, tape: &Tape, outputs: &[Var], batch_size: usize) -> Vec<f64> {
        let steps: Vec<&Tensor> = outputs.iter().map(|&v| tape.value(v)).collect();
        Layout::NodeMajor.gather(&steps, batch_size, self.config.detectors)
    }
}

/// Encoder–decoder of dense GRU cells over all detectors jointly. The state
/// holds `D · hidden` units so its size matches the DCRNN state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruSeq2Seq {
    pub config: ModelConfig,
    pub encoder: Vec<DenseGruCell>,
    pub decoder: Vec<DenseGruCell>,
    /// `(D·hidden) × D`.
    pub projection: Tensor,
    /// `1 × D`.
    pub projection_bias: Tensor,
}

impl GruSeq2Seq {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.detectors;
        let (x, h) = (d * config.features, d * config.hidden);
        let encoder = (0..LAYERS)
            .map(|l| DenseGruCell::new(if l == 0 { x } else { h }, h, &mut rng))
            .collect();
        let decoder = (0..LAYERS)
            .map(|l| DenseGruCell::new(if l == 0 { d } else { h }, h, &mut rng))
            .collect();
        let limit = (6.0 / (h + d) as f64).sqrt();
        let projection = Tensor::from_fn(h, d, |_, _| {
            use rand::Rng;
            rng.gen_range(-limit..limit)
        });
        Ok(Self {
            config,
            encoder,
            decoder,
            projection,
            projection_bias: Tensor::zeros(&[1, d]),
        })
    }

    /// The dense model computing exactly what a `K = 1` DCRNN computes:
    /// every dense weight is block diagonal over detectors with the
    /// DCRNN's `θ₀₀ + θ₀₁` in each block.
    pub fn from_dcrnn_k1(m: &DcrnnModel) -> Result<Self> {
        if m.config.k != 1 {
            return Err(Error::Config(format!(
                "parameter mapping needs K = 1, model has K = {}",
                m.config.k
            )));
        }
        let d = m.config.detectors;
        let map_cell = |c: &DcgruCell| -> DenseGruCell {
            let (fi, h) = (c.input_dim, c.hidden);
            let block = |f: &super::DiffusionFilter| -> (Tensor, Tensor) {
                let mut w = Tensor::zeros(&[d * (fi + h), d * h]);
                for n in 0..d {
                    for j in 0..h {
                        let col = n * h + j;
                        for a in 0..fi {
                            let v = f.theta_at(0, 0, a, j) + f.theta_at(0, 1, a, j);
                            w.set(n * fi + a, col, v);
                        }
                        for a in 0..h {
                            let v = f.theta_at(0, 0, fi + a, j) + f.theta_at(0, 1, fi + a, j);
                            w.set(d * fi + n * h + a, col, v);
                        }
                    }
                }
                let b = Tensor::from_fn(1, d * h, |_, col| f.bias.data()[col % h]);
                (w, b)
            };
            let (w_reset, b_reset) = block(&c.reset);
            let (w_update, b_update) = block(&c.update);
            let (w_candidate, b_candidate) = block(&c.candidate);
            DenseGruCell {
                input_dim: d * fi,
                hidden: d * h,
                w_reset,
                w_update,
                w_candidate,
                b_reset,
                b_update,
                b_candidate,
            }
        };
        let h = m.config.hidden;
        let projection = Tensor::from_fn(d * h, d, |row, col| {
            if row / h == col {
                m.projection.data()[row % h]
            } else {
                0.0
            }
        });
        Ok(Self {
            config: m.config.clone(),
            encoder: m.encoder.iter().map(map_cell).collect(),
            decoder: m.decoder.iter().map(map_cell).collect(),
            projection,
            projection_bias: Tensor::filled(&[1, d], m.projection_bias.item()),
        })
    }
}

impl Seq2SeqModel for GruSeq2Seq {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn parameters(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for c in self.encoder.iter().chain(&self.decoder) {
            out.extend(c.parameters());
        }
        out.push(&self.projection);
        out.push(&self.projection_bias);
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for c in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.extend(c.parameters_mut());
        }
        out.push(&mut self.projection);
        out.push(&mut self.projection_bias);
        out
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in 0..LAYERS {
            out.extend(DenseGruCell::parameter_names(&format!("encoder.{l}")));
        }
        for l in 0..LAYERS {
            out.extend(DenseGruCell::parameter_names(&format!("decoder.{l}")));
        }
        out.push("projection.weight".into());
        out.push("projection.bias".into());
        out
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        batch: &Batch,
        teacher: Option<&[bool]>,
    ) -> Result<Forward> {
        let mut sizes = vec![6; 2 * LAYERS];
        sizes.extend([1, 1]);
        let parts = split_params(params, &sizes);
        let cells: Vec<&DenseGruCell> = self.encoder.iter().chain(&self.decoder).collect();
        let mut bound_cells = Vec::with_capacity(cells.len());
        for (c, p) in cells.iter().zip(&parts) {
            bound_cells.push(c.bind(tape, p)?);
        }
        let decoder = bound_cells.split_off(LAYERS);
        let bound = Bound {
            encoder: bound_cells,
            decoder,
            projection: parts[2 * LAYERS][0],
            projection_bias: parts[2 * LAYERS + 1][0],
        };
        let d = self.config.detectors;
        run(
            tape,
            &bound,
            Mixing::Dense,
            Layout::Flat,
            &self.config,
            d * self.config.hidden,
            d,
            batch,
            teacher,
        )
    }

    fn gather(&self, tape: &Tape, outputs: &[Var], batch_size: usize) -> Vec<f64> {
        let steps: Vec<&Tensor> = outputs.iter().map(|&v| tape.value(v)).collect();
        Layout::Flat.gather(&steps, batch_size, self.config.detectors)
    }
}

/// Either recurrent forecaster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecurrentModel {
    Dcrnn(DcrnnModel),
    Gru(GruSeq2Seq),
}

impl RecurrentModel {
    pub fn name(&self) -> &'static str {
        match self {
            RecurrentModel::Dcrnn(_) => "DCRNN",
            RecurrentModel::Gru(_) => "GRU",
        }
    }

    fn inner(&self) -> &dyn Seq2SeqModel {
        match self {
            RecurrentModel::Dcrnn(m) => m,
            RecurrentModel::Gru(m) => m,
        }
    }
}

impl Seq2SeqModel for RecurrentModel {
    fn config(&self) -> &ModelConfig {
        self.inner().config()
    }

    fn parameters(&self) -> Vec<&Tensor> {
        self.inner().parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            RecurrentModel::Dcrnn(m) => m.parameters_mut(),
            RecurrentModel::Gru(m) => m.parameters_mut(),
        }
    }

    fn parameter_names(&self) -> Vec<String> {
        self.inner().parameter_names()
    }

    fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        batch: &Batch,
        teacher: Option<&[bool]>,
    ) -> Result<Forward> {
        self.inner().forward(tape, params, batch, teacher)
    }

    fn gather(&self, tape: &Tape, outputs: &[Var], batch_size: usize) -> Vec<f64> {
        self.inner().gather(tape, outputs, batch_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn graph(n: usize, seed: u64) -> DetectorGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else if rng.gen_bool(0.5) {
                rng.gen_range(0.1..1.0)
            } else {
                0.0
            }
        });
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        DetectorGraph::from_ids(&ids, w).unwrap()
    }

    fn config(k: usize) -> ModelConfig {
        ModelConfig {
            window: 3,
            horizon: 2,
            detectors: 4,
            features: 2,
            hidden: 3,
            k,
        }
    }

    fn batch(cfg: &ModelConfig, b: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_in = b * cfg.window * cfg.detectors * cfg.features;
        let n_out = b * cfg.horizon * cfg.detectors;
        Batch {
            size: b,
            inputs: (0..n_in).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            targets: Some((0..n_out).map(|_| rng.gen_range(-2.0..2.0)).collect()),
        }
    }

    fn run_forward<M: Seq2SeqModel>(m: &M, b: &Batch, teacher: Option<&[bool]>) -> Forward2 {
        let mut tape = Tape::no_grad();
        let p = m.bind_parameters(&mut tape);
        let f = m.forward(&mut tape, &p, b, teacher).unwrap();
        let out = m.gather(&tape, &f.outputs, b.size);
        let inputs: Vec<Tensor> = f.outputs.iter().map(|&v| tape.value(v).clone()).collect();
        Forward2 { out, steps: inputs }
    }

    struct Forward2 {
        out: Vec<f64>,
        steps: Vec<Tensor>,
    }

    #[test]
    fn shapes_and_names_agree() {
        let m = DcrnnModel::new(config(2), &graph(4, 1), 3).unwrap();
        assert_eq!(m.parameters().len(), m.parameter_names().len());
        let g = GruSeq2Seq::new(config(2), 3).unwrap();
        assert_eq!(g.parameters().len(), g.parameter_names().len());
        let b = batch(&config(2), 5, 9);
        assert_eq!(run_forward(&m, &b, None).out.len(), 5 * 2 * 4);
        assert_eq!(run_forward(&g, &b, None).out.len(), 5 * 2 * 4);
    }

    #[test]
    fn k1_dense_mapping_matches() {
        let m = DcrnnModel::new(config(1), &graph(4, 2), 5).unwrap();
        let g = GruSeq2Seq::from_dcrnn_k1(&m).unwrap();
        let b = batch(&config(1), 3, 4);
        let a = run_forward(&m, &b, None).out;
        let c = run_forward(&g, &b, None).out;
        let err = a
            .iter()
            .zip(&c)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn never_teacher_equals_inference_bitwise() {
        let m = DcrnnModel::new(config(2), &graph(4, 3), 6).unwrap();
        let b = batch(&config(2), 2, 1);
        let off = [false, false];
        assert_eq!(
            run_forward(&m, &b, Some(&off)).out,
            run_forward(&m, &b, None).out
        );
    }

    #[test]
    fn teacher_forcing_feeds_previous_target() {
        let m = DcrnnModel::new(config(2), &graph(4, 3), 6).unwrap();
        let b = batch(&config(2), 2, 1);
        let mut changed = b.clone();
        // the last target step is never fed back
        let t = changed.targets.as_mut().unwrap();
        for bi in 0..2 {
            for d in 0..4 {
                t[(bi * 2 + 1) * 4 + d] += 1.0;
            }
        }
        let on = [false, true];
        assert_eq!(
            run_forward(&m, &b, Some(&on)).out,
            run_forward(&m, &changed, Some(&on)).out
        );
        let t = changed.targets.as_mut().unwrap();
        t[0] += 1.0;
        let a = run_forward(&m, &b, Some(&on));
        let c = run_forward(&m, &changed, Some(&on));
        assert_eq!(a.steps[0], c.steps[0]);
        assert_ne!(a.steps[1], c.steps[1]);
    }

    #[test]
    fn training_mode_requires_targets() {
        let m = DcrnnModel::new(config(2), &graph(4, 3), 6).unwrap();
        let b = batch(&config(2), 2, 1).without_targets();
        let mut tape = Tape::new();
        let p = m.bind_parameters(&mut tape);
        assert!(matches!(
            m.forward(&mut tape, &p, &b, Some(&[false, true])),
            Err(Error::MissingTargets)
        ));
    }

    #[test]
    fn fingerprint_guard() {
        let mut m = DcrnnModel::new(config(2), &graph(4, 3), 6).unwrap();
        assert!(matches!(
            m.attach_graph(&graph(4, 4), false),
            Err(Error::Fingerprint { .. })
        ));
        m.attach_graph(&graph(4, 3), false).unwrap();
    }

    #[test]
    fn predictions_are_clipped() {
        let m = DcrnnModel::new(config(2), &graph(4, 3), 6).unwrap();
        let b = batch(&config(2), 4, 1);
        let stats = NormStats {
            detectors: 4,
            features: 2,
            mean: vec![-1000.0; 8],
            std: vec![1.0; 8],
        };
        let p = m.predict(&b, &stats).unwrap();
        assert!(p.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        use crate::numerics::check_gradients;
        let cfg = ModelConfig {
            window: 2,
            horizon: 2,
            detectors: 3,
            features: 1,
            hidden: 4,
            k: 2,
        };
        let m = DcrnnModel::new(cfg.clone(), &graph(3, 7), 1).unwrap();
        let b = batch(&cfg, 2, 3);
        let params: Vec<Tensor> = m.parameters().into_iter().cloned().collect();
        let report = check_gradients(&params, 1e-4, |tape, vars| {
            let f = m.forward(tape, vars, &b, Some(&[false, true]))?;
            let t = f.targets.unwrap();
            let mut total = None;
            for (y, t) in f.outputs.iter().zip(&t) {
                let e = tape.sub(*y, *t)?;
                let sq = tape.mul(e, e)?;
                let s = tape.sum(sq);
                total = Some(match total {
                    None => s,
                    Some(acc) => tape.add(acc, s)?,
                });
            }
            Ok(total.unwrap())
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}
