use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{diffusion_features, effective_weight, DiffusionFilter};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Gate bias at initialization; keeps early hidden states close to the
/// previous state.
pub const GATE_BIAS_INIT: f64 = 1.0;

/// GRU cell whose linear maps are diffusion convolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcgruCell {
    pub input_dim: usize,
    pub hidden: usize,
    pub reset: DiffusionFilter,
    pub update: DiffusionFilter,
    pub candidate: DiffusionFilter,
}

impl DcgruCell {
    pub fn new(input_dim: usize, hidden: usize, k: usize, rng: &mut impl Rng) -> Self {
        let f = input_dim + hidden;
        Self {
            input_dim,
            hidden,
            reset: DiffusionFilter::glorot(k, f, hidden, GATE_BIAS_INIT, rng),
            update: DiffusionFilter::glorot(k, f, hidden, GATE_BIAS_INIT, rng),
            candidate: DiffusionFilter::glorot(k, f, hidden, 0.0, rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize, k: usize) -> Self {
        let f = input_dim + hidden;
        Self {
            input_dim,
            hidden,
            reset: DiffusionFilter::zeros(k, f, hidden),
            update: DiffusionFilter::zeros(k, f, hidden),
            candidate: DiffusionFilter::zeros(k, f, hidden),
        }
    }

    pub fn k(&self) -> usize {
        self.reset.k
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        [&self.reset, &self.update, &self.candidate]
            .into_iter()
            .flat_map(|f| [&f.theta, &f.bias])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        [&mut self.reset, &mut self.update, &mut self.candidate]
            .into_iter()
            .flat_map(|f| [&mut f.theta, &mut f.bias])
            .collect()
    }

    pub fn parameter_names(prefix: &str) -> Vec<String> {
        ["reset", "update", "candidate"]
            .iter()
            .flat_map(|g| [format!("{prefix}.{g}.theta"), format!("{prefix}.{g}.bias")])
            .collect()
    }

    /// Stacked gate weights from this cell's six parameter handles.
    pub(crate) fn bind(&self, tape: &mut Tape, vars: &[Var]) -> Result<CellVars> {
        let k = self.k();
        let wr = effective_weight(tape, vars[0], k)?;
        let wu = effective_weight(tape, vars[2], k)?;
        let wc = effective_weight(tape, vars[4], k)?;
        Ok(CellVars {
            w_gates: tape.concat_cols(&[wr, wu])?,
            b_gates: tape.concat_cols(&[vars[1], vars[3]])?,
            w_cand: wc,
            b_cand: vars[5],
            hidden: self.hidden,
        })
    }
}

/// GRU cell with dense linear maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseGruCell {
    pub input_dim: usize,
    pub hidden: usize,
    /// Each `(input_dim + hidden) × hidden`.
    pub w_reset: Tensor,
    pub w_update: Tensor,
    pub w_candidate: Tensor,
    /// Each `1 × hidden`.
    pub b_reset: Tensor,
    pub b_update: Tensor,
    pub b_candidate: Tensor,
}

impl DenseGruCell {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let f = input_dim + hidden;
        let limit = (6.0 / (f + hidden) as f64).sqrt();
        let mut w = || Tensor::from_fn(f, hidden, |_, _| rng.gen_range(-limit..limit));
        let (w_reset, w_update, w_candidate) = (w(), w(), w());
        Self {
            input_dim,
            hidden,
            w_reset,
            w_update,
            w_candidate,
            b_reset: Tensor::filled(&[1, hidden], GATE_BIAS_INIT),
            b_update: Tensor::filled(&[1, hidden], GATE_BIAS_INIT),
            b_candidate: Tensor::zeros(&[1, hidden]),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let f = input_dim + hidden;
        Self {
            input_dim,
            hidden,
            w_reset: Tensor::zeros(&[f, hidden]),
            w_update: Tensor::zeros(&[f, hidden]),
            w_candidate: Tensor::zeros(&[f, hidden]),
            b_reset: Tensor::zeros(&[1, hidden]),
            b_update: Tensor::zeros(&[1, hidden]),
            b_candidate: Tensor::zeros(&[1, hidden]),
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        vec![
            &self.w_reset,
            &self.b_reset,
            &self.w_update,
            &self.b_update,
            &self.w_candidate,
            &self.b_candidate,
        ]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_reset,
            &mut self.b_reset,
            &mut self.w_update,
            &mut self.b_update,
            &mut self.w_candidate,
            &mut self.b_candidate,
        ]
    }

    pub fn parameter_names(prefix: &str) -> Vec<String> {
        ["reset", "update", "candidate"]
            .iter()
            .flat_map(|g| [format!("{prefix}.{g}.weight"), format!("{prefix}.{g}.bias")])
            .collect()
    }

    pub(crate) fn bind(&self, tape: &mut Tape, vars: &[Var]) -> Result<CellVars> {
        Ok(CellVars {
            w_gates: tape.concat_cols(&[vars[0], vars[2]])?,
            b_gates: tape.concat_cols(&[vars[1], vars[3]])?,
            w_cand: vars[4],
            b_cand: vars[5],
            hidden: self.hidden,
        })
    }
}

/// Gate weights of one cell as tape values.
#[derive(Clone, Copy, Debug)]
pub(crate) struct CellVars {
    w_gates: Var,
    b_gates: Var,
    w_cand: Var,
    b_cand: Var,
    hidden: usize,
}

/// How a cell mixes its input rows before the gate weights.
#[derive(Clone, Copy)]
pub(crate) enum Mixing<'a> {
    Diffusion {
        supports: &'a [Arc<Tensor>],
        k: usize,
    },
    Dense,
}

impl Mixing<'_> {
    fn features(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match *self {
            Mixing::Diffusion { supports, k } => diffusion_features(tape, supports, k, x),
            Mixing::Dense => Ok(x),
        }
    }
}

/// `r = σ(conv_r([x ‖ h]))`, `u = σ(conv_u([x ‖ h]))`,
/// `c = tanh(conv_c([x ‖ r⊙h]))`, `h' = u⊙h + (1−u)⊙c`.
pub(crate) fn gru_step(
    tape: &mut Tape,
    cell: &CellVars,
    mixing: Mixing<'_>,
    x: Var,
    h: Var,
) -> Result<Var> {
    let xh = tape.concat_cols(&[x, h])?;
    let feats = mixing.features(tape, xh)?;
    let pre = tape.matmul(feats, cell.w_gates)?;
    let pre = tape.add(pre, cell.b_gates)?;
    let gates = tape.sigmoid(pre);
    let r = tape.slice_cols(gates, 0, cell.hidden)?;
    let u = tape.slice_cols(gates, cell.hidden, 2 * cell.hidden)?;
    let rh = tape.mul(r, h)?;
    let xrh = tape.concat_cols(&[x, rh])?;
    let feats_c = mixing.features(tape, xrh)?;
    let pre_c = tape.matmul(feats_c, cell.w_cand)?;
    let pre_c = tape.add(pre_c, cell.b_cand)?;
    let c = tape.tanh(pre_c);
    // c + u⊙(h − c)
    let diff = tape.sub(h, c)?;
    let gated = tape.mul(u, diff)?;
    tape.add(c, gated)
}

/// One DCGRU step on a single `D × input_dim` signal.
pub fn dcgru_step(
    cell: &DcgruCell,
    supports: &[Arc<Tensor>],
    x: &Tensor,
    h_prev: &Tensor,
) -> Result<Tensor> {
    let d = supports.first().map(|s| s.rows()).unwrap_or(0);
    if x.shape() != [d, cell.input_dim] {
        return Err(Error::shape(
            "dcgru_step input",
            x.shape(),
            &[d, cell.input_dim],
        ));
    }
    if h_prev.shape() != [d, cell.hidden] {
        return Err(Error::shape(
            "dcgru_step state",
            h_prev.shape(),
            &[d, cell.hidden],
        ));
    }
    let mut tape = Tape::no_grad();
    let vars: Vec<Var> = cell
        .parameters()
        .into_iter()
        .map(|p| tape.param(p.clone()))
        .collect();
    let bound = cell.bind(&mut tape, &vars)?;
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h_prev.clone());
    let mixing = Mixing::Diffusion {
        supports,
        k: cell.k(),
    };
    let out = gru_step(&mut tape, &bound, mixing, xv, hv)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_graph::diffusion_supports;
    use crate::signal_graph::DetectorGraph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn supports(k: usize) -> Vec<Arc<Tensor>> {
        let w = Tensor::from_rows(&[
            vec![1.0, 0.4, 0.0],
            vec![0.0, 1.0, 0.7],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let g = DetectorGraph::from_ids(&["a".into(), "b".into(), "c".into()], w).unwrap();
        diffusion_supports(&g, k).unwrap()
    }

    #[test]
    fn zero_cell_halves_state() {
        let cell = DcgruCell::zeros(2, 4, 2);
        let x = Tensor::from_fn(3, 2, |i, j| i as f64 - j as f64);
        let h = Tensor::from_fn(3, 4, |i, j| 0.1 * (i * 4 + j) as f64 - 0.3);
        let out = dcgru_step(&cell, &supports(2), &x, &h).unwrap();
        assert!(out.max_abs_diff(&h.scale(0.5)) < 1e-15);
    }

    #[test]
    fn zero_state_and_candidate_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cell = DcgruCell::new(2, 4, 2, &mut rng);
        cell.candidate = DiffusionFilter::zeros(2, 6, 4);
        let x = Tensor::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        let out = dcgru_step(&cell, &supports(2), &x, &Tensor::zeros(&[3, 4])).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cell = DcgruCell::zeros(2, 4, 1);
        let sup = supports(1);
        assert!(dcgru_step(
            &cell,
            &sup,
            &Tensor::zeros(&[3, 1]),
            &Tensor::zeros(&[3, 4])
        )
        .is_err());
        assert!(dcgru_step(
            &cell,
            &sup,
            &Tensor::zeros(&[3, 2]),
            &Tensor::zeros(&[2, 4])
        )
        .is_err());
    }

    #[test]
    fn state_stays_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cell = DcgruCell::new(1, 3, 2, &mut rng);
        let sup = supports(2);
        let mut h = Tensor::zeros(&[3, 3]);
        for t in 0..50 {
            let x = Tensor::filled(&[3, 1], 10.0 * (t as f64).sin());
            h = dcgru_step(&cell, &sup, &x, &h).unwrap();
            assert!(h.data().iter().all(|v| v.abs() <= 1.0));
        }
    }
}
