use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Learned coefficients of a truncated `K`-step bidirectional diffusion.
///
/// `theta` has shape `(K, 2, F_in, F_out)`: index `[k, 0]` weighs the
/// forward walk `(D_O⁻¹W)^k`, index `[k, 1]` the reverse walk `(D_I⁻¹Wᵀ)^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionFilter {
    pub k: usize,
    pub theta: Tensor,
    /// `1 × F_out`.
    pub bias: Tensor,
}

/// Tape handles of a filter's parameters.
#[derive(Clone, Copy, Debug)]
pub struct FilterVars {
    pub theta: Var,
    pub bias: Var,
}

impl DiffusionFilter {
    pub fn new(k: usize, theta: Tensor, bias: Tensor) -> Result<Self> {
        let s = theta.shape();
        if k == 0 || s.len() != 4 || s[0] != k || s[1] != 2 {
            return Err(Error::shape("diffusion filter", s, &[k, 2]));
        }
        if bias.shape() != [1, s[3]] {
            return Err(Error::shape(
                "diffusion filter bias",
                bias.shape(),
                &[1, s[3]],
            ));
        }
        Ok(Self { k, theta, bias })
    }

    pub fn zeros(k: usize, f_in: usize, f_out: usize) -> Self {
        Self {
            k,
            theta: Tensor::zeros(&[k, 2, f_in, f_out]),
            bias: Tensor::zeros(&[1, f_out]),
        }
    }

    /// Glorot-uniform coefficients over the `(2K·F_in) × F_out` stacked
    /// weight and a constant bias.
    pub fn glorot(k: usize, f_in: usize, f_out: usize, bias: f64, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (2 * k * f_in + f_out) as f64).sqrt();
        let data = (0..k * 2 * f_in * f_out)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            k,
            theta: Tensor::new(vec![k, 2, f_in, f_out], data).expect("sized above"),
            bias: Tensor::filled(&[1, f_out], bias),
        }
    }

    pub fn f_in(&self) -> usize {
        self.theta.shape()[2]
    }

    pub fn f_out(&self) -> usize {
        self.theta.shape()[3]
    }

    pub fn theta_at(&self, k: usize, dir: usize, f: usize, g: usize) -> f64 {
        let (fi, fo) = (self.f_in(), self.f_out());
        self.theta.data()[((k * 2 + dir) * fi + f) * fo + g]
    }

    pub fn bind(&self, tape: &mut Tape) -> FilterVars {
        FilterVars {
            theta: tape.param(self.theta.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }
}

fn check_supports(supports: &[Arc<Tensor>], k: usize) -> Result<()> {
    if supports.len() < 2 * k {
        return Err(Error::Config(format!(
            "{} diffusion supports available, {} needed for K = {k}",
            supports.len(),
            2 * k
        )));
    }
    Ok(())
}

/// `[X ‖ F¹X ‖ B¹X ‖ … ‖ F^{K−1}X ‖ B^{K−1}X]` where `X` is `(D·B) × C` with
/// row `d·B + b`. The two zeroth powers are the identity and appear once.
pub fn diffusion_features(
    tape: &mut Tape,
    supports: &[Arc<Tensor>],
    k: usize,
    x: Var,
) -> Result<Var> {
    check_supports(supports, k)?;
    if k == 1 {
        return Ok(x);
    }
    let mut parts = vec![x];
    for step in 1..k {
        parts.push(tape.left_mul(supports[2 * step].clone(), x)?);
        parts.push(tape.left_mul(supports[2 * step + 1].clone(), x)?);
    }
    tape.concat_cols(&parts)
}

/// Stacked weight matching [`diffusion_features`]: `θ₀₀ + θ₀₁` first, then
/// `θ_{k,0}` and `θ_{k,1}` for each `k ≥ 1`.
pub fn effective_weight(tape: &mut Tape, theta: Var, k: usize) -> Result<Var> {
    let s = tape.value(theta).shape().to_vec();
    if s.len() != 4 || s[0] != k || s[1] != 2 {
        return Err(Error::shape("effective_weight", &s, &[k, 2]));
    }
    let (f_in, f_out) = (s[2], s[3]);
    let flat = tape.reshape(theta, &[2 * k * f_in, f_out])?;
    let fwd0 = tape.slice_rows(flat, 0, f_in)?;
    let rev0 = tape.slice_rows(flat, f_in, 2 * f_in)?;
    let zeroth = tape.add(fwd0, rev0)?;
    if k == 1 {
        return Ok(zeroth);
    }
    let rest = tape.slice_rows(flat, 2 * f_in, 2 * k * f_in)?;
    tape.concat_rows(&[zeroth, rest])
}

/// Diffusion convolution on the tape. `x` is `(D·B) × F_in`.
pub fn diffusion_conv_var(
    tape: &mut Tape,
    supports: &[Arc<Tensor>],
    k: usize,
    vars: FilterVars,
    x: Var,
) -> Result<Var> {
    let w = effective_weight(tape, vars.theta, k)?;
    let feats = diffusion_features(tape, supports, k, x)?;
    let y = tape.matmul(feats, w)?;
    tape.add(y, vars.bias)
}

/// `Y = Σ_k [ (D_O⁻¹W)^k X θ_{k,0} + (D_I⁻¹Wᵀ)^k X θ_{k,1} ] + bias` for a
/// single `D × F_in` signal.
pub fn diffusion_conv(
    filter: &DiffusionFilter,
    supports: &[Arc<Tensor>],
    x: &Tensor,
) -> Result<Tensor> {
    check_supports(supports, filter.k)?;
    let d = supports[0].rows();
    if x.rows() != d || x.cols() != filter.f_in() || x.shape().len() != 2 {
        return Err(Error::shape(
            "diffusion_conv",
            x.shape(),
            &[d, filter.f_in()],
        ));
    }
    let mut tape = Tape::no_grad();
    let vars = filter.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let y = diffusion_conv_var(&mut tape, supports, filter.k, vars, xv)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_graph::{diffusion_supports, DetectorGraph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line_graph() -> Vec<Arc<Tensor>> {
        let w = Tensor::from_rows(&[
            vec![1.0, 0.5, 0.0],
            vec![0.0, 1.0, 0.3],
            vec![0.2, 0.0, 1.0],
        ])
        .unwrap();
        let g = DetectorGraph::from_ids(&["a".into(), "b".into(), "c".into()], w).unwrap();
        diffusion_supports(&g, 2).unwrap()
    }

    #[test]
    fn k1_half_half_is_identity() {
        let sup = line_graph();
        let f = DiffusionFilter::new(
            1,
            Tensor::new(vec![1, 2, 1, 1], vec![0.5, 0.5]).unwrap(),
            Tensor::zeros(&[1, 1]),
        )
        .unwrap();
        let x = Tensor::matrix(3, 1, vec![1.0, -2.0, 4.0]).unwrap();
        assert_eq!(diffusion_conv(&f, &sup, &x).unwrap(), x);
    }

    #[test]
    fn zero_theta_gives_zero() {
        let sup = line_graph();
        let f = DiffusionFilter::zeros(2, 2, 3);
        let x = Tensor::from_fn(3, 2, |i, j| (i + j) as f64);
        let y = diffusion_conv(&f, &sup, &x).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn wrong_rows_rejected() {
        let sup = line_graph();
        let f = DiffusionFilter::zeros(2, 1, 1);
        let x = Tensor::zeros(&[4, 1]);
        assert!(diffusion_conv(&f, &sup, &x).is_err());
        let f3 = DiffusionFilter::zeros(3, 1, 1);
        assert!(diffusion_conv(&f3, &sup, &Tensor::zeros(&[3, 1])).is_err());
    }

    #[test]
    fn k2_line_graph_matches_explicit_sum() {
        // F and B written out by hand for the weights above
        let fwd = [
            [1.0 / 1.5, 0.5 / 1.5, 0.0],
            [0.0, 1.0 / 1.3, 0.3 / 1.3],
            [0.2 / 1.2, 0.0, 1.0 / 1.2],
        ];
        // column sums of W: 1.2, 1.5, 1.3
        let rev = [
            [1.0 / 1.2, 0.0, 0.2 / 1.2],
            [0.5 / 1.5, 1.0 / 1.5, 0.0],
            [0.0, 0.3 / 1.3, 1.0 / 1.3],
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = DiffusionFilter::glorot(2, 2, 2, 0.0, &mut rng);
        let x = Tensor::from_fn(3, 2, |i, j| 1.0 + i as f64 - 0.5 * j as f64);
        let y = diffusion_conv(&f, &line_graph(), &x).unwrap();
        for i in 0..3 {
            for g in 0..2 {
                let mut want = 0.0;
                for c in 0..2 {
                    want += (f.theta_at(0, 0, c, g) + f.theta_at(0, 1, c, g)) * x.get(i, c);
                    for j in 0..3 {
                        want += f.theta_at(1, 0, c, g) * fwd[i][j] * x.get(j, c);
                        want += f.theta_at(1, 1, c, g) * rev[i][j] * x.get(j, c);
                    }
                }
                assert!((y.get(i, g) - want).abs() < 1e-12);
            }
        }
    }
}
