use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use arterial_core::evaluation::{mae, mape, rmse, Metric, MetricTable};
use arterial_core::model::{
    diffusion_conv, Batch, DcrnnModel, DiffusionFilter, ModelConfig, Seq2SeqModel,
};
use arterial_core::numerics::{Tape, Tensor};
use arterial_core::signal_graph::{diffusion_supports, stationary_distribution, DetectorGraph};

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> DetectorGraph {
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

/// The same graph with detector `perm[i]` moved to position `i`.
fn permuted(g: &DetectorGraph, perm: &[usize]) -> DetectorGraph {
    let n = perm.len();
    let w = Tensor::from_fn(n, n, |i, j| g.weights().get(perm[i], perm[j]));
    let ids: Vec<String> = perm.iter().map(|&p| g.detector_ids()[p].clone()).collect();
    DetectorGraph::from_ids(&ids, w).unwrap()
}

fn shuffle(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.gen_range(0..=i));
    }
    p
}

fn forecast(m: &DcrnnModel, b: &Batch) -> Vec<f64> {
    let mut tape = Tape::no_grad();
    let p = m.bind_parameters(&mut tape);
    let f = m.forward(&mut tape, &p, b, None).unwrap();
    m.gather(&tape, &f.outputs, b.size)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn diffusion_conv_is_permutation_equivariant(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=7);
        let k = rng.gen_range(1..=3);
        let g = random_graph(&mut rng, n);
        let perm = shuffle(&mut rng, n);
        let theta = Tensor::new(vec![k, 2, 2, 3], (0..k * 12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let bias = Tensor::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0));
        let filter = DiffusionFilter::new(k, theta, bias).unwrap();
        let x = Tensor::from_fn(n, 2, |_, _| rng.gen_range(-2.0..2.0));
        let y = diffusion_conv(&filter, &diffusion_supports(&g, k).unwrap(), &x).unwrap();
        let xp = Tensor::from_fn(n, 2, |i, j| x.get(perm[i], j));
        let gp = permuted(&g, &perm);
        let yp = diffusion_conv(&filter, &diffusion_supports(&gp, k).unwrap(), &xp).unwrap();
        for i in 0..n {
            for j in 0..3 {
                prop_assert!((yp.get(i, j) - y.get(perm[i], j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dcrnn_forecast_is_permutation_equivariant(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(2..=5);
        let cfg = ModelConfig { window: 3, horizon: 2, detectors: d, features: 2, hidden: 3, k: 2 };
        let g = random_graph(&mut rng, d);
        let perm = shuffle(&mut rng, d);
        let b = 2;
        let inputs: Vec<f64> = (0..b * 3 * d * 2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut moved = inputs.clone();
        for bs in 0..b * 3 {
            for (i, &p) in perm.iter().enumerate() {
                for f in 0..2 {
                    moved[(bs * d + i) * 2 + f] = inputs[(bs * d + p) * 2 + f];
                }
            }
        }
        let m = DcrnnModel::new(cfg.clone(), &g, seed).unwrap();
        let mp = DcrnnModel::new(cfg, &permuted(&g, &perm), seed).unwrap();
        let y = forecast(&m, &Batch { size: b, inputs, targets: None });
        let yp = forecast(&mp, &Batch { size: b, inputs: moved, targets: None });
        for bh in 0..b * 2 {
            for (i, &p) in perm.iter().enumerate() {
                prop_assert!((yp[bh * d + i] - y[bh * d + p]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn supports_are_row_stochastic(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=8);
        let g = random_graph(&mut rng, n);
        for s in diffusion_supports(&g, 3).unwrap() {
            for i in 0..n {
                let row: f64 = (0..n).map(|j| s.get(i, j)).sum();
                prop_assert!((row - 1.0).abs() < 1e-12);
                prop_assert!((0..n).all(|j| s.get(i, j) >= 0.0));
            }
        }
    }

    #[test]
    fn restart_series_mass(seed in 0u64..10_000, alpha in 0.05f64..1.0, terms in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=6);
        let g = random_graph(&mut rng, n);
        let s = stationary_distribution(&g, alpha, terms).unwrap();
        let expected = 1.0 - (1.0 - alpha).powi(terms as i32);
        for i in 0..n {
            let row: f64 = (0..n).map(|j| s.get(i, j)).sum();
            prop_assert!((row - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn rmse_dominates_mae(
        pairs in proptest::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 1..200)
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = mae(&p, &t).unwrap();
        let r = rmse(&p, &t).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!(r >= a - 1e-9 * a.max(1.0));
        prop_assert_eq!(mae(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn mape_is_scale_free(
        pairs in proptest::collection::vec((0.0f64..500.0, 1.0f64..500.0), 1..100),
        c in 1.0f64..20.0,
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = mape(&p, &t, 1.0).unwrap();
        let sp: Vec<f64> = p.iter().map(|v| v * c).collect();
        let st: Vec<f64> = t.iter().map(|v| v * c).collect();
        let scaled = mape(&sp, &st, 1.0).unwrap();
        prop_assert!((base.value - scaled.value).abs() < 1e-9 * base.value.max(1.0));
        prop_assert_eq!(base.skipped, 0.0);
    }

    #[test]
    fn wide_csv_round_trip(values in proptest::collection::vec(0.0f64..1e4, 18)) {
        let mut t = MetricTable::new();
        let mut it = values.into_iter();
        for method in ["DCRNN", "Seasonal Naive"] {
            for metric in Metric::ALL {
                for h in [1, 3, 6] {
                    t.insert(method, metric, 12, h, it.next().unwrap());
                }
            }
        }
        let text = t.to_wide_csv();
        let back = MetricTable::from_wide_csv(&text, std::path::Path::new("m.csv")).unwrap();
        prop_assert_eq!(back.cells, t.cells);
    }
}
