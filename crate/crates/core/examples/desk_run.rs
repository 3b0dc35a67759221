//! Trains DCRNN and GRU on the synthetic corridor and prints a metric table.
//!
//! `cargo run --release --example desk_run -- [seed] [epochs]`

use arterial_core::dataset::{generate_synthetic, SyntheticCorridorConfig};
use arterial_core::evaluation::{
    run_scenario, CheckpointStore, ScenarioContext, ScenarioSpec, REPORTED_HORIZONS,
};
use arterial_core::signal_graph::GraphOptions;
use arterial_core::training::TrainConfig;

fn main() -> arterial_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let env = |k: &str| std::env::var(k).ok();
    let mut synth = SyntheticCorridorConfig::new(seed);
    if let Some(n) = env("NOISE") {
        synth.noise = n.parse().unwrap();
    }
    let corridor = generate_synthetic(&synth)?;
    let graph = corridor.graph("P2", &GraphOptions::default())?;
    let grid = corridor.grid(&graph, false)?;
    let mut config = TrainConfig::new(seed);
    config.epochs = epochs;
    if let Some(v) = env("LR0") {
        config.lr.initial = v.parse().unwrap();
    }
    if let Some(v) = env("EVERY") {
        config.lr.every = v.parse().unwrap();
    }
    if let Some(v) = env("K") {
        config.k = v.parse().unwrap();
    }
    if let Some(v) = env("HIDDEN") {
        config.hidden = v.parse().unwrap();
    }
    let dir = std::env::temp_dir().join(format!("desk_run_{}", std::process::id()));
    let store = CheckpointStore::new(&dir);
    let ctx = ScenarioContext {
        grid: &grid,
        graph: &graph,
        plan: corridor.plan("P2")?,
        config: &config,
        store: Some(&store),
    };
    let mut spec = ScenarioSpec::full_information(seed);
    spec.retrain = true;
    if let Some(m) = env("METHODS") {
        spec.methods = m
            .split(',')
            .map(|x| toml::Value::String(x.into()).try_into().unwrap())
            .collect();
    }
    let t = std::time::Instant::now();
    let out = run_scenario(&spec, &ctx)?;
    // ZERO_DAYS=f also runs the zero-days ablation with and without retraining
    if let Some(f) = env("ZERO_DAYS") {
        let f: f64 = f.parse().unwrap();
        for retrain in [false, true] {
            let mut zd = ScenarioSpec::zero_days(f, retrain, seed);
            zd.methods = spec.methods.clone();
            let o = run_scenario(&zd, &ctx)?;
            println!("zero_days {f} retrain={retrain}");
            println!("{}", o.table.render(&REPORTED_HORIZONS));
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    for run in &out.runs {
        let last = run.log.epochs.last().unwrap();
        if env("VERBOSE").is_some() {
            for r in &run.log.epochs {
                println!(
                    "  {:>3} lr {:.0e} p {:.3} train {:.4} val {:.4}",
                    r.epoch, r.lr, r.sampling_probability, r.train_loss, r.validation_loss
                );
            }
        }
        println!(
            "{} S={} best epoch {:?} train {:.4} val {:.4} ({:.1}s)",
            run.method,
            run.window,
            run.log.best_epoch,
            last.train_loss,
            last.validation_loss,
            last.wall_time
        );
    }
    println!("{}", out.table.render(&REPORTED_HORIZONS));
    if env("PER_DETECTOR").is_some() {
        let truth = &out.truths[0];
        for p in &out.predictions {
            let h = p.horizon - 1;
            let line: Vec<String> = (0..p.detectors.len())
                .map(|k| {
                    let (mut s, mut n) = (0.0, 0);
                    for i in 0..p.len() {
                        let t = truth.at(i, h, k);
                        if t >= 1.0 {
                            s += (p.at(i, h, k) - t).abs() / t;
                            n += 1;
                        }
                    }
                    format!("{}:{:.1}", p.detectors[k], 100.0 * s / n as f64)
                })
                .collect();
            println!("{:<16}{}", p.method, line.join(" "));
        }
    }
    println!("total {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
