use std::collections::BTreeSet;

use arterial_core::dataset::{generate_synthetic, SyntheticCorridor, SyntheticCorridorConfig};
use arterial_core::evaluation::{
    run_scenario, CheckpointStore, Method, Metric, ScenarioContext, ScenarioKind, ScenarioOutcome,
    ScenarioSpec, Variant,
};
use arterial_core::signal_graph::{DetectorGraph, GraphOptions};
use arterial_core::training::TrainConfig;
use arterial_core::Error;

fn small() -> (SyntheticCorridor, DetectorGraph, TrainConfig) {
    let mut cfg = SyntheticCorridorConfig::new(11);
    cfg.weeks = 3;
    let c = generate_synthetic(&cfg).unwrap();
    let g = c.graph("P2", &GraphOptions::default()).unwrap();
    let mut t = TrainConfig::new(5);
    t.window = 3;
    t.horizon = 2;
    t.hidden = 4;
    t.epochs = 1;
    (c, g, t)
}

fn run(
    c: &SyntheticCorridor,
    g: &DetectorGraph,
    t: &TrainConfig,
    store: Option<&CheckpointStore>,
    spec: &ScenarioSpec,
) -> arterial_core::Result<ScenarioOutcome> {
    let grid = c.grid(g, false)?;
    let ctx = ScenarioContext {
        grid: &grid,
        graph: g,
        plan: c.plan("P2")?,
        config: t,
        store,
    };
    run_scenario(spec, &ctx)
}

fn finite(out: &ScenarioOutcome) {
    for p in &out.predictions {
        assert!(p.values.iter().all(|v| v.is_finite()), "{}", p.method);
    }
}

#[test]
fn single_horizon_trains_one_model_per_step() {
    let (c, g, t) = small();
    let mut spec = ScenarioSpec::full_information(1);
    spec.methods = vec![Method::Dcrnn];
    spec.variant = Variant::SingleHorizon;
    let out = run(&c, &g, &t, None, &spec).unwrap();
    let parts: Vec<&str> = out.runs.iter().map(|r| r.part.as_str()).collect();
    assert_eq!(parts, ["h1", "h2"]);
    assert_eq!(out.predictions[0].horizon, 2);
    finite(&out);
    for h in 1..=2 {
        assert!(out.table.get("DCRNN", Metric::Mae, 3, h).is_some());
    }
}

#[test]
fn day_of_week_covers_every_test_weekday() {
    let (c, g, t) = small();
    let mut spec = ScenarioSpec::full_information(1);
    spec.methods = vec![Method::Gru];
    spec.variant = Variant::DayOfWeek;
    let out = run(&c, &g, &t, None, &spec).unwrap();
    let parts: BTreeSet<&str> = out.runs.iter().map(|r| r.part.as_str()).collect();
    assert!(!parts.is_empty() && parts.iter().all(|p| p.starts_with("dow")));
    assert_eq!(parts.len(), out.runs.len());
    finite(&out);
    // every pair is forecast by its weekday's model, so nothing is left at zero
    let p = &out.predictions[0];
    assert!(p.values.iter().any(|v| *v != 0.0));
    for i in 0..p.len() {
        let row =
            &p.values[i * p.horizon * p.detectors.len()..(i + 1) * p.horizon * p.detectors.len()];
        assert!(row.iter().any(|v| *v != 0.0), "pair {i} not forecast");
    }
}

#[test]
fn detector_subset_uses_the_induced_graph() {
    let (c, g, t) = small();
    let keep: Vec<String> = g.detector_ids()[..5].to_vec();
    let mut spec = ScenarioSpec::detector_subset(&keep, 2);
    spec.methods = vec![Method::Dcrnn, Method::ConstantMean];
    let out = run(&c, &g, &t, None, &spec).unwrap();
    for p in &out.predictions {
        assert_eq!(p.detectors, keep);
    }
    assert_eq!(out.runs.len(), 1);
    finite(&out);
}

#[test]
fn zeroing_without_retrain_reuses_full_information_checkpoints() {
    let (c, g, t) = small();
    let dir = tempfile::tempdir().unwrap();
    let store = CheckpointStore::new(dir.path());
    let methods = vec![Method::Dcrnn, Method::SeasonalNaive];

    let mut zero = ScenarioSpec::zero_detectors(&[g.detector_ids()[0].clone()], false, 3);
    zero.methods = methods.clone();
    match run(&c, &g, &t, Some(&store), &zero) {
        Err(Error::MissingCheckpoint(_)) | Err(Error::Io { .. }) => {}
        other => panic!(
            "expected a missing checkpoint, got {:?}",
            other.map(|o| o.table)
        ),
    }

    let mut full = ScenarioSpec::full_information(3);
    full.methods = methods.clone();
    let base = run(&c, &g, &t, Some(&store), &full).unwrap();
    assert!(store.path(Method::Dcrnn, 3, "").exists());

    let out = run(&c, &g, &t, Some(&store), &zero).unwrap();
    assert!(out.runs.is_empty());
    assert_eq!(out.spec.kind, ScenarioKind::ZeroDetectors);
    finite(&out);
    // targets are untouched, so the truth is identical
    assert_eq!(out.truths[0].values, base.truths[0].values);
    // the silenced inputs change the forecast
    assert_ne!(out.predictions[0].values, base.predictions[0].values);
}
