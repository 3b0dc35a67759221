//! The `arterial` command line: graph building, synthesis, training,
//! prediction, evaluation and ablation. Every subcommand writes a
//! [`RunManifest`] into its output directory before doing real work.

mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

pub use manifest::{sha256_file, InputFile, RunManifest, MANIFEST_FILE};

use crate::dataset::{
    chronological_split, filter_healthy_days, generate_synthetic, load_series, slice_plan_windows,
    DetectorSeries, FlowGrid, HealthCalendar, SlidingWindowDataset, SyntheticCorridorConfig,
};
use crate::error::{write_string, Error, Result};
use crate::evaluation::{
    per_horizon_report, run_scenario, score, CheckpointStore, MetricTable, Predictions,
    ScenarioContext, ScenarioSpec, DEFAULT_MAPE_FLOOR, REPORTED_HORIZONS,
};
use crate::model::Checkpoint;
use crate::signal_graph::{
    build_transition_matrix, DetectorGraph, GraphOptions, PlanBook, SignalTimingPlan, SplitMode,
    Topology,
};
use crate::training::{build_model, predict, prepare_data, train, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "arterial",
    version,
    about = "Arterial traffic-flow forecasting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    /// Green plus yellow and all-red.
    Full,
    Green,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Part {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the phase-split transition matrix.
    BuildGraph {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        plans: PathBuf,
        #[arg(long, default_value = "P2")]
        plan_id: String,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = SplitArg::Full)]
        split: SplitArg,
        /// Leave a detector out (repeatable).
        #[arg(long)]
        exclude: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corridor data directory.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model and write its checkpoint and training log.
    Train {
        /// Directory with detectors.csv, plans.toml and optionally
        /// health.csv and topology.toml.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast every pair of one split with a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Training config for the split fractions; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Part::Test)]
        part: Part,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction files against a targets file.
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        predictions: Vec<PathBuf>,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAPE_FLOOR)]
        mape_floor: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run ablation scenarios.
    Ablate {
        /// Scenario spec (repeatable); each writes to its own subdirectory.
        #[arg(long, num_args = 1.., required = true)]
        scenario: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Full-information checkpoints for scenarios that do not retrain.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        /// Overrides the scenario and training seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first), runs, and maps errors to exit code 1.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildGraph {
            topology,
            plans,
            plan_id,
            epsilon,
            split,
            exclude,
            out,
        } => build_graph(&topology, &plans, &plan_id, epsilon, split, &exclude, &out),
        Command::Synth {
            config,
            seed,
            out_dir,
        } => synth(config.as_deref(), seed, &out_dir),
        Command::Train {
            data,
            graph,
            config,
            seed,
            out,
        } => train_cmd(&data, &graph, &config, seed, &out),
        Command::Predict {
            checkpoint,
            data,
            graph,
            config,
            part,
            out,
        } => predict_cmd(&checkpoint, &data, &graph, config.as_deref(), part, &out),
        Command::Evaluate {
            predictions,
            targets,
            mape_floor,
            out,
        } => evaluate_cmd(&predictions, &targets, mape_floor, &out),
        Command::Ablate {
            scenario,
            data,
            config,
            checkpoints,
            epsilon,
            seed,
            out,
        } => ablate_cmd(
            &scenario,
            &data,
            &config,
            checkpoints.as_deref(),
            epsilon,
            seed,
            &out,
        ),
    }
}

fn graph_options(epsilon: f64, split: SplitArg) -> GraphOptions {
    GraphOptions {
        epsilon,
        split_mode: match split {
            SplitArg::Full => SplitMode::GreenPlusClearance,
            SplitArg::Green => SplitMode::GreenOnly,
        },
        ..GraphOptions::default()
    }
}

fn build_graph(
    topology_path: &Path,
    plans_path: &Path,
    plan_id: &str,
    epsilon: f64,
    split: SplitArg,
    exclude: &[String],
    out: &Path,
) -> Result<()> {
    let options = graph_options(epsilon, split);
    RunManifest::new("build-graph")
        .with_config(&serde_json::json!({
            "plan_id": plan_id,
            "options": options,
            "exclude": exclude,
        }))?
        .input(topology_path)?
        .input(plans_path)?
        .artifact("graph.csv")
        .artifact("fingerprint.txt")
        .write(out)?;
    let mut topology = Topology::load(topology_path)?;
    for id in exclude {
        if topology.index_of(id).is_none() {
            return Err(Error::UnknownDetector(id.clone()));
        }
    }
    if !exclude.is_empty() {
        let keep: Vec<String> = topology
            .detectors
            .iter()
            .map(|d| d.id.clone())
            .filter(|id| !exclude.contains(id))
            .collect();
        topology = topology.restrict(&keep)?;
    }
    let plans = PlanBook::load(plans_path)?;
    let graph = build_transition_matrix(&topology, &plans, plan_id, &options)?;
    graph.write_csv(&out.join("graph.csv"))?;
    write_string(
        &out.join("fingerprint.txt"),
        &format!("{}\n", graph.fingerprint()),
    )?;
    println!(
        "{} detectors, plan {plan_id}, epsilon {epsilon}",
        graph.len()
    );
    println!("{:<10}{:>10}{:>10}", "detector", "out", "in");
    for ((id, o), i) in graph
        .detector_ids()
        .iter()
        .zip(graph.out_degree())
        .zip(graph.in_degree())
    {
        println!("{id:<10}{o:>10.4}{i:>10.4}");
    }
    Ok(())
}

fn synth(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = match (config, seed) {
        (Some(p), _) => SyntheticCorridorConfig::load(p)?,
        (None, Some(s)) => SyntheticCorridorConfig::new(s),
        (None, None) => return Err(Error::Config("synth needs --config or --seed".into())),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut manifest = RunManifest::new("synth")
        .with_config(&cfg)?
        .seed("seed", cfg.seed);
    if let Some(p) = config {
        manifest = manifest.input(p)?;
    }
    for a in [
        "detectors.csv",
        "health.csv",
        "topology.toml",
        "plans.toml",
        "synth.toml",
    ] {
        manifest = manifest.artifact(a);
    }
    manifest.write(out)?;
    let corridor = generate_synthetic(&cfg)?;
    corridor.write_to_dir(out)?;
    write_string(&out.join("synth.toml"), &cfg.to_toml()?)?;
    println!(
        "{} detectors, {} days written to {}",
        corridor.series.len(),
        cfg.weeks * 7,
        out.display()
    );
    Ok(())
}

/// Contents of a data directory.
struct DataDir {
    series: Vec<DetectorSeries>,
    topology: Option<Topology>,
    plans: PlanBook,
    files: Vec<PathBuf>,
}

fn load_data_dir(dir: &Path) -> Result<DataDir> {
    let detectors = dir.join("detectors.csv");
    let plans_path = dir.join("plans.toml");
    let mut files = vec![detectors.clone(), plans_path.clone()];
    let mut series = load_series(&detectors)?;
    let health = dir.join("health.csv");
    if health.exists() {
        series = filter_healthy_days(&series, &HealthCalendar::load(&health)?)?;
        files.push(health);
    }
    let topo_path = dir.join("topology.toml");
    let topology = if topo_path.exists() {
        files.push(topo_path.clone());
        Some(Topology::load(&topo_path)?)
    } else {
        None
    };
    Ok(DataDir {
        series,
        topology,
        plans: PlanBook::load(&plans_path)?,
        files,
    })
}

/// First intersection's timing of `plan_id`; it supplies the activation
/// periods that define the pairs.
fn find_plan<'a>(plans: &'a PlanBook, plan_id: &str) -> Result<&'a SignalTimingPlan> {
    plans
        .intersections
        .iter()
        .find_map(|i| i.plans.iter().find(|p| p.id == plan_id))
        .ok_or_else(|| Error::UnknownPlan {
            intersection: "*".into(),
            plan: plan_id.into(),
        })
}

fn with_inputs(mut m: RunManifest, files: &[PathBuf]) -> Result<RunManifest> {
    for f in files {
        m = m.input(f)?;
    }
    Ok(m)
}

fn train_cmd(
    data: &Path,
    graph_path: &Path,
    config: &Path,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let dir = load_data_dir(data)?;
    let manifest = RunManifest::new("train")
        .with_config(&cfg)?
        .seed("seed", cfg.seed)
        .input(config)?
        .input(graph_path)?;
    with_inputs(manifest, &dir.files)?
        .artifact("checkpoint.json")
        .artifact("train_log.csv")
        .artifact("config.toml")
        .write(out)?;
    cfg.save(&out.join("config.toml"))?;
    let graph = DetectorGraph::read_csv(graph_path, dir.topology.as_ref())?;
    let grid = FlowGrid::from_series(&dir.series, &graph.detector_ids(), cfg.use_occupancy)?;
    let plan = find_plan(&dir.plans, &cfg.plan_id)?;
    let data = prepare_data(&grid, plan, &cfg)?;
    println!(
        "{} train / {} validation / {} test pairs, {} detectors",
        data.raw.train.len(),
        data.raw.validation.len(),
        data.raw.test.len(),
        graph.len()
    );
    let mut model = build_model(&cfg, &graph)?;
    let log = train(&mut model, &data.normalized, &cfg)?;
    log.write_csv(&out.join("train_log.csv"))?;
    if let (Some(best), Some(last)) = (log.best_epoch, log.epochs.last()) {
        println!(
            "best epoch {best}, validation loss {:.5}, {:.1}s",
            log.epochs[best].validation_loss, last.wall_time
        );
    }
    Checkpoint::new(model, &graph, data.stats, &cfg.plan_id).save(&out.join("checkpoint.json"))?;
    Ok(())
}

fn pick_part(
    ds: &SlidingWindowDataset,
    split: [f64; 3],
    part: Part,
) -> Result<SlidingWindowDataset> {
    if part == Part::All {
        return Ok(ds.clone());
    }
    let s = chronological_split(ds, split)?;
    Ok(match part {
        Part::Train => s.train,
        Part::Validation => s.validation,
        _ => s.test,
    })
}

fn predict_cmd(
    checkpoint_path: &Path,
    data: &Path,
    graph_path: &Path,
    config: Option<&Path>,
    part: Part,
    out: &Path,
) -> Result<()> {
    let split = match config {
        Some(p) => TrainConfig::load(p)?.split,
        None => TrainConfig::new(0).split,
    };
    let dir = load_data_dir(data)?;
    let mut manifest = RunManifest::new("predict")
        .with_config(&serde_json::json!({ "split": split, "part": format!("{part:?}") }))?
        .input(checkpoint_path)?
        .input(graph_path)?;
    if let Some(p) = config {
        manifest = manifest.input(p)?;
    }
    with_inputs(manifest, &dir.files)?
        .artifact("predictions.csv")
        .artifact("targets.csv")
        .write(out)?;
    let graph = DetectorGraph::read_csv(graph_path, dir.topology.as_ref())?;
    let checkpoint = Checkpoint::load(checkpoint_path, &graph)?;
    let mc = checkpoint.model().config().clone();
    let grid = FlowGrid::from_series(&dir.series, &checkpoint.detectors, mc.features > 1)?;
    let plan = find_plan(&dir.plans, &checkpoint.plan_id)?;
    let ds = slice_plan_windows(&grid, plan, mc.window, mc.horizon, mc.window)?;
    let ds = pick_part(&ds, split, part)?;
    let pred = predict(&checkpoint, &ds)?;
    pred.write_csv(&out.join("predictions.csv"))?;
    let mut truth = Predictions::truth(&ds);
    truth.window = mc.window;
    truth.write_csv(&out.join("targets.csv"))?;
    println!("{} pairs forecast with {}", pred.len(), pred.method);
    Ok(())
}

fn evaluate_cmd(predictions: &[PathBuf], targets: &Path, floor: f64, out: &Path) -> Result<()> {
    let mut manifest = RunManifest::new("evaluate")
        .with_config(&serde_json::json!({ "mape_floor": floor }))?
        .input(targets)?;
    for p in predictions {
        manifest = manifest.input(p)?;
    }
    manifest
        .artifact("metrics.csv")
        .artifact("metrics_long.csv")
        .artifact("plot_data.csv")
        .write(out)?;
    let truth = Predictions::read_csv(targets)?;
    let mut table = MetricTable::new();
    let mut preds = Vec::with_capacity(predictions.len());
    let mut truths: Vec<Predictions> = Vec::new();
    for path in predictions {
        let p = Predictions::read_csv(path)?;
        p.check_aligned(&truth).map_err(|e| match e {
            Error::LengthMismatch(msg) => {
                Error::LengthMismatch(format!("{}: {msg}", path.display()))
            }
            other => other,
        })?;
        table.record(&p.method, p.window, &score(&p, &truth, floor)?);
        if !truths.iter().any(|t| t.window == p.window) {
            let mut t = truth.clone();
            t.window = p.window;
            truths.push(t);
        }
        preds.push(p);
    }
    per_horizon_report(&table, &preds, &truths, out)?;
    print!("{}", table.render(&REPORTED_HORIZONS));
    Ok(())
}

fn ablate_cmd(
    scenarios: &[PathBuf],
    data: &Path,
    config: &Path,
    checkpoints: Option<&Path>,
    epsilon: f64,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = load_data_dir(data)?;
    let topology = dir
        .topology
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} has no topology.toml", data.display())))?;
    let graph = build_transition_matrix(
        topology,
        &dir.plans,
        &cfg.plan_id,
        &graph_options(epsilon, SplitArg::Full),
    )?;
    let grid = FlowGrid::from_series(&dir.series, &graph.detector_ids(), cfg.use_occupancy)?;
    let plan = find_plan(&dir.plans, &cfg.plan_id)?;
    let store = checkpoints.map(CheckpointStore::new);
    let mut failures = Vec::new();
    for (i, path) in scenarios.iter().enumerate() {
        let result = (|| -> Result<()> {
            let mut spec = ScenarioSpec::load(path)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let name = if spec.name.is_empty() {
                format!("scenario_{i}")
            } else {
                spec.name.clone()
            };
            let sub = out.join(&name);
            let manifest = RunManifest::new("ablate")
                .with_config(&serde_json::json!({
                    "scenario": spec,
                    "train": cfg,
                    "epsilon": epsilon,
                }))?
                .seed("scenario", spec.seed)
                .seed("train", cfg.seed)
                .input(path)?
                .input(config)?;
            with_inputs(manifest, &dir.files)?
                .artifact("metrics.csv")
                .artifact("metrics_long.csv")
                .artifact("plot_data.csv")
                .write(&sub)?;
            let ctx = ScenarioContext {
                grid: &grid,
                graph: &graph,
                plan,
                config: &cfg,
                store: store.as_ref(),
            };
            let outcome = run_scenario(&spec, &ctx)?;
            per_horizon_report(&outcome.table, &outcome.predictions, &outcome.truths, &sub)?;
            for run in &outcome.runs {
                let suffix = if run.part.is_empty() {
                    String::new()
                } else {
                    format!("_{}", run.part)
                };
                run.log.write_csv(&sub.join(format!(
                    "train_log_{}_s{}{suffix}.csv",
                    run.method.name().to_lowercase().replace(' ', "_"),
                    run.window
                )))?;
            }
            println!("== {name}");
            print!("{}", outcome.table.render(&REPORTED_HORIZONS));
            Ok(())
        })();
        if let Err(e) = result {
            eprintln!("scenario {} failed: {e}", path.display());
            failures.push(path.display().to_string());
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{} of {} scenarios failed: {}",
            failures.len(),
            scenarios.len(),
            failures.join(", ")
        )))
    }
}
