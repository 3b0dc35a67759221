use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use arterial_core::dataset::{generate_synthetic, slice_plan_windows, SyntheticCorridorConfig};
use arterial_core::evaluation::{mae, mape, rmse, DEFAULT_MAPE_FLOOR};
use arterial_core::model::Checkpoint;
use arterial_core::signal_graph::GraphOptions;
use arterial_core::training::{build_model, predict, prepare_data, train, TrainConfig};
use arterial_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn c_path(p: &Path) -> CString {
    c(p.to_str().unwrap())
}

fn last_error() -> String {
    let p = arterial_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    checkpoint: PathBuf,
    corridor: arterial_core::dataset::SyntheticCorridor,
    config: TrainConfig,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut sc = SyntheticCorridorConfig::new(5);
    sc.weeks = 2;
    let corridor = generate_synthetic(&sc).unwrap();
    corridor.write_to_dir(&data).unwrap();
    let mut config = TrainConfig::new(3);
    config.epochs = 1;
    config.hidden = 4;
    let graph = corridor
        .graph(&config.plan_id, &GraphOptions::default())
        .unwrap();
    let grid = corridor.grid(&graph, config.use_occupancy).unwrap();
    let prepared = prepare_data(&grid, corridor.plan(&config.plan_id).unwrap(), &config).unwrap();
    let mut model = build_model(&config, &graph).unwrap();
    train(&mut model, &prepared.normalized, &config).unwrap();
    let checkpoint = dir.path().join("checkpoint.json");
    Checkpoint::new(model, &graph, prepared.stats, &config.plan_id)
        .save(&checkpoint)
        .unwrap();
    Fixture {
        _dir: dir,
        data,
        checkpoint,
        corridor,
        config,
    }
}

unsafe fn build_graph(data: &Path, epsilon: f64) -> *mut ArterialGraph {
    let mut g = ptr::null_mut();
    let s = arterial_graph_build(
        c_path(&data.join("topology.toml")).as_ptr(),
        c_path(&data.join("plans.toml")).as_ptr(),
        c("P2").as_ptr(),
        epsilon,
        &mut g,
    );
    assert_eq!(s, ArterialStatus::Ok);
    assert!(!g.is_null());
    g
}

#[test]
fn graph_and_model_round_trip() {
    let f = fixture();
    unsafe {
        let g = build_graph(&f.data, 0.1);
        let core = f.corridor.graph("P2", &GraphOptions::default()).unwrap();

        let mut n = 0;
        assert_eq!(arterial_graph_num_detectors(g, &mut n), ArterialStatus::Ok);
        assert_eq!(n, core.len());
        let mut w = vec![0.0; n * n];
        assert_eq!(
            arterial_graph_weights(g, w.as_mut_ptr(), w.len()),
            ArterialStatus::Ok
        );
        assert_eq!(w, core.weights().data());

        let mut buf = [0 as libc::c_char; 80];
        let mut need = 0;
        assert_eq!(
            arterial_graph_fingerprint(g, buf.as_mut_ptr(), buf.len(), &mut need),
            ArterialStatus::Ok
        );
        assert_eq!(
            CStr::from_ptr(buf.as_ptr()).to_str().unwrap(),
            core.fingerprint()
        );
        assert_eq!(need, 64);
        assert_eq!(
            arterial_graph_detector_id(g, 2, buf.as_mut_ptr(), buf.len(), &mut need),
            ArterialStatus::Ok
        );
        assert_eq!(
            CStr::from_ptr(buf.as_ptr()).to_str().unwrap(),
            core.detector_ids()[2]
        );

        let mut m = ptr::null_mut();
        assert_eq!(
            arterial_model_load(c_path(&f.checkpoint).as_ptr(), g, &mut m),
            ArterialStatus::Ok
        );
        let (mut s, mut h, mut d, mut feat) = (0, 0, 0, 0);
        assert_eq!(
            arterial_model_shape(m, &mut s, &mut h, &mut d, &mut feat),
            ArterialStatus::Ok
        );
        assert_eq!((s, h, d, feat), (f.config.window, f.config.horizon, n, 1));

        // forecasts through the C ABI match the library on the same windows
        let cp = Checkpoint::load(&f.checkpoint, &core).unwrap();
        let grid = f.corridor.grid(&core, false).unwrap();
        let ds = slice_plan_windows(&grid, f.corridor.plan("P2").unwrap(), s, h, s).unwrap();
        let mut sub = ds.clone();
        sub.samples.truncate(3);
        let expected = predict(&cp, &sub).unwrap().values;
        let history: Vec<f64> = sub.samples.iter().flat_map(|x| x.inputs.clone()).collect();
        let mut out = vec![f64::NAN; 3 * h * d];
        assert_eq!(
            arterial_model_forecast(
                m,
                history.as_ptr(),
                history.len(),
                out.as_mut_ptr(),
                out.len()
            ),
            ArterialStatus::Ok
        );
        assert_eq!(out, expected);
        assert!(arterial_last_error_message().is_null());

        arterial_model_free(m);
        arterial_graph_free(g);
    }
}

#[test]
fn fingerprint_mismatch_is_reported() {
    let f = fixture();
    unsafe {
        let g = build_graph(&f.data, 0.2);
        let mut m = ptr::null_mut();
        let s = arterial_model_load(c_path(&f.checkpoint).as_ptr(), g, &mut m);
        assert_eq!(s, ArterialStatus::Fingerprint);
        assert!(m.is_null());
        assert!(last_error().contains("fingerprint"));
        arterial_graph_free(g);
    }
}

#[test]
fn forecast_rejects_bad_lengths() {
    let f = fixture();
    unsafe {
        let g = build_graph(&f.data, 0.1);
        let mut m = ptr::null_mut();
        assert_eq!(
            arterial_model_load(c_path(&f.checkpoint).as_ptr(), g, &mut m),
            ArterialStatus::Ok
        );
        let history = [10.0; 7];
        let mut out = vec![0.0; 48];
        let s = arterial_model_forecast(
            m,
            history.as_ptr(),
            history.len(),
            out.as_mut_ptr(),
            out.len(),
        );
        assert_eq!(s, ArterialStatus::LengthMismatch);
        let history = vec![10.0; 12 * 8];
        let s = arterial_model_forecast(m, history.as_ptr(), history.len(), out.as_mut_ptr(), 5);
        assert_eq!(s, ArterialStatus::LengthMismatch);
        assert!(last_error().contains("48"));
        let mut bad = history.clone();
        bad[3] = f64::NAN;
        let s = arterial_model_forecast(m, bad.as_ptr(), bad.len(), out.as_mut_ptr(), out.len());
        assert_eq!(s, ArterialStatus::Numeric);
        arterial_model_free(m);
        arterial_graph_free(g);
    }
}

#[test]
fn errors_and_buffers() {
    unsafe {
        let mut g = ptr::null_mut();
        let s = arterial_graph_build(ptr::null(), ptr::null(), ptr::null(), 0.1, &mut g);
        assert_eq!(s, ArterialStatus::NullPointer);
        assert!(last_error().contains("topology_path"));

        let s = arterial_graph_read_csv(c("/no/such/graph.csv").as_ptr(), &mut g);
        assert_eq!(s, ArterialStatus::Io);
        assert!(g.is_null());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        std::fs::write(&path, "detector_id,a,b\na,1.0,0.5\nb,0.0,1.0\n").unwrap();
        assert_eq!(
            arterial_graph_read_csv(c_path(&path).as_ptr(), &mut g),
            ArterialStatus::Ok
        );
        let mut need = 0;
        let mut small = [0 as libc::c_char; 8];
        let s = arterial_graph_fingerprint(g, small.as_mut_ptr(), small.len(), &mut need);
        assert_eq!(s, ArterialStatus::BufferTooSmall);
        assert_eq!(need, 64);
        let s = arterial_graph_detector_id(g, 9, small.as_mut_ptr(), small.len(), &mut need);
        assert_eq!(s, ArterialStatus::InvalidArgument);
        let mut w = [0.0; 3];
        assert_eq!(
            arterial_graph_weights(g, w.as_mut_ptr(), 3),
            ArterialStatus::LengthMismatch
        );
        arterial_graph_free(g);
        arterial_graph_free(ptr::null_mut());
        arterial_model_free(ptr::null_mut());

        let mut n = 0;
        assert_eq!(
            arterial_graph_num_detectors(ptr::null(), &mut n),
            ArterialStatus::NullPointer
        );

        std::fs::write(&path, "detector_id,a\na,x\n").unwrap();
        assert_eq!(
            arterial_graph_read_csv(c_path(&path).as_ptr(), &mut g),
            ArterialStatus::Parse
        );
    }
}

#[test]
fn metrics_match_library() {
    let p = [12.0, 0.5, 30.0, 7.0];
    let t = [10.0, 0.2, 33.0, 7.5];
    let mut out = 0.0;
    unsafe {
        for (kind, want) in [
            (ArterialMetric::Mae, mae(&p, &t).unwrap()),
            (ArterialMetric::Rmse, rmse(&p, &t).unwrap()),
            (
                ArterialMetric::Mape,
                mape(&p, &t, DEFAULT_MAPE_FLOOR).unwrap().value,
            ),
        ] {
            assert_eq!(
                arterial_metric(kind, p.as_ptr(), t.as_ptr(), 4, &mut out),
                ArterialStatus::Ok
            );
            assert_eq!(out, want);
        }
        let s = arterial_metric(ArterialMetric::Mae, p.as_ptr(), t.as_ptr(), 0, &mut out);
        assert_eq!(s, ArterialStatus::LengthMismatch);
    }
    let v = unsafe { CStr::from_ptr(arterial_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

fn cc() -> Option<String> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
        .map(String::from)
}

#[test]
fn header_compiles_as_c() {
    let Some(cc) = cc() else {
        eprintln!("no C compiler found; header check not run");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "arterial.h"
int main(void) {
    ArterialGraph *g = 0;
    ArterialStatus s = arterial_graph_read_csv("missing.csv", &g);
    if (s != ARTERIAL_STATUS_IO || g != 0) return 1;
    if (arterial_last_error_message() == 0) return 2;
    double p[2] = {1.0, 3.0}, t[2] = {2.0, 2.0}, out = 0.0;
    if (arterial_metric(ARTERIAL_METRIC_MAE, p, t, 2, &out) != ARTERIAL_STATUS_OK) return 3;
    return out == 1.0 ? 0 : 4;
}
"#,
    )
    .unwrap();
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header_dir())
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());

    // `cargo test` does not refresh the static library, so link only
    // against one at least as new as the source (after `cargo build`)
    let target = std::env::current_exe().unwrap();
    let profile_dir = target.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libarterial_ffi.a");
    let modified = |p: &Path| std::fs::metadata(p).and_then(|m| m.modified()).ok();
    let source = Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs");
    if modified(&lib).is_none() || modified(&lib) < modified(&source) {
        eprintln!("{} missing or stale; link check not run", lib.display());
        return;
    }
    let exe = dir.path().join("use");
    let status = Command::new(&cc)
        .args(["-std=c99", "-I"])
        .arg(header_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&exe).current_dir(dir.path()).status().unwrap();
    assert_eq!(run.code(), Some(0));
}
