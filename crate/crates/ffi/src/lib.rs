//! C interface to `arterial-core`.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `_free` function. Every fallible call returns an
//! [`ArterialStatus`]; on failure a description is available from
//! [`arterial_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use libc::{c_char, c_double, size_t};

use arterial_core::evaluation::{mae, mape, rmse, DEFAULT_MAPE_FLOOR};
use arterial_core::model::Checkpoint;
use arterial_core::signal_graph::{
    build_transition_matrix, DetectorGraph, GraphOptions, PlanBook, Topology,
};
use arterial_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArterialStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Fingerprint = 6,
    LengthMismatch = 7,
    Numeric = 8,
    BufferTooSmall = 9,
    Panic = 10,
    Internal = 11,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArterialMetric {
    Mae = 0,
    Rmse = 1,
    Mape = 2,
}

/// Phase-split-weighted detector transition matrix.
pub struct ArterialGraph {
    inner: DetectorGraph,
}

/// A trained checkpoint bound to its graph.
pub struct ArterialModel {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(ArterialStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } | Error::MissingCheckpoint(_) => ArterialStatus::Io,
            Error::Parse { .. } | Error::Csv(_) | Error::Json(_) | Error::TomlDe(_) => {
                ArterialStatus::Parse
            }
            Error::Fingerprint { .. } => ArterialStatus::Fingerprint,
            Error::LengthMismatch(_) | Error::Shape { .. } | Error::EmptyMetric => {
                ArterialStatus::LengthMismatch
            }
            Error::NonFinite(_) | Error::NanLoss { .. } | Error::NanGradient(_) => {
                ArterialStatus::Numeric
            }
            Error::Config(_)
            | Error::UnknownPlan { .. }
            | Error::UnknownPhase { .. }
            | Error::UnknownDetector(_)
            | Error::UnknownIntersection { .. }
            | Error::InvalidPlan(_)
            | Error::InvalidTopology(_)
            | Error::ZeroDegree(_) => ArterialStatus::Config,
            _ => ArterialStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: ArterialStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard<F>(f: F) -> ArterialStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ArterialStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            ArterialStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(ArterialStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        fail(
            ArterialStatus::InvalidArgument,
            format!("{name} is not UTF-8"),
        )
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(ArterialStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice_arg<'a>(p: *const c_double, len: size_t, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(ArterialStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies `s` with a terminating NUL into `buf`. `required` (if non-null)
/// receives the length without the NUL, so a caller can size a retry.
unsafe fn write_str(
    s: &str,
    buf: *mut c_char,
    capacity: size_t,
    required: *mut size_t,
) -> Result<(), Failure> {
    if !required.is_null() {
        *required = s.len();
    }
    if buf.is_null() || capacity < s.len() + 1 {
        return Err(fail(
            ArterialStatus::BufferTooSmall,
            format!("buffer of {capacity} bytes, need {}", s.len() + 1),
        ));
    }
    ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn arterial_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn arterial_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds the transition matrix for `plan_id` from a topology and a plan book
/// (both TOML files). `epsilon` is the sparsification threshold.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arterial_graph_build(
    topology_path: *const c_char,
    plans_path: *const c_char,
    plan_id: *const c_char,
    epsilon: c_double,
    out: *mut *mut ArterialGraph,
) -> ArterialStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(ArterialStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let topology = Topology::load(&PathBuf::from(str_arg(topology_path, "topology_path")?))?;
        let plans = PlanBook::load(&PathBuf::from(str_arg(plans_path, "plans_path")?))?;
        let options = GraphOptions {
            epsilon,
            ..GraphOptions::default()
        };
        let inner =
            build_transition_matrix(&topology, &plans, str_arg(plan_id, "plan_id")?, &options)?;
        *out = Box::into_raw(Box::new(ArterialGraph { inner }));
        Ok(())
    })
}

/// Reads a matrix written by `arterial build-graph`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arterial_graph_read_csv(
    path: *const c_char,
    out: *mut *mut ArterialGraph,
) -> ArterialStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(ArterialStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let inner = DetectorGraph::read_csv(&PathBuf::from(str_arg(path, "path")?), None)?;
        *out = Box::into_raw(Box::new(ArterialGraph { inner }));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn arterial_graph_num_detectors(
    graph: *const ArterialGraph,
    out: *mut size_t,
) -> ArterialStatus {
    guard(|| {
        let g = ref_arg(graph, "graph")?;
        if out.is_null() {
            return Err(fail(ArterialStatus::NullPointer, "out is null"));
        }
        *out = g.inner.len();
        Ok(())
    })
}

/// Copies the `D × D` weights, row-major, into `out` (length `len`).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn arterial_graph_weights(
    graph: *const ArterialGraph,
    out: *mut c_double,
    len: size_t,
) -> ArterialStatus {
    guard(|| {
        let w = ref_arg(graph, "graph")?.inner.weights().data();
        if len != w.len() {
            return Err(fail(
                ArterialStatus::LengthMismatch,
                format!("weights have {} entries, buffer {len}", w.len()),
            ));
        }
        if out.is_null() {
            return Err(fail(ArterialStatus::NullPointer, "out is null"));
        }
        ptr::copy_nonoverlapping(w.as_ptr(), out, w.len());
        Ok(())
    })
}

/// Writes detector `index`'s ID into `buf`; see [`arterial_graph_fingerprint`]
/// for the buffer convention.
///
/// # Safety
/// `buf` must point to `capacity` writable bytes; `required` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn arterial_graph_detector_id(
    graph: *const ArterialGraph,
    index: size_t,
    buf: *mut c_char,
    capacity: size_t,
    required: *mut size_t,
) -> ArterialStatus {
    guard(|| {
        let g = ref_arg(graph, "graph")?;
        let d = g.inner.detectors().get(index).ok_or_else(|| {
            fail(
                ArterialStatus::InvalidArgument,
                format!("detector index {index} out of range for {}", g.inner.len()),
            )
        })?;
        write_str(&d.id, buf, capacity, required)
    })
}

/// Writes the hex SHA-256 fingerprint into `buf`. When `capacity` is too
/// small the call fails with `BufferTooSmall` and `required` still receives
/// the length (without the NUL).
///
/// # Safety
/// `buf` must point to `capacity` writable bytes; `required` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn arterial_graph_fingerprint(
    graph: *const ArterialGraph,
    buf: *mut c_char,
    capacity: size_t,
    required: *mut size_t,
) -> ArterialStatus {
    guard(|| {
        write_str(
            &ref_arg(graph, "graph")?.inner.fingerprint(),
            buf,
            capacity,
            required,
        )
    })
}

/// # Safety
/// `graph` must be NULL or come from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn arterial_graph_free(graph: *mut ArterialGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Loads a checkpoint and binds it to `graph`; a graph whose fingerprint
/// differs from the one used in training fails with `Fingerprint`.
///
/// # Safety
/// `path` must be NUL-terminated; `graph` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn arterial_model_load(
    path: *const c_char,
    graph: *const ArterialGraph,
    out: *mut *mut ArterialModel,
) -> ArterialStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(ArterialStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let g = ref_arg(graph, "graph")?;
        let inner = Checkpoint::load(&PathBuf::from(str_arg(path, "path")?), &g.inner)?;
        *out = Box::into_raw(Box::new(ArterialModel { inner }));
        Ok(())
    })
}

/// Input window `S`, horizon `H`, detectors `D` and channels per detector
/// `F`. Any output pointer may be NULL.
///
/// # Safety
/// `model` must be live.
#[no_mangle]
pub unsafe extern "C" fn arterial_model_shape(
    model: *const ArterialModel,
    window: *mut size_t,
    horizon: *mut size_t,
    detectors: *mut size_t,
    features: *mut size_t,
) -> ArterialStatus {
    guard(|| {
        let c = ref_arg(model, "model")?.inner.model().config();
        for (p, v) in [
            (window, c.window),
            (horizon, c.horizon),
            (detectors, c.detectors),
            (features, c.features),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Forecasts `B` samples. `history` holds raw values `B × S × D × F`
/// row-major (oldest step first); `out` receives raw flow `B × H × D`.
///
/// # Safety
/// `history` must hold `history_len` doubles and `out` `out_len` writable ones.
#[no_mangle]
pub unsafe extern "C" fn arterial_model_forecast(
    model: *const ArterialModel,
    history: *const c_double,
    history_len: size_t,
    out: *mut c_double,
    out_len: size_t,
) -> ArterialStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let c = m.inner.model().config();
        let x = slice_arg(history, history_len, "history")?;
        let per = c.window * c.detectors * c.features;
        let expected = history_len / per.max(1) * c.horizon * c.detectors;
        if history_len.is_multiple_of(per.max(1)) && out_len != expected {
            return Err(fail(
                ArterialStatus::LengthMismatch,
                format!("output buffer holds {out_len} values, forecast has {expected}"),
            ));
        }
        let y = m.inner.forecast(x)?;
        if out.is_null() {
            return Err(fail(ArterialStatus::NullPointer, "out is null"));
        }
        ptr::copy_nonoverlapping(y.as_ptr(), out, y.len());
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or come from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn arterial_model_free(model: *mut ArterialModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// One forecast metric over `len` aligned values. MAPE is in percent and
/// skips targets below 1.
///
/// # Safety
/// `prediction` and `target` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn arterial_metric(
    metric: ArterialMetric,
    prediction: *const c_double,
    target: *const c_double,
    len: size_t,
    out: *mut c_double,
) -> ArterialStatus {
    guard(|| {
        let p = slice_arg(prediction, len, "prediction")?;
        let t = slice_arg(target, len, "target")?;
        if out.is_null() {
            return Err(fail(ArterialStatus::NullPointer, "out is null"));
        }
        *out = match metric {
            ArterialMetric::Mae => mae(p, t)?,
            ArterialMetric::Rmse => rmse(p, t)?,
            ArterialMetric::Mape => mape(p, t, DEFAULT_MAPE_FLOOR)?.value,
        };
        Ok(())
    })
}
