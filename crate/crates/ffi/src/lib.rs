//! C interface: load a trained checkpoint and score windows, fit and
//! evaluate control-path splines, and compute detection metrics.
//!
//! Every fallible call returns a [`PadStatus`]. On failure a message is kept
//! per thread and can be read with [`pad_last_error_message`]. Panics never
//! cross the boundary; they surface as [`PadStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use pad_core::checkpoint::Checkpoint;
use pad_core::data::{NormStats, RawSequence};
use pad_core::metrics;
use pad_core::model::{predict, ModelConfig, PadParameters};
use pad_core::path::{CubicSplinePath, TimeSeriesWindow};
use pad_core::solver::SolverConfig;
use pad_core::PadError;

/// Result codes. The non-zero values match the `pad` CLI exit codes where
/// the causes coincide.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadStatus {
    Ok = 0,
    /// Invalid configuration or checkpoint contents.
    Config = 2,
    /// Malformed input data, I/O failure, or out-of-domain argument.
    Input = 3,
    /// Non-finite values during integration.
    Numeric = 4,
    /// A required pointer argument was null.
    NullArgument = 6,
    /// Internal panic caught at the boundary.
    Panic = 7,
}

impl From<&PadError> for PadStatus {
    fn from(e: &PadError) -> Self {
        match e.exit_code() {
            2 => PadStatus::Config,
            4 => PadStatus::Numeric,
            _ => PadStatus::Input,
        }
    }
}

/// Trained network with its normalization statistics.
pub struct PadModel {
    params: PadParameters,
    model: ModelConfig,
    solver: SolverConfig,
    norm: Option<NormStats>,
}

/// Natural cubic spline through one window's observations.
pub struct PadSpline {
    path: CubicSplinePath,
}

/// Window-level detection metrics.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PadMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Pad(PadError),
}

impl From<PadError> for Failure {
    fn from(e: PadError) -> Self {
        Failure::Pad(e)
    }
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PadStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PadStatus::Ok,
        Ok(Err(Failure::Null(arg))) => {
            set_error(format!("null pointer passed for `{arg}`"));
            PadStatus::NullArgument
        }
        Ok(Err(Failure::Pad(e))) => {
            set_error(e.to_string());
            PadStatus::from(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            PadStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &'static str) -> Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(name))
    } else {
        Ok(p)
    }
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn input_slice<'a, T>(p: *const T, len: usize, name: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(slice::from_raw_parts(non_null(p, name)?, len))
}

/// # Safety
/// `p` must be null or point to `len` writable values.
unsafe fn output_slice<'a, T>(p: *mut T, len: usize, name: &'static str) -> Result<&'a mut [T], Failure> {
    non_null(p as *const T, name)?;
    Ok(slice::from_raw_parts_mut(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next `pad_*` call on the same thread.
#[no_mangle]
pub extern "C" fn pad_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load a checkpoint written by `pad train`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
/// On success `*out` owns a model to be released with [`pad_model_free`].
#[no_mangle]
pub unsafe extern "C" fn pad_model_load(path: *const c_char, out: *mut *mut PadModel) -> PadStatus {
    guard(|| {
        let path = CStr::from_ptr(non_null(path, "path")?);
        non_null(out as *const *mut PadModel, "out")?;
        *out = ptr::null_mut();
        let path = path
            .to_str()
            .map_err(|_| PadError::Input("path is not valid UTF-8".into()))?;
        let ck = Checkpoint::load(Path::new(path))?;
        let model = PadModel {
            params: ck.params()?,
            model: ck.model,
            solver: ck.solver,
            norm: ck.norm,
        };
        *out = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// Number of data channels the model expects.
///
/// # Safety
/// `model` must be null or a live handle from [`pad_model_load`].
#[no_mangle]
pub unsafe extern "C" fn pad_model_n_channels(model: *const PadModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.n_channels)
}

/// Score one window of raw (unnormalized) observations.
///
/// `times` holds `n_obs` strictly increasing timestamps and `values` the
/// row-major `n_obs × n_channels` observations. The checkpoint's
/// normalization is applied before the forward pass.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `model` must be live.
#[no_mangle]
pub unsafe extern "C" fn pad_model_predict(
    model: *const PadModel,
    times: *const f64,
    values: *const f64,
    n_obs: usize,
    n_channels: usize,
    out_p_anomaly: *mut f64,
    out_p_poa: *mut f64,
) -> PadStatus {
    guard(|| {
        let m = &*non_null(model, "model")?;
        let times = input_slice(times, n_obs, "times")?;
        let values = input_slice(values, n_obs.saturating_mul(n_channels), "values")?;
        let pa = output_slice(out_p_anomaly, 1, "out_p_anomaly")?;
        let pp = output_slice(out_p_poa, 1, "out_p_poa")?;
        if n_channels != m.model.n_channels {
            return Err(PadError::Input(format!(
                "model expects {} channels, got {n_channels}",
                m.model.n_channels
            ))
            .into());
        }
        let seq = RawSequence::new(times.to_vec(), values.to_vec(), n_channels, None, "ffi")?;
        let seq = match &m.norm {
            Some(n) => n.apply(&seq)?,
            None => seq,
        };
        let window = TimeSeriesWindow::new(seq.times, seq.values, n_channels, vec![], 0)?;
        let probs = predict(&[window], &m.params, &m.model, &m.solver)?;
        pa[0] = probs[0].0;
        pp[0] = probs[0].1;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`pad_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pad_model_free(model: *mut PadModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fit a natural cubic spline through `n_obs` observations.
///
/// # Safety
/// Pointers must be valid for the stated lengths. On success `*out` owns a
/// spline to be released with [`pad_spline_free`].
#[no_mangle]
pub unsafe extern "C" fn pad_spline_fit(
    times: *const f64,
    values: *const f64,
    n_obs: usize,
    n_channels: usize,
    out: *mut *mut PadSpline,
) -> PadStatus {
    guard(|| {
        non_null(out as *const *mut PadSpline, "out")?;
        *out = ptr::null_mut();
        let times = input_slice(times, n_obs, "times")?;
        let values = input_slice(values, n_obs.saturating_mul(n_channels), "values")?;
        let path = CubicSplinePath::from_knots(times, values, n_channels)?;
        *out = Box::into_raw(Box::new(PadSpline { path }));
        Ok(())
    })
}

/// # Safety
/// `spline` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pad_spline_n_channels(spline: *const PadSpline) -> usize {
    spline.as_ref().map_or(0, |s| s.path.n_channels())
}

unsafe fn spline_query(
    spline: *const PadSpline,
    t: f64,
    out: *mut f64,
    derivative: bool,
) -> PadStatus {
    guard(|| {
        let s = &*non_null(spline, "spline")?;
        let dst = output_slice(out, s.path.n_channels(), "out")?;
        let v = if derivative {
            s.path.eval_derivative(t)?
        } else {
            s.path.eval(t)?
        };
        dst.copy_from_slice(v.data());
        Ok(())
    })
}

/// Write `X(t)` (one value per channel) to `out`.
///
/// # Safety
/// `out` must have room for `pad_spline_n_channels(spline)` values.
#[no_mangle]
pub unsafe extern "C" fn pad_spline_eval(spline: *const PadSpline, t: f64, out: *mut f64) -> PadStatus {
    spline_query(spline, t, out, false)
}

/// Write `dX/dt` at `t` to `out`.
///
/// # Safety
/// `out` must have room for `pad_spline_n_channels(spline)` values.
#[no_mangle]
pub unsafe extern "C" fn pad_spline_derivative(spline: *const PadSpline, t: f64, out: *mut f64) -> PadStatus {
    spline_query(spline, t, out, true)
}

/// # Safety
/// `spline` must be null or a handle from [`pad_spline_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pad_spline_free(spline: *mut PadSpline) {
    if !spline.is_null() {
        drop(Box::from_raw(spline));
    }
}

/// Precision, recall, F1 and confusion counts of `n` scored windows.
/// A window is predicted positive when its probability is `>= threshold`.
///
/// # Safety
/// `probs` and `labels` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pad_metrics_evaluate(
    probs: *const f64,
    labels: *const u8,
    n: usize,
    threshold: f64,
    out: *mut PadMetrics,
) -> PadStatus {
    guard(|| {
        let probs = input_slice(probs, n, "probs")?;
        let labels = input_slice(labels, n, "labels")?;
        let dst = output_slice(out, 1, "out")?;
        let r = metrics::evaluate(metrics::Task::Anomaly, probs, labels, threshold)?;
        dst[0] = PadMetrics {
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            tp: r.counts.tp,
            fp: r.counts.fp,
            tn: r.counts.tn,
            fn_: r.counts.fn_,
        };
        Ok(())
    })
}
