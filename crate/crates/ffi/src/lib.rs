//! C interface to the tsmixer engine.
//!
//! Every entry point returns a [`TsmStatus`]. On failure,
//! [`tsm_last_error_message`] describes what went wrong on the calling thread.
//! Models are opaque [`TsmModel`] handles created by [`tsm_model_load`] and
//! released with [`tsm_model_free`]. Numeric buffers are caller-owned,
//! row-major `double` arrays whose lengths are passed explicitly and must
//! match exactly.
//!
//! A loaded model is read-only, so one handle may serve concurrent
//! [`tsm_model_forecast`] calls from several threads.

use std::any::Any;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use tsmixer::data::synth;
use tsmixer::metrics::rmsse;
use tsmixer::models::{theory, Checkpoint, Forecast, Head};
use tsmixer::rng::SeededRng;
use tsmixer::{Error, Tensor};

/// Result code of every `tsm_*` call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A length, string, or scalar argument was out of range.
    InvalidArgument = 2,
    /// Invalid configuration or incompatible model inputs.
    Config = 3,
    /// Filesystem failure.
    Io = 4,
    /// Malformed checkpoint, CSV, or schema.
    Format = 5,
    /// Tensor shape mismatch inside the engine.
    Shape = 6,
    /// Non-finite values or out-of-domain parameters.
    Numeric = 7,
    /// A metric is undefined for the given series.
    Metric = 8,
    /// Internal invariant violated.
    Internal = 9,
    /// A Rust panic was caught at the boundary.
    Panic = 10,
}

/// Shapes a loaded model expects and produces.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TsmModelInfo {
    pub lookback: usize,
    pub horizon: usize,
    pub targets: usize,
    /// Columns per history row: targets then historical covariates.
    pub history_width: usize,
    /// Columns per future-covariate row; 0 when unused.
    pub future_width: usize,
    /// Number of static values; 0 when unused.
    pub static_width: usize,
    /// Columns per forecast row: `targets`, or `2 * targets` with the
    /// negative binomial head (mean then dispersion for each target).
    pub output_width: usize,
    pub negative_binomial: bool,
}

/// Opaque handle to a loaded checkpoint.
pub struct TsmModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(TsmStatus, String);

impl Failure {
    fn new(status: TsmStatus, message: impl Into<String>) -> Self {
        Self(status, message.into())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension { .. } | Error::Rank { .. } | Error::Shape { .. } => TsmStatus::Shape,
            Error::Parameter { .. } | Error::Config { .. } | Error::Hierarchy(_) => TsmStatus::Config,
            Error::Precondition(_) => TsmStatus::InvalidArgument,
            Error::Parse { .. } | Error::Schema(_) | Error::Container(_) => TsmStatus::Format,
            Error::Io { .. } => TsmStatus::Io,
            Error::Numeric(_) | Error::Domain(_) => TsmStatus::Numeric,
            Error::Metric { .. } => TsmStatus::Metric,
            Error::Contract(_) | Error::State(_) => TsmStatus::Internal,
        };
        Self(status, e.to_string())
    }
}

fn panic_message(payload: &(dyn Any + Send)) -> &str {
    payload
        .downcast_ref::<&str>()
        .copied()
        .or_else(|| payload.downcast_ref::<String>().map(String::as_str))
        .unwrap_or("unknown panic payload")
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TsmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            TsmStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            set_last_error(&format!("panic: {}", panic_message(payload.as_ref())));
            TsmStatus::Panic
        }
    }
}

unsafe fn input<'a>(ptr: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::new(TsmStatus::NullPointer, format!("`{name}` is null")));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(ptr: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(Failure::new(TsmStatus::NullPointer, format!("`{name}` is null")));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

unsafe fn write<T>(ptr: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        return Err(Failure::new(TsmStatus::NullPointer, format!("`{name}` is null")));
    }
    ptr.write(value);
    Ok(())
}

unsafe fn model_ref<'a>(model: *const TsmModel) -> Result<&'a TsmModel, Failure> {
    model
        .as_ref()
        .ok_or_else(|| Failure::new(TsmStatus::NullPointer, "`model` is null"))
}

fn expect_len(name: &str, got: usize, expected: usize) -> Result<(), Failure> {
    if got != expected {
        return Err(Failure::new(
            TsmStatus::InvalidArgument,
            format!("`{name}` has {got} values, expected {expected}"),
        ));
    }
    Ok(())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn tsm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent call on this thread; empty after a success.
/// The pointer stays valid until the next `tsm_*` call on the same thread.
#[no_mangle]
pub extern "C" fn tsm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads the checkpoint directory `dir` (as written by `tsmixer train`) and
/// stores a new handle in `*out`.
///
/// # Safety
/// `dir` must be a nul-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tsm_model_load(dir: *const c_char, out: *mut *mut TsmModel) -> TsmStatus {
    guard(|| {
        if dir.is_null() {
            return Err(Failure::new(TsmStatus::NullPointer, "`dir` is null"));
        }
        if out.is_null() {
            return Err(Failure::new(TsmStatus::NullPointer, "`out` is null"));
        }
        let dir = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| Failure::new(TsmStatus::InvalidArgument, "`dir` is not valid UTF-8"))?;
        let checkpoint = Checkpoint::load(Path::new(dir))?;
        out.write(Box::into_raw(Box::new(TsmModel { checkpoint })));
        Ok(())
    })
}

/// Releases a handle from [`tsm_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tsm_model_free(model: *mut TsmModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// Writes the model's input and output shapes to `*out`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tsm_model_info(model: *const TsmModel, out: *mut TsmModelInfo) -> TsmStatus {
    guard(|| {
        let cfg = model_ref(model)?.checkpoint.model.config();
        let nb = cfg.head == Head::NegativeBinomial;
        let info = TsmModelInfo {
            lookback: cfg.lookback,
            horizon: cfg.horizon,
            targets: cfg.targets,
            history_width: cfg.history_width(),
            future_width: cfg.future,
            static_width: cfg.statics,
            output_width: if nb { 2 * cfg.targets } else { cfg.targets },
            negative_binomial: nb,
        };
        write(out, info, "out")
    })
}

/// Forecasts one horizon from inputs in original units.
///
/// `history` is `lookback x history_width`, `future` is
/// `horizon x future_width` (may be null when that width is 0), `statics`
/// holds `static_width` values (may be null when 0), and `out` receives
/// `horizon x output_width` values. All lengths count `double`s.
///
/// # Safety
/// Each non-null pointer must reference at least its stated length.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn tsm_model_forecast(
    model: *const TsmModel,
    history: *const f64,
    history_len: usize,
    future: *const f64,
    future_len: usize,
    statics: *const f64,
    statics_len: usize,
    out: *mut f64,
    out_len: usize,
) -> TsmStatus {
    guard(|| {
        let ckpt = &model_ref(model)?.checkpoint;
        let cfg = ckpt.model.config();
        let (l, t, hw) = (cfg.lookback, cfg.horizon, cfg.history_width());
        expect_len("history", history_len, l * hw)?;
        expect_len("future", future_len, t * cfg.future)?;
        expect_len("statics", statics_len, cfg.statics)?;
        let width = if cfg.head == Head::NegativeBinomial {
            2 * cfg.targets
        } else {
            cfg.targets
        };
        expect_len("out", out_len, t * width)?;

        let history = Tensor::new(&[l, hw], input(history, history_len, "history")?.to_vec())?;
        let future = match cfg.future {
            0 => None,
            cz => Some(Tensor::new(&[t, cz], input(future, future_len, "future")?.to_vec())?),
        };
        let statics = input(statics, statics_len, "statics")?;
        let forecast = ckpt.forecast(&history, future.as_ref(), (cfg.statics > 0).then_some(statics))?;
        let dest = output(out, out_len, "out")?;
        match forecast {
            Forecast::Point(y) => dest.copy_from_slice(y.data()),
            Forecast::NegBin { mu, alpha } => {
                for (k, (m, a)) in mu.data().iter().zip(alpha.data()).enumerate() {
                    dest[2 * k] = *m;
                    dest[2 * k + 1] = *a;
                }
            }
        }
        if !dest.iter().all(|v| v.is_finite()) {
            return Err(Failure::new(TsmStatus::Numeric, "forecast contains non-finite values"));
        }
        Ok(())
    })
}

/// Root mean squared scaled error of `forecast` against `actual` (both
/// `len` values), scaled by the one-step differences of `history`.
///
/// # Safety
/// Pointers must reference at least their stated lengths; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tsm_rmsse(
    forecast: *const f64,
    actual: *const f64,
    len: usize,
    history: *const f64,
    history_len: usize,
    out: *mut f64,
) -> TsmStatus {
    guard(|| {
        let f = input(forecast, len, "forecast")?;
        let a = input(actual, len, "actual")?;
        let h = input(history, history_len, "history")?;
        let value = rmsse(f, a, h, "series")?;
        write(out, value, "out")
    })
}

/// Runs the closed-form linear forecaster checks on `trials` random series
/// per check and writes whether every bound held to `*passed`.
///
/// # Safety
/// `passed` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tsm_verify_theory(
    period: usize,
    lookback: usize,
    horizon: usize,
    lipschitz: f64,
    trials: usize,
    seed: u64,
    passed: *mut bool,
) -> TsmStatus {
    guard(|| {
        let report = theory::verify_theory(&theory::TheoryOptions {
            period,
            lookback,
            horizon,
            lipschitz,
            trials,
            seed,
            corrupt: false,
        })?;
        write(passed, report.passed(), "passed")
    })
}

/// Fills `out` with `len` steps of a seeded random-phase series of the given
/// period and amplitude.
///
/// # Safety
/// `out` must reference at least `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tsm_synth_periodic(
    period: usize,
    amplitude: f64,
    seed: u64,
    out: *mut f64,
    len: usize,
) -> TsmStatus {
    guard(|| {
        if period == 0 {
            return Err(Failure::new(TsmStatus::InvalidArgument, "`period` must be at least 1"));
        }
        if !amplitude.is_finite() {
            return Err(Failure::new(TsmStatus::InvalidArgument, "`amplitude` must be finite"));
        }
        let dest = output(out, len, "out")?;
        let values = synth::periodic_values(period, len, amplitude, &mut SeededRng::new(seed));
        dest.copy_from_slice(&values);
        Ok(())
    })
}
