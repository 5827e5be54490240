//! C ABI over `airfl-core`.
//!
//! Every function returns an [`AirflStatus`]. On failure the message is kept
//! per thread and can be copied out with [`airfl_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use airfl_core::beamform;
use airfl_core::channel::{ChannelRealization, ComplexMatrix};
use airfl_core::config::SystemConfig;
use airfl_core::experiment::{self, ExperimentResult, TrialRecord};
use airfl_core::privacy;
use num_complex::Complex64;

/// Status codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AirflStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid parameter or configuration.
    Config = 2,
    /// Power constraint or channel alignment cannot be met.
    Infeasible = 3,
    /// Singular system or violated internal invariant.
    Numerical = 4,
    Io = 5,
    InvalidUtf8 = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Per-round quantity selector for [`airfl_result_metric`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AirflMetric {
    TrainLoss = 0,
    GradNormSq = 1,
    ClipFraction = 2,
    Mse = 3,
    LambdaT = 4,
    WNorm = 5,
    PhiT = 6,
    DpEps = 7,
}

/// Opaque simulation configuration.
pub struct AirflConfig(SystemConfig);

/// Opaque experiment outcome.
pub struct AirflResult(ExperimentResult);

struct Failure(AirflStatus, String);

impl From<airfl_core::Error> for Failure {
    fn from(e: airfl_core::Error) -> Self {
        use airfl_core::Error as E;
        let status = match e {
            E::Parameter(_) | E::Config(_) | E::InconsistentCDelta { .. } => AirflStatus::Config,
            E::DegenerateChannel { .. } | E::PowerInfeasible { .. } => AirflStatus::Infeasible,
            E::Singular { .. } | E::Invariant(_) => AirflStatus::Numerical,
            E::Io(_) | E::Csv(_) => AirflStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AirflStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (AirflStatus::Ok, String::new()),
        Ok(Err(Failure(status, msg))) => (status, msg),
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            (AirflStatus::Panic, msg)
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

fn null() -> Failure {
    Failure(AirflStatus::NullPointer, "null pointer argument".into())
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure(AirflStatus::Config, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(AirflStatus::InvalidUtf8, e.to_string()))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null()),
        (false, _) => Ok(std::slice::from_raw_parts(p, len)),
    }
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize) -> Result<&'a mut [T], Failure> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&mut []),
        (true, _) => Err(null()),
        (false, _) => Ok(std::slice::from_raw_parts_mut(p, len)),
    }
}

unsafe fn write_out<T>(p: *mut T, value: T) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null());
    }
    p.write(value);
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

fn interleaved(values: &[f64]) -> Vec<Complex64> {
    values.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

/// Length in bytes of the last error message on this thread, excluding the
/// terminating NUL.
#[no_mangle]
pub extern "C" fn airfl_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copies the last error message into `buf` (NUL-terminated, truncated to
/// `len - 1` bytes). Returns the number of bytes written excluding the NUL.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn airfl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let n = msg.len().min(len - 1);
        std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
        buf.add(n).write(0);
        n
    })
}

/// Allocates a configuration holding the defaults.
#[no_mangle]
pub extern "C" fn airfl_config_default() -> *mut AirflConfig {
    Box::into_raw(Box::new(AirflConfig(SystemConfig::default())))
}

/// Parses a TOML configuration document.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn airfl_config_from_toml(toml: *const c_char, out: *mut *mut AirflConfig) -> AirflStatus {
    guard(|| {
        let cfg = SystemConfig::from_toml_str(str_arg(toml)?)?;
        write_out(out, Box::into_raw(Box::new(AirflConfig(cfg))))
    })
}

/// Loads a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn airfl_config_load(path: *const c_char, out: *mut *mut AirflConfig) -> AirflStatus {
    guard(|| {
        let cfg = SystemConfig::load(Path::new(str_arg(path)?))?;
        write_out(out, Box::into_raw(Box::new(AirflConfig(cfg))))
    })
}

/// Sets one field from a TOML value literal, e.g. `("snr", "1e3")` or
/// `("scheme", "\"clip\"")`. The configuration is left unchanged on error.
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn airfl_config_set(
    cfg: *mut AirflConfig,
    key: *const c_char,
    value: *const c_char,
) -> AirflStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(null)?;
        let (key, value) = (str_arg(key)?, str_arg(value)?);
        let mut table: toml::Table =
            cfg.0.to_toml_string()?.parse().map_err(|e: toml::de::Error| config_error(e.to_string()))?;
        let parsed: toml::Table =
            format!("v = {value}").parse().map_err(|e: toml::de::Error| config_error(format!("{key}: {e}")))?;
        table.insert(key.to_owned(), parsed["v"].clone());
        let next = SystemConfig::from_toml_str(&table.to_string())?;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn airfl_config_free(cfg: *mut AirflConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs every trial of the configured experiment.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn airfl_run_experiment(cfg: *const AirflConfig, out: *mut *mut AirflResult) -> AirflStatus {
    guard(|| {
        let cfg = handle(cfg)?;
        cfg.0.validate()?;
        let result = experiment::run_experiment(&cfg.0)?;
        write_out(out, Box::into_raw(Box::new(AirflResult(result))))
    })
}

/// Number of trials in a result.
///
/// # Safety
/// `res` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn airfl_result_trials(res: *const AirflResult) -> usize {
    res.as_ref().map_or(0, |r| r.0.trials.len())
}

/// Number of recorded rounds in trial `trial`, or 0 if it does not exist.
///
/// # Safety
/// `res` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn airfl_result_rounds(res: *const AirflResult, trial: usize) -> usize {
    res.as_ref().and_then(|r| r.0.trials.get(trial)).map_or(0, |t| t.metrics.len())
}

/// Reads one per-round metric; `round` is zero-based.
///
/// # Safety
/// `res` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn airfl_result_metric(
    res: *const AirflResult,
    trial: usize,
    round: usize,
    metric: AirflMetric,
    out: *mut f64,
) -> AirflStatus {
    guard(|| {
        let m = handle(res)?
            .0
            .trials
            .get(trial)
            .and_then(|t| t.metrics.get(round))
            .ok_or_else(|| config_error(format!("no round {round} in trial {trial}")))?;
        let value = match metric {
            AirflMetric::TrainLoss => m.train_loss,
            AirflMetric::GradNormSq => m.grad_norm_sq,
            AirflMetric::ClipFraction => m.clip_fraction,
            AirflMetric::Mse => m.mse,
            AirflMetric::LambdaT => m.lambda_t,
            AirflMetric::WNorm => m.w_norm,
            AirflMetric::PhiT => m.phi_t,
            AirflMetric::DpEps => m.dp_eps,
        };
        write_out(out, value)
    })
}

/// Mean and standard error of the final training loss across trials.
///
/// # Safety
/// `res` must be a live handle; `mean` and `stderr` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn airfl_result_final_loss(
    res: *const AirflResult,
    mean: *mut f64,
    stderr: *mut f64,
) -> AirflStatus {
    guard(|| {
        let losses: Vec<f64> = handle(res)?.0.trials.iter().map(TrialRecord::final_loss).collect();
        let (m, s) = experiment::mean_stderr(&losses);
        write_out(mean, m)?;
        write_out(stderr, s)
    })
}

/// Writes `rounds.csv` and `summary.csv` into `dir`, creating it if needed.
///
/// # Safety
/// `res` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn airfl_result_write_csv(res: *const AirflResult, dir: *const c_char) -> AirflStatus {
    guard(|| {
        let res = handle(res)?;
        experiment::emit_plotdata(&res.0.trials, Path::new(str_arg(dir)?))?;
        Ok(())
    })
}

/// Releases a result. Null is ignored.
///
/// # Safety
/// `res` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn airfl_result_free(res: *mut AirflResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Zero-forcing combiner for `k` channel vectors of length `m`.
///
/// `h` holds the `m x k` channel matrix column-major with real and imaginary
/// parts interleaved (`2mk` doubles); `w_out` receives `2m` doubles.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn airfl_zf_combiner(
    h: *const f64,
    m: usize,
    k: usize,
    clip: f64,
    dim: usize,
    power: f64,
    w_out: *mut f64,
) -> AirflStatus {
    guard(|| {
        let entries = interleaved(slice_arg(h, 2 * m * k)?);
        let channel = ChannelRealization {
            round: 0,
            devices: (0..k).collect(),
            h: ComplexMatrix::from_column_slice(m, k, &entries)?,
            path_loss: vec![1.0; k],
            distances: vec![1.0; k],
        };
        let zf = beamform::zf_combiner(&channel, clip, dim, power, None)?;
        let out = slice_out(w_out, 2 * m)?;
        for (pair, w) in out.chunks_exact_mut(2).zip(&zf.w_zf) {
            pair[0] = w.re;
            pair[1] = w.im;
        }
        Ok(())
    })
}

/// Budget `A` on `Σ 1/‖w_t‖²` for a target `(ε, δ)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn airfl_privacy_budget_a(
    epsilon: f64,
    delta: f64,
    c_delta: f64,
    r: f64,
    clip: f64,
    sigma2: f64,
    out: *mut f64,
) -> AirflStatus {
    guard(|| write_out(out, beamform::privacy_budget_a(epsilon, delta, c_delta, r, clip, sigma2)?.a))
}

/// Minimum-norm allocation `q_t ≥ π_t` with `Σ 1/q_t² ≤ a`.
///
/// # Safety
/// `pi` and `q_out` must reference `len` doubles; `scaled` and `mu_star`
/// must be valid pointers or null.
#[no_mangle]
pub unsafe extern "C" fn airfl_solve_allocation(
    pi: *const f64,
    len: usize,
    a: f64,
    q_out: *mut f64,
    scaled: *mut bool,
    mu_star: *mut f64,
) -> AirflStatus {
    guard(|| {
        let sol = beamform::solve_allocation(slice_arg(pi, len)?, a)?;
        slice_out(q_out, len)?.copy_from_slice(&sol.q);
        if !scaled.is_null() {
            scaled.write(sol.scaled);
        }
        if !mu_star.is_null() {
            mu_star.write(sol.mu_star);
        }
        Ok(())
    })
}

/// `(ε, δ)` guarantee for an accumulated cost `min(Σφ, Φ)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn airfl_dp_epsilon(
    min_term: f64,
    delta: f64,
    c_delta: f64,
    r: f64,
    clip: f64,
    sigma2: f64,
    out: *mut f64,
) -> AirflStatus {
    guard(|| write_out(out, privacy::dp_epsilon(min_term, delta, c_delta, r, clip, sigma2)?))
}

/// Smallest admissible `c_δ` for an accumulated cost.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn airfl_resolve_c_delta(
    min_term: f64,
    delta: f64,
    r: f64,
    clip: f64,
    sigma2: f64,
    out: *mut f64,
) -> AirflStatus {
    guard(|| write_out(out, privacy::resolve_c_delta(min_term, delta, r, clip, sigma2)?))
}

/// Converts an order-`alpha` Rényi guarantee to `(ε, δ)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn airfl_rdp_to_dp(alpha: f64, rdp_eps: f64, delta: f64, out: *mut f64) -> AirflStatus {
    guard(|| write_out(out, privacy::rdp_to_dp(alpha, rdp_eps, delta)?))
}
