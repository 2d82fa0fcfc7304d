//! C ABI over the growthrank toolkit.
//!
//! Every fallible call returns a [`GrStatus`]. On failure the message is kept
//! per thread and can be read with [`gr_last_error_message`]. Handles are
//! opaque and must be released with their matching `*_free` function.
//! Panics never cross the boundary; they surface as `GR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use growthrank::analytics;
use growthrank::checkpoint;
use growthrank::config::RunConfig;
use growthrank::dataset;
use growthrank::error::{Error, ErrorKind};
use growthrank::losses;
use growthrank::market_data::{self, Universe};
use growthrank::models::{self, Ensemble, Model};
use growthrank::pipeline;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Loaded price universe.
pub struct GrUniverse(Universe);

/// Single trained network.
pub struct GrModel(Model);

/// Trained ensemble with its combination state.
pub struct GrEnsemble(Ensemble);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: GrStatus, msg: impl Into<String>) -> GrStatus {
    set_error(msg);
    status
}

impl From<Error> for GrStatus {
    fn from(e: Error) -> Self {
        let status = match e.kind {
            ErrorKind::Config => GrStatus::Config,
            ErrorKind::Data => GrStatus::Data,
            ErrorKind::Numeric => GrStatus::Numeric,
        };
        fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), GrStatus>) -> GrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GrStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(GrStatus::Panic, "internal panic"),
    }
}

fn lift<T, E: Into<Error>>(r: Result<T, E>) -> Result<T, GrStatus> {
    r.map_err(|e| GrStatus::from(e.into()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), GrStatus> {
    if p.is_null() {
        Err(fail(GrStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, GrStatus> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(GrStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], GrStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], GrStatus> {
    if len < need {
        return Err(fail(GrStatus::BufferTooSmall, format!("output buffer holds {len}, need {need}")));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    non_null(p, "output buffer")?;
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn write_out<T>(p: *mut T, v: T) -> Result<(), GrStatus> {
    non_null(p, "output pointer")?;
    *p = v;
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn gr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gr_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr() as *const c_char
}

/// Return-weighted cross-entropy of one sample. `y_true` and `y_pred` hold 5 values each.
///
/// # Safety
/// `y_true` and `y_pred` must point to 5 readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_return_weighted_loss(y_true: *const f64, y_pred: *const f64, weight: f64, out: *mut f64) -> GrStatus {
    guard(|| {
        let t = slice_arg(y_true, 5, "y_true")?;
        let p = slice_arg(y_pred, 5, "y_pred")?;
        let v = lift(losses::return_weighted_loss(t, p, weight))?;
        write_out(out, v)
    })
}

/// Clipped cross-entropy between two 5-class distributions.
///
/// # Safety
/// `y_true` and `y_pred` must point to 5 readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_cross_entropy(y_true: *const f64, y_pred: *const f64, out: *mut f64) -> GrStatus {
    guard(|| {
        let t = slice_arg(y_true, 5, "y_true")?;
        let p = slice_arg(y_pred, 5, "y_pred")?;
        let v = lift(losses::cross_entropy(t, p))?;
        write_out(out, v)
    })
}

/// Ranking score of a 5-class distribution.
///
/// # Safety
/// `p` must point to 5 readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_score(p: *const f64, out: *mut f64) -> GrStatus {
    guard(|| {
        let p = slice_arg(p, 5, "p")?;
        write_out(out, models::score(p))
    })
}

/// Label index 0..=4 (strong sell .. strong buy) of a next-day return.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_assign_label(r: f64, out: *mut u32) -> GrStatus {
    guard(|| {
        let l = lift(dataset::assign_label(r))?;
        write_out(out, l.index() as u32)
    })
}

/// Sample weight `min(|r|, 0.5)`.
#[no_mangle]
pub extern "C" fn gr_cap_return(r: f64) -> f64 {
    dataset::cap_return(r)
}

/// Combination weights from trailing per-period returns.
/// `returns` is row-major `n_members × n_periods`; `n_periods` may be 0.
///
/// # Safety
/// `returns` must hold `n_members * n_periods` doubles; `out` must hold `out_len`.
#[no_mangle]
pub unsafe extern "C" fn gr_moe_weights(returns: *const f64, n_members: usize, n_periods: usize, out: *mut f64, out_len: usize) -> GrStatus {
    guard(|| {
        if n_members == 0 {
            return Err(fail(GrStatus::InvalidArgument, "no members"));
        }
        let r = slice_arg(returns, n_members * n_periods, "returns")?;
        let rows: Vec<Vec<f64>> = (0..n_members).map(|i| r[i * n_periods..(i + 1) * n_periods].to_vec()).collect();
        out_slice(out, out_len, n_members)?.copy_from_slice(&models::moe_weights(&rows));
        Ok(())
    })
}

/// Annualized return of a final value reached after `n_days` trading days.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_annualize_return(final_value: f64, n_days: usize, out: *mut f64) -> GrStatus {
    guard(|| write_out(out, lift(analytics::annualize_return(final_value, n_days))?))
}

/// Annualized Sharpe ratio. `rf_daily` may be null with `rf_len` 0 for a zero rate.
///
/// # Safety
/// Pointers must hold the stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_sharpe_ratio(returns: *const f64, len: usize, rf_daily: *const f64, rf_len: usize, out: *mut f64) -> GrStatus {
    guard(|| {
        let r = slice_arg(returns, len, "returns")?;
        let rf = slice_arg(rf_daily, rf_len, "rf_daily")?;
        write_out(out, lift(analytics::sharpe_ratio(r, rf))?)
    })
}

/// Maximum drawdown of a value series: depth (negative) and 0-based peak/trough indices.
///
/// # Safety
/// `values` must hold `len` doubles; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_max_drawdown(values: *const f64, len: usize, depth: *mut f64, peak: *mut usize, trough: *mut usize) -> GrStatus {
    guard(|| {
        let v = slice_arg(values, len, "values")?;
        let d = lift(analytics::max_drawdown(v))?;
        write_out(depth, d.depth)?;
        write_out(peak, d.peak)?;
        write_out(trough, d.trough)
    })
}

/// Paired two-sided t-test of `a` against `b`.
///
/// # Safety
/// `a` and `b` must hold `len` doubles; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_t_test_paired(a: *const f64, b: *const f64, len: usize, t: *mut f64, p: *mut f64) -> GrStatus {
    guard(|| {
        let a = slice_arg(a, len, "a")?;
        let b = slice_arg(b, len, "b")?;
        let r = lift(analytics::t_test_paired(a, b))?;
        write_out(t, r.t)?;
        write_out(p, r.p)
    })
}

/// Loads an OHLCV CSV and its sector map.
///
/// # Safety
/// Paths must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_universe_load(ohlcv: *const c_char, sectors: *const c_char, out: *mut *mut GrUniverse) -> GrStatus {
    guard(|| {
        let o = path_arg(ohlcv, "ohlcv")?;
        let s = path_arg(sectors, "sectors")?;
        non_null(out, "out")?;
        let u = lift(market_data::load_ohlcv(&o, &s))?;
        *out = Box::into_raw(Box::new(GrUniverse(u)));
        Ok(())
    })
}

/// # Safety
/// `u` must be null or a handle from [`gr_universe_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gr_universe_free(u: *mut GrUniverse) {
    if !u.is_null() {
        drop(Box::from_raw(u));
    }
}

/// # Safety
/// `u` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_universe_shape(u: *const GrUniverse, n_stocks: *mut usize, n_days: *mut usize) -> GrStatus {
    guard(|| {
        non_null(u, "universe")?;
        write_out(n_stocks, (*u).0.n_stocks())?;
        write_out(n_days, (*u).0.n_days())
    })
}

/// Next-day open-to-open return of stock `stock` anchored at `day`.
///
/// # Safety
/// `u` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_universe_daily_return(u: *const GrUniverse, stock: usize, day: usize, out: *mut f64) -> GrStatus {
    guard(|| {
        non_null(u, "universe")?;
        let u = &(*u).0;
        let s = u
            .stocks
            .get(stock)
            .ok_or_else(|| fail(GrStatus::InvalidArgument, format!("stock {stock} out of range")))?;
        write_out(out, lift(dataset::daily_return(s, day))?)
    })
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_model_load(path: *const c_char, out: *mut *mut GrModel) -> GrStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        non_null(out, "out")?;
        let m = lift(checkpoint::load_model(&p))?;
        *out = Box::into_raw(Box::new(GrModel(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from [`gr_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gr_model_free(m: *mut GrModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Window length, feature count and output width of a model.
///
/// # Safety
/// `m` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_model_shape(m: *const GrModel, window: *mut usize, features: *mut usize, outputs: *mut usize) -> GrStatus {
    guard(|| {
        non_null(m, "model")?;
        let a = &(*m).0.arch;
        write_out(window, a.m)?;
        write_out(features, a.n)?;
        write_out(outputs, a.loss.output_arity())
    })
}

fn predict_into(model: &Model, x: &[f64], sector: u8, out: *mut f64, out_len: usize) -> Result<(), GrStatus> {
    let a = &model.arch;
    if x.len() != a.m * a.n {
        return Err(fail(GrStatus::InvalidArgument, format!("window has {} values, expected {}", x.len(), a.m * a.n)));
    }
    let y = lift(models::predict(model, x, sector))?;
    unsafe { out_slice(out, out_len, y.len())? }.copy_from_slice(&y);
    Ok(())
}

/// Predicts one standardized window (`window × features`, row-major by day).
///
/// # Safety
/// `m` must be a live handle, `x` must hold `x_len` doubles and `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn gr_model_predict(m: *const GrModel, x: *const f64, x_len: usize, sector: u8, out: *mut f64, out_len: usize) -> GrStatus {
    guard(|| {
        non_null(m, "model")?;
        predict_into(&(*m).0, slice_arg(x, x_len, "x")?, sector, out, out_len)
    })
}

/// Loads an ensemble checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_ensemble_load(path: *const c_char, out: *mut *mut GrEnsemble) -> GrStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        non_null(out, "out")?;
        let e = lift(checkpoint::load_ensemble(&p))?;
        *out = Box::into_raw(Box::new(GrEnsemble(e)));
        Ok(())
    })
}

/// # Safety
/// `e` must be null or a handle from [`gr_ensemble_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gr_ensemble_free(e: *mut GrEnsemble) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// # Safety
/// `e` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_ensemble_len(e: *const GrEnsemble, out: *mut usize) -> GrStatus {
    guard(|| {
        non_null(e, "ensemble")?;
        write_out(out, (*e).0.members.len())
    })
}

/// Current member weights.
///
/// # Safety
/// `e` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gr_ensemble_weights(e: *const GrEnsemble, out: *mut f64, out_len: usize) -> GrStatus {
    guard(|| {
        non_null(e, "ensemble")?;
        let w = (*e).0.weights();
        out_slice(out, out_len, w.len())?.copy_from_slice(&w);
        Ok(())
    })
}

/// Appends one period return per member to the combination history.
///
/// # Safety
/// `e` must be a live handle; `returns` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gr_ensemble_record_returns(e: *mut GrEnsemble, returns: *const f64, len: usize) -> GrStatus {
    guard(|| {
        non_null(e, "ensemble")?;
        let r = slice_arg(returns, len, "returns")?;
        lift((*e).0.record_period_returns(r))
    })
}

/// Weighted prediction of one window across all members.
///
/// # Safety
/// `e` must be a live handle, `x` must hold `x_len` doubles and `out` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn gr_ensemble_predict(e: *const GrEnsemble, x: *const f64, x_len: usize, sector: u8, out: *mut f64, out_len: usize) -> GrStatus {
    guard(|| {
        non_null(e, "ensemble")?;
        let ens = &(*e).0;
        let x = slice_arg(x, x_len, "x")?;
        let first = &ens.members[0].arch;
        if x.len() != first.m * first.n {
            return Err(fail(GrStatus::InvalidArgument, format!("window has {} values, expected {}", x.len(), first.m * first.n)));
        }
        let outs = ens
            .members
            .iter()
            .map(|m| lift(models::predict(m, x, sector)).map(|y| vec![y]))
            .collect::<Result<Vec<_>, _>>()?;
        let y = ens.combine(&outs).remove(0);
        out_slice(out, out_len, y.len())?.copy_from_slice(&y);
        Ok(())
    })
}

/// Runs the full pipeline for a JSON config, writing artifacts under `out_dir`.
///
/// # Safety
/// Paths must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gr_run(config_path: *const c_char, out_dir: *const c_char) -> GrStatus {
    guard(|| {
        let c = path_arg(config_path, "config_path")?;
        let o = path_arg(out_dir, "out_dir")?;
        let cfg = lift(RunConfig::load(&c))?;
        lift(pipeline::run(&cfg, &o)).map(|_| ())
    })
}
