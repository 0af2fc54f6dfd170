//! C interface to sqlshaper.
//!
//! Every function returns an [`SqlsStatus`]; on failure the message is
//! available from [`sqls_last_error`] on the same thread. Strings handed
//! out by the library must be released with [`sqls_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sqlshaper::config::RunConfig;
use sqlshaper::distribution::{wasserstein, CostHistogram, CostIntervals};
use sqlshaper::model::{instantiate, Bindings, SqlTemplate};
use sqlshaper::pipeline::{run_generate, GenerateOptions};
use sqlshaper::profiler::ProfileRecord;
use sqlshaper::refinery::closeness;
use sqlshaper::search::objective;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqlsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    EnvironmentError = 4,
    InternalError = 5,
    Panic = 6,
}

/// Cost histogram over uniform intervals. Opaque to C.
pub struct SqlsHistogram {
    inner: CostHistogram,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

struct Failure(SqlsStatus, String);

fn fail<T>(status: SqlsStatus, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, message.into()))
}

/// Runs `f`, recording its error message and turning panics into
/// [`SqlsStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SqlsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SqlsStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {message}"));
            SqlsStatus::Panic
        }
    }
}

unsafe fn text<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return fail(SqlsStatus::NullArgument, format!("{name} is null"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .or_else(|_| fail(SqlsStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

fn out_string(s: String, out: *mut *mut c_char) -> Result<(), Failure> {
    let c = CString::new(s).or_else(|_| fail(SqlsStatus::InternalError, "string contains a NUL byte"))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn sqls_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sqls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sqls_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates an empty histogram of `bins` equal intervals over `[min, max)`.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn sqls_histogram_new(min: f64, max: f64, bins: usize, out: *mut *mut SqlsHistogram) -> SqlsStatus {
    guard(|| {
        if out.is_null() {
            return fail(SqlsStatus::NullArgument, "out is null");
        }
        let intervals =
            CostIntervals::uniform(min, max, bins).or_else(|e| fail(SqlsStatus::InvalidArgument, e.to_string()))?;
        let handle = Box::new(SqlsHistogram { inner: CostHistogram::empty(intervals) });
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from [`sqls_histogram_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sqls_histogram_free(h: *mut SqlsHistogram) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of intervals, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sqls_histogram_len(h: *const SqlsHistogram) -> usize {
    h.as_ref().map_or(0, |h| h.inner.counts.len())
}

/// Adds one cost. Costs outside the range are rejected with
/// `SQLS_STATUS_INVALID_ARGUMENT`.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sqls_histogram_add(h: *mut SqlsHistogram, cost: f64) -> SqlsStatus {
    guard(|| {
        let h = h.as_mut().ok_or(Failure(SqlsStatus::NullArgument, "histogram is null".into()))?;
        match h.inner.add(cost) {
            Some(_) => Ok(()),
            None => fail(SqlsStatus::InvalidArgument, format!("cost {cost} is outside the histogram range")),
        }
    })
}

/// Replaces all counts; `len` must equal the number of intervals.
///
/// # Safety
/// `h` must be a live handle and `counts` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn sqls_histogram_set_counts(h: *mut SqlsHistogram, counts: *const u64, len: usize) -> SqlsStatus {
    guard(|| {
        let h = h.as_mut().ok_or(Failure(SqlsStatus::NullArgument, "histogram is null".into()))?;
        if counts.is_null() {
            return fail(SqlsStatus::NullArgument, "counts is null");
        }
        if len != h.inner.counts.len() {
            return fail(SqlsStatus::InvalidArgument, format!("{len} counts for {} intervals", h.inner.counts.len()));
        }
        h.inner.counts.copy_from_slice(std::slice::from_raw_parts(counts, len));
        Ok(())
    })
}

/// Copies the counts into `out`, which must hold `len` values.
///
/// # Safety
/// `h` must be a live handle and `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn sqls_histogram_counts(h: *const SqlsHistogram, out: *mut u64, len: usize) -> SqlsStatus {
    guard(|| {
        let h = h.as_ref().ok_or(Failure(SqlsStatus::NullArgument, "histogram is null".into()))?;
        if out.is_null() {
            return fail(SqlsStatus::NullArgument, "out is null");
        }
        if len != h.inner.counts.len() {
            return fail(SqlsStatus::InvalidArgument, format!("buffer of {len} for {} intervals", h.inner.counts.len()));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&h.inner.counts);
        Ok(())
    })
}

/// Earth mover's distance between two histograms with the same intervals.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sqls_wasserstein(a: *const SqlsHistogram, b: *const SqlsHistogram, out: *mut f64) -> SqlsStatus {
    guard(|| {
        let (Some(a), Some(b)) = (a.as_ref(), b.as_ref()) else {
            return fail(SqlsStatus::NullArgument, "histogram is null");
        };
        if out.is_null() {
            return fail(SqlsStatus::NullArgument, "out is null");
        }
        *out = wasserstein(&a.inner, &b.inner).or_else(|e| fail(SqlsStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Search objective of cost `c` for the interval `[lo, hi]`: 0 inside,
/// approaching 1 far away.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sqls_objective(c: f64, lo: f64, hi: f64, out: *mut f64) -> SqlsStatus {
    guard(|| {
        if out.is_null() {
            return fail(SqlsStatus::NullArgument, "out is null");
        }
        if !(lo >= 0.0 && lo <= hi && c >= 0.0) {
            return fail(SqlsStatus::InvalidArgument, "need 0 <= lo <= hi and c >= 0");
        }
        *out = objective(c, lo, hi);
        Ok(())
    })
}

/// Closeness of a template with observed `costs` to the interval `[lo, hi]`.
///
/// # Safety
/// `costs` must point to `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sqls_closeness(costs: *const f64, len: usize, lo: f64, hi: f64, out: *mut f64) -> SqlsStatus {
    guard(|| {
        if costs.is_null() || out.is_null() {
            return fail(SqlsStatus::NullArgument, "costs or out is null");
        }
        let record = ProfileRecord::from_costs("ffi", std::slice::from_raw_parts(costs, len).to_vec());
        *out = closeness(&record, (lo, hi)).or_else(|e| fail(SqlsStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Instantiates a template given as JSON with bindings given as a JSON
/// object of placeholder name to value (e.g. `{"p_1": {"int": 5}}`).
///
/// # Safety
/// Both inputs must be NUL-terminated strings; `out_sql` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sqls_instantiate(
    template_json: *const c_char,
    bindings_json: *const c_char,
    out_sql: *mut *mut c_char,
) -> SqlsStatus {
    guard(|| {
        let template_text = text(template_json, "template_json")?;
        let bindings_text = text(bindings_json, "bindings_json")?;
        if out_sql.is_null() {
            return fail(SqlsStatus::NullArgument, "out_sql is null");
        }
        let template: SqlTemplate = serde_json::from_str(template_text)
            .or_else(|e| fail(SqlsStatus::InvalidArgument, format!("template: {e}")))?;
        template.validate().or_else(|e| fail(SqlsStatus::InvalidArgument, e.to_string()))?;
        let bindings: Bindings = serde_json::from_str(bindings_text)
            .or_else(|e| fail(SqlsStatus::InvalidArgument, format!("bindings: {e}")))?;
        let query = instantiate(&template, &bindings).or_else(|e| fail(SqlsStatus::InvalidArgument, e.to_string()))?;
        out_string(query.sql_text, out_sql)
    })
}

/// Runs the full pipeline for a config file and writes the workload to
/// `out_dir`. On success `out_manifest` receives the manifest as JSON.
///
/// # Safety
/// Both paths must be NUL-terminated strings; `out_manifest` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sqls_generate(
    config_path: *const c_char,
    out_dir: *const c_char,
    out_manifest: *mut *mut c_char,
) -> SqlsStatus {
    guard(|| {
        let config_path = text(config_path, "config_path")?;
        let out_dir = text(out_dir, "out_dir")?;
        if out_manifest.is_null() {
            return fail(SqlsStatus::NullArgument, "out_manifest is null");
        }
        let config = RunConfig::load(Path::new(config_path)).or_else(|e| fail(SqlsStatus::ConfigError, e.to_string()))?;
        let manifest = run_generate(&config, Path::new(out_dir), GenerateOptions::default()).or_else(|e| {
            let status = match e.exit_code() {
                1 => SqlsStatus::ConfigError,
                2 => SqlsStatus::EnvironmentError,
                _ => SqlsStatus::InternalError,
            };
            fail(status, e.to_string())
        })?;
        let json = serde_json::to_string(&manifest).or_else(|e| fail(SqlsStatus::InternalError, e.to_string()))?;
        out_string(json, out_manifest)
    })
}
