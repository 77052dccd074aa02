//! C interface. Datasets and imputation results are opaque handles owned by
//! the caller and released with the matching `_free` function. Every call
//! returns an [`OrdStatus`]; on failure `ordimpute_last_error` describes the
//! cause. Cell values are column-major `uint8_t` levels with 0 for missing.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ordimpute::bench::{MethodKind, MethodSpec, Profile, Scale};
use ordimpute::data::{ImputationResult, IncompleteDataset, VariableSpec};
use ordimpute::error::Error;
use ordimpute::inference;
use ordimpute::missingness::inject_mcar;

/// Result codes. The first four match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrdStatus {
    Ok = 0,
    ConfigError = 1,
    DataError = 2,
    NumericalError = 3,
    NullPointer = 4,
    Panic = 5,
}

/// An ordinal dataset, possibly with missing cells.
pub struct OrdDataset {
    inner: IncompleteDataset,
}

/// The completed datasets from one imputation run.
pub struct OrdImputation {
    inner: ImputationResult,
}

/// Rubin's-rules summary of `L` completed-data estimates.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OrdPooled {
    pub q_bar: f64,
    pub between: f64,
    pub within: f64,
    pub total: f64,
    pub dof: f64,
    pub lower: f64,
    pub upper: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> OrdStatus {
    match err.exit_code() {
        1 => OrdStatus::ConfigError,
        3 => OrdStatus::NumericalError,
        _ => OrdStatus::DataError,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), OrdStatus>) -> OrdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OrdStatus::Ok,
        Ok(Err(s)) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            OrdStatus::Panic
        }
    }
}

fn fail(err: Error) -> OrdStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn null(what: &str) -> OrdStatus {
    set_error(format!("{what} is null"));
    OrdStatus::NullPointer
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn ordimpute_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ordimpute_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from `n * p` column-major levels. `cardinalities` has
/// `p` entries; variables are named `V1`, `V2`, ... On success `*out` holds
/// a new handle.
///
/// # Safety
/// `cardinalities` must point to `p` values and `values` to `n * p` values;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ordimpute_dataset_new(
    n: usize,
    p: usize,
    cardinalities: *const usize,
    values: *const u8,
    out: *mut *mut OrdDataset,
) -> OrdStatus {
    guard(|| {
        if cardinalities.is_null() {
            return Err(null("cardinalities"));
        }
        if values.is_null() {
            return Err(null("values"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n.checked_mul(p).ok_or_else(|| fail(Error::InvalidArgument("n * p overflows".into())))?;
        // SAFETY: the caller guarantees the lengths.
        let cards = unsafe { std::slice::from_raw_parts(cardinalities, p) };
        let cells = unsafe { std::slice::from_raw_parts(values, len) };
        let vars = cards
            .iter()
            .enumerate()
            .map(|(j, &d)| VariableSpec::new(format!("V{}", j + 1), d))
            .collect::<Result<Vec<_>, _>>()
            .map_err(fail)?;
        let columns = cells.chunks(n.max(1)).take(p).map(<[u8]>::to_vec).collect();
        let inner = IncompleteDataset::from_columns(vars, columns).map_err(fail)?;
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = Box::into_raw(Box::new(OrdDataset { inner })) };
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ordimpute_dataset_free(dataset: *mut OrdDataset) {
    if !dataset.is_null() {
        // SAFETY: the handle came from `Box::into_raw`.
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Writes the row and variable counts.
///
/// # Safety
/// `dataset` must be a live handle; `n` and `p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ordimpute_dataset_dims(dataset: *const OrdDataset, n: *mut usize, p: *mut usize) -> OrdStatus {
    guard(|| {
        // SAFETY: checked for null; the caller guarantees liveness.
        let d = unsafe { dataset.as_ref() }.ok_or_else(|| null("dataset"))?;
        if n.is_null() || p.is_null() {
            return Err(null("n or p"));
        }
        unsafe {
            *n = d.inner.n();
            *p = d.inner.p();
        }
        Ok(())
    })
}

/// Number of missing cells.
///
/// # Safety
/// `dataset` must be a live handle; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ordimpute_dataset_missing(dataset: *const OrdDataset, count: *mut usize) -> OrdStatus {
    guard(|| {
        let d = unsafe { dataset.as_ref() }.ok_or_else(|| null("dataset"))?;
        if count.is_null() {
            return Err(null("count"));
        }
        unsafe { *count = d.inner.mask().total_missing() };
        Ok(())
    })
}

/// Masks each cell of variable `j` independently with probability
/// `rates[j]`, returning a new dataset. The source must be complete.
///
/// # Safety
/// `dataset` must be a live handle, `rates` must point to `p` values and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ordimpute_inject_mcar(
    dataset: *const OrdDataset,
    rates: *const f64,
    seed: u64,
    out: *mut *mut OrdDataset,
) -> OrdStatus {
    guard(|| {
        let d = unsafe { dataset.as_ref() }.ok_or_else(|| null("dataset"))?;
        if rates.is_null() {
            return Err(null("rates"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if !d.inner.mask().is_empty() {
            return Err(fail(Error::Data("source dataset has missing cells".into())));
        }
        let rates = unsafe { std::slice::from_raw_parts(rates, d.inner.p()) };
        let targets: Vec<(usize, f64)> = rates.iter().copied().enumerate().filter(|&(_, r)| r > 0.0).collect();
        let inner = inject_mcar(d.inner.data(), &targets, seed).map_err(fail)?;
        unsafe { *out = Box::into_raw(Box::new(OrdDataset { inner })) };
        Ok(())
    })
}

/// Imputes with the named method (`cart`, `forest`, `missforest`,
/// `multireg`, `polr`, `dpmpm`, `dpmmvn` or `gain`) into `imputations`
/// completed datasets. `iterations` and `burn_in` set MICE sweeps or MCMC
/// lengths; pass 0 for the defaults.
///
/// # Safety
/// `dataset` must be a live handle, `method` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ordimpute_impute(
    dataset: *const OrdDataset,
    method: *const c_char,
    imputations: usize,
    iterations: usize,
    burn_in: usize,
    seed: u64,
    out: *mut *mut OrdImputation,
) -> OrdStatus {
    guard(|| {
        let d = unsafe { dataset.as_ref() }.ok_or_else(|| null("dataset"))?;
        if method.is_null() {
            return Err(null("method"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let name = unsafe { CStr::from_ptr(method) }
            .to_str()
            .map_err(|_| fail(Error::Config("method name is not UTF-8".into())))?;
        let mut spec = MethodSpec::new(MethodKind::parse(name).map_err(fail)?);
        spec.iterations = (iterations > 0).then_some(iterations);
        spec.burn_in = (burn_in > 0).then_some(burn_in);
        let scale = Scale {
            imputations,
            ..Profile::Desk.scale()
        };
        spec.validate(d.inner.p(), &scale).map_err(fail)?;
        let inner = spec.run(&d.inner, imputations, &scale, seed).map_err(fail)?;
        unsafe { *out = Box::into_raw(Box::new(OrdImputation { inner })) };
        Ok(())
    })
}

/// Releases an imputation result. Null is ignored.
///
/// # Safety
/// `result` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ordimpute_imputation_free(result: *mut OrdImputation) {
    if !result.is_null() {
        drop(unsafe { Box::from_raw(result) });
    }
}

/// Number of completed datasets.
///
/// # Safety
/// `result` must be a live handle; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ordimpute_imputation_count(result: *const OrdImputation, count: *mut usize) -> OrdStatus {
    guard(|| {
        let r = unsafe { result.as_ref() }.ok_or_else(|| null("result"))?;
        if count.is_null() {
            return Err(null("count"));
        }
        unsafe { *count = r.inner.completed.len() };
        Ok(())
    })
}

/// Copies completed dataset `index` into `values` as `n * p` column-major
/// levels. `len` is the buffer length and must be at least `n * p`.
///
/// # Safety
/// `result` must be a live handle and `values` must have room for `len`
/// bytes.
#[no_mangle]
pub unsafe extern "C" fn ordimpute_imputation_copy(result: *const OrdImputation, index: usize, values: *mut u8, len: usize) -> OrdStatus {
    guard(|| {
        let r = unsafe { result.as_ref() }.ok_or_else(|| null("result"))?;
        if values.is_null() {
            return Err(null("values"));
        }
        let z = r.inner.completed.get(index).ok_or_else(|| {
            fail(Error::InvalidArgument(format!(
                "index {index} outside 0..{}",
                r.inner.completed.len()
            )))
        })?;
        let need = z.n() * z.p();
        if len < need {
            return Err(fail(Error::InvalidArgument(format!("buffer holds {len} cells, need {need}"))));
        }
        let buf = unsafe { std::slice::from_raw_parts_mut(values, need) };
        for (chunk, col) in buf.chunks_mut(z.n().max(1)).zip(z.columns()) {
            chunk.copy_from_slice(col);
        }
        Ok(())
    })
}

/// Pools `l` estimates `q` with variances `u`.
///
/// # Safety
/// `q` and `u` must point to `l` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ordimpute_pool(q: *const f64, u: *const f64, l: usize, out: *mut OrdPooled) -> OrdStatus {
    guard(|| {
        if q.is_null() || u.is_null() {
            return Err(null("q or u"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let (q, u) = unsafe { (std::slice::from_raw_parts(q, l), std::slice::from_raw_parts(u, l)) };
        let p = inference::pool(q, u).map_err(fail)?;
        unsafe {
            *out = OrdPooled {
                q_bar: p.q_bar,
                between: p.b,
                within: p.u_bar,
                total: p.total,
                dof: p.dof,
                lower: p.ci_lower,
                upper: p.ci_upper,
            }
        };
        Ok(())
    })
}
