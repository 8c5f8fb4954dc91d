//! C ABI for the `ptfh` library.
//!
//! Objects cross the boundary as opaque handles (`PtfhDataset`, `PtfhFit`)
//! that the caller releases with the matching `*_free`. Every fallible call
//! returns a `PtfhStatus`; on failure the message is kept per thread and can
//! be copied out with `ptfh_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ptfh::io::parse_dataset;
use ptfh::mse_bootstrap::MseSettings;
use ptfh::prediction::predict_areas;
use ptfh::{
    bootstrap_mse, dpt, dpt_inv, fit_model, AreaRecord, Correction, FitResult, ModelKind, PtfhError, SearchSettings,
    TransformParam,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtfhStatus {
    Ok = 0,
    Domain = 1,
    Overflow = 2,
    Row = 3,
    Data = 4,
    RankDeficient = 5,
    Numerical = 6,
    Config = 7,
    Io = 8,
    NullPointer = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtfhModel {
    Ptfh = 0,
    Logfh = 1,
    Fh = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtfhCorrection {
    Additive = 0,
    Multiplicative = 1,
}

/// Area-level data set.
pub struct PtfhDataset {
    records: Vec<AreaRecord>,
}

/// Fitted model.
pub struct PtfhFit {
    fit: FitResult,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &PtfhError) -> PtfhStatus {
    match e {
        PtfhError::Domain(_) => PtfhStatus::Domain,
        PtfhError::Overflow(_) => PtfhStatus::Overflow,
        PtfhError::Row { .. } => PtfhStatus::Row,
        PtfhError::Data(_) => PtfhStatus::Data,
        PtfhError::RankDeficient { .. } => PtfhStatus::RankDeficient,
        PtfhError::Numerical(_) => PtfhStatus::Numerical,
        PtfhError::Config(_) => PtfhStatus::Config,
        PtfhError::Io(_) => PtfhStatus::Io,
    }
}

enum Failure {
    Lib(PtfhError),
    Null(&'static str),
    Buffer { need: usize, got: usize },
}

impl From<PtfhError> for Failure {
    fn from(e: PtfhError) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PtfhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PtfhStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PtfhStatus::NullPointer
        }
        Ok(Err(Failure::Buffer { need, got })) => {
            set_error(format!("output buffer holds {got} values, {need} needed"));
            PtfhStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic".into());
            PtfhStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null("output buffer"));
    }
    if len < need {
        return Err(Failure::Buffer { need, got: len });
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

/// Copies the last error message of this thread into `buf` (NUL terminated,
/// truncated to `len - 1` bytes) and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ptfh_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Dual power transform of `x > 0`.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn ptfh_dpt(x: f64, lambda: f64, out: *mut f64) -> PtfhStatus {
    guard(|| {
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = dpt(x, TransformParam::new(lambda)?)?;
        Ok(())
    })
}

/// Inverse dual power transform.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn ptfh_dpt_inv(t: f64, lambda: f64, out: *mut f64) -> PtfhStatus {
    guard(|| {
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = dpt_inv(t, TransformParam::new(lambda)?)?;
        Ok(())
    })
}

/// Builds a data set from `m` areas with known sampling variances.
/// `x` is row-major `m × p` without the intercept, which is prepended.
///
/// # Safety
/// `y` and `d` must hold `m` doubles, `x` must hold `m * p` doubles and
/// `out` must point to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn ptfh_dataset_new(
    m: usize,
    p: usize,
    y: *const f64,
    x: *const f64,
    d: *const f64,
    out: *mut *mut PtfhDataset,
) -> PtfhStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let y = slice(y, m, "y")?;
        let d = slice(d, m, "d")?;
        let x = slice(x, m * p, "x")?;
        let mut records = Vec::with_capacity(m);
        for i in 0..m {
            let mut row = Vec::with_capacity(p + 1);
            row.push(1.0);
            row.extend_from_slice(&x[i * p..(i + 1) * p]);
            records.push(AreaRecord::with_known_d((i + 1).to_string(), y[i], row, d[i])?);
        }
        *out = Box::into_raw(Box::new(PtfhDataset { records }));
        Ok(())
    })
}

/// Reads a data set from a CSV file in the CLI's input format.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn ptfh_dataset_from_csv(path: *const c_char, out: *mut *mut PtfhDataset) -> PtfhStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| PtfhError::Config("path is not valid UTF-8".into()))?;
        let ds = parse_dataset(Path::new(path))?;
        *out = Box::into_raw(Box::new(PtfhDataset { records: ds.records }));
        Ok(())
    })
}

/// Number of areas, 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ptfh_dataset_len(ds: *const PtfhDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.records.len())
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ptfh_dataset_free(ds: *mut PtfhDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits a model by maximum likelihood. `lambda_max <= 0` selects the default range.
///
/// # Safety
/// `ds` must be a live handle and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn ptfh_fit(
    ds: *const PtfhDataset,
    model: PtfhModel,
    lambda_max: f64,
    out: *mut *mut PtfhFit,
) -> PtfhStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let mut settings = SearchSettings::default();
        if lambda_max > 0.0 {
            settings.lambda_max = lambda_max;
        }
        settings.validate()?;
        let kind = match model {
            PtfhModel::Ptfh => ModelKind::Ptfh,
            PtfhModel::Logfh => ModelKind::Logfh,
            PtfhModel::Fh => ModelKind::Fh,
        };
        let fit = fit_model(kind, &ds.records, &settings)?;
        *out = Box::into_raw(Box::new(PtfhFit { fit }));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ptfh_fit_free(fit: *mut PtfhFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Estimated λ (0 for log-FH, NaN for FH or a null handle).
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ptfh_fit_lambda(fit: *const PtfhFit) -> f64 {
    fit.as_ref().and_then(|f| f.fit.params.lambda()).unwrap_or(f64::NAN)
}

/// Estimated random-effect variance A (NaN for a null handle).
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ptfh_fit_a(fit: *const PtfhFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.fit.params.a)
}

/// Maximized log-likelihood (NaN for a null handle).
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ptfh_fit_loglik(fit: *const PtfhFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.fit.loglik)
}

/// Copies β (intercept first) into `out`; `*n_beta` receives its length.
///
/// # Safety
/// `fit` must be a live handle, `out` must hold `len` doubles and `n_beta`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ptfh_fit_beta(
    fit: *const PtfhFit,
    out: *mut f64,
    len: usize,
    n_beta: *mut usize,
) -> PtfhStatus {
    guard(|| {
        let fit = deref(fit, "fit")?;
        let beta = &fit.fit.params.beta;
        if let Some(n) = n_beta.as_mut() {
            *n = beta.len();
        }
        out_slice(out, len, beta.len())?.copy_from_slice(beta);
        Ok(())
    })
}

/// Empirical best predictions of the area means, written to `out[0..m]`.
/// `quad_order == 0` selects the default order.
///
/// # Safety
/// `ds` and `fit` must be live handles and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ptfh_predict(
    ds: *const PtfhDataset,
    fit: *const PtfhFit,
    quad_order: usize,
    out: *mut f64,
    len: usize,
) -> PtfhStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        let fit = deref(fit, "fit")?;
        let order = if quad_order == 0 { ptfh::prediction::DEFAULT_QUAD_ORDER } else { quad_order };
        let preds = predict_areas(&ds.records, &fit.fit, order)?;
        let out = out_slice(out, len, preds.len())?;
        for (o, p) in out.iter_mut().zip(&preds) {
            *o = p.mu_hat;
        }
        Ok(())
    })
}

/// Parametric bootstrap MSE of the predictions, written to `out[0..m]`.
/// `b` replicates and `s` Monte-Carlo draws; zero selects the defaults.
/// Returns `PTFH_STATUS_NUMERICAL` if too many bootstrap refits failed.
///
/// # Safety
/// `ds` and `fit` must be live handles and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ptfh_mse(
    ds: *const PtfhDataset,
    fit: *const PtfhFit,
    b: usize,
    s: usize,
    seed: u64,
    correction: PtfhCorrection,
    out: *mut f64,
    len: usize,
) -> PtfhStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        let fit = deref(fit, "fit")?;
        let mut settings = MseSettings { seed, ..Default::default() };
        if b > 0 {
            settings.b = b;
        }
        if s > 0 {
            settings.s = s;
        }
        settings.correction = match correction {
            PtfhCorrection::Additive => Correction::Additive,
            PtfhCorrection::Multiplicative => Correction::Multiplicative,
        };
        settings.validate()?;
        let report = bootstrap_mse(&ds.records, &fit.fit, &settings)?;
        if !report.valid {
            return Err(PtfhError::Numerical(format!(
                "{} of {} bootstrap refits failed",
                report.failed_replicates.len(),
                settings.b
            ))
            .into());
        }
        let out = out_slice(out, len, report.areas.len())?;
        for (o, a) in out.iter_mut().zip(&report.areas) {
            *o = a.mse_total;
        }
        Ok(())
    })
}
