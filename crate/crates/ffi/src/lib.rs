//! C interface to the `crossrec` library.
//!
//! Every fallible function returns a [`CrStatus`]. On failure the message is
//! kept per thread and can be copied out with [`cr_last_error`]. Datasets and
//! models are opaque handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use crossrec::cli::{load_artifact, RunConfig, MODEL_KIND};
use crossrec::dataio::{ingest, Dataset, DatasetPaths};
use crossrec::eval::{apply_post_filter, metrics_at_k, rank, Recommender};
use crossrec::pipeline::{case_at, TrainedModel};
use crossrec::prep::{clean_dataset, PrepConfig};
use crossrec::recmodels::{weibull_median, weibull_pmf, weibull_tail};
use crossrec::segmentation::{fit_gmm_em, intersection_threshold, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crossrec::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    InvalidData = 4,
    InvalidConfig = 5,
    Checkpoint = 6,
    Numeric = 7,
    VocabularyMismatch = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// An ingested, cleaned dataset.
pub struct CrDataset {
    dataset: Dataset,
    prep: PrepConfig,
}

/// A trained model loaded from a checkpoint.
pub struct CrModel {
    model: TrainedModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CrMetrics {
    pub hr: f64,
    pub precision: f64,
    pub recall: f64,
    pub mrr: f64,
    pub ap: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> CrStatus {
    match err {
        Error::Io { .. } => CrStatus::Io,
        Error::Csv { .. }
        | Error::Json(_)
        | Error::MissingColumn { .. }
        | Error::EmptyDataset(_)
        | Error::UnknownCategory { .. }
        | Error::ProfileRequired(_)
        | Error::AttributeMissing(_) => CrStatus::InvalidData,
        Error::InvalidConfig { .. } | Error::SplitTooSmall(_) => CrStatus::InvalidConfig,
        Error::Checkpoint(_) => CrStatus::Checkpoint,
        Error::NumericOverflow(_)
        | Error::NotSeparable
        | Error::DegenerateComponent(_)
        | Error::NonFiniteLoss { .. } => CrStatus::Numeric,
        Error::Shape(_) | Error::EmptyInput(_) | Error::InvalidArgument(_) => CrStatus::InvalidArgument,
    }
}

struct Failure(CrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: CrStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, recording its error and turning panics into [`CrStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            CrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(CrStatus::NullPointer, format!("`{name}` is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| fail(CrStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(CrStatus::NullPointer, format!("`{name}` is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, needed: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len < needed {
        return fail(CrStatus::BufferTooSmall, format!("`{name}` holds {len}, need {needed}"));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(CrStatus::NullPointer, format!("`{name}` is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(CrStatus::NullPointer, format!("`{name}` is null")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to fit) and returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cr_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads the four CSV files in `dir` and applies the cleaning steps of the
/// preparation config in `config_path` (null for defaults).
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cr_dataset_load(
    dir: *const c_char,
    config_path: *const c_char,
    out: *mut *mut CrDataset,
) -> CrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let prep = if config_path.is_null() {
            PrepConfig::default()
        } else {
            RunConfig::load(Path::new(str_arg(config_path, "config_path")?))?.experiment.prep
        };
        prep.validate()?;
        let raw = ingest(&DatasetPaths::in_dir(&dir))?;
        let (dataset, _, _) = clean_dataset(&raw, &prep);
        *out = Box::into_raw(Box::new(CrDataset { dataset, prep }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle from [`cr_dataset_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cr_dataset_free(dataset: *mut CrDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cr_dataset_n_items(dataset: *const CrDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.dataset.catalog.len())
}

/// # Safety
/// `dataset` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cr_dataset_n_users(dataset: *const CrDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.dataset.users.len())
}

/// Loads a model checkpoint written by `crossrec train` or `train-baseline`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cr_model_load(path: *const c_char, out: *mut *mut CrModel) -> CrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let model: TrainedModel = load_artifact(Path::new(path), MODEL_KIND)?.payload;
        *out = Box::into_raw(Box::new(CrModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`cr_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cr_model_free(model: *mut CrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cr_model_n_items(model: *const CrModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.n_items())
}

/// Scores every catalog item for `user` at unix time `time`, from the
/// sessions since the user's previous purchase. Writes `n_items` scores;
/// higher means more likely. Owned-item filtering is left to
/// [`cr_post_filter`] with the mask from [`cr_eligibility`].
///
/// # Safety
/// Handles must be live; `scores` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cr_model_score(
    model: *const CrModel,
    dataset: *const CrDataset,
    user: *const c_char,
    time: i64,
    scores: *mut f64,
    len: usize,
) -> CrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| Failure(CrStatus::NullPointer, "`model` is null".into()))?;
        let d = dataset.as_ref().ok_or_else(|| Failure(CrStatus::NullPointer, "`dataset` is null".into()))?;
        let user = str_arg(user, "user")?;
        if m.model.n_items() != d.dataset.catalog.len() {
            return fail(CrStatus::VocabularyMismatch, "model and dataset catalogs differ in size");
        }
        if m.model.vocabulary().is_some_and(|v| *v != d.dataset.vocab) {
            return fail(CrStatus::VocabularyMismatch, "model was trained on a different action vocabulary");
        }
        let out = out_slice(scores, len, d.dataset.catalog.len(), "scores")?;
        let case = case_at(&d.dataset, user, time, &d.prep)?;
        out.copy_from_slice(&m.model.score(&case)?);
        Ok(())
    })
}

/// Writes 1 for each item `user` may still buy at `time`, 0 otherwise.
///
/// # Safety
/// `dataset` must be live; `mask` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn cr_eligibility(
    dataset: *const CrDataset,
    user: *const c_char,
    time: i64,
    mask: *mut u8,
    len: usize,
) -> CrStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| Failure(CrStatus::NullPointer, "`dataset` is null".into()))?;
        let user = str_arg(user, "user")?;
        let u =
            d.dataset.user(user).ok_or_else(|| Failure(CrStatus::InvalidArgument, format!("unknown user `{user}`")))?;
        let portfolio = u.portfolio_at(time, d.dataset.catalog.len());
        let eligible = crossrec::dataio::eligibility_mask(&portfolio, &d.dataset.catalog);
        let out = out_slice(mask, len, eligible.len(), "mask")?;
        for (o, e) in out.iter_mut().zip(eligible) {
            *o = u8::from(e);
        }
        Ok(())
    })
}

/// Replaces scores of ineligible items (`mask[i] == 0`) with the minimum
/// score minus one.
///
/// # Safety
/// `scores` and `mask` must hold `n` elements, `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn cr_post_filter(scores: *const f64, mask: *const u8, n: usize, out: *mut f64) -> CrStatus {
    guard(|| {
        let scores = slice_arg(scores, n, "scores")?;
        let mask: Vec<bool> = slice_arg(mask, n, "mask")?.iter().map(|&m| m != 0).collect();
        let filtered = apply_post_filter(scores, &mask)?;
        out_slice(out, n, n, "out")?.copy_from_slice(&filtered);
        Ok(())
    })
}

/// Item indices by descending score, ties by ascending index.
///
/// # Safety
/// `scores` must hold `n` doubles and `out` `n` indices.
#[no_mangle]
pub unsafe extern "C" fn cr_rank(scores: *const f64, n: usize, out: *mut usize) -> CrStatus {
    guard(|| {
        let scores = slice_arg(scores, n, "scores")?;
        if scores.iter().any(|s| s.is_nan()) {
            return fail(CrStatus::InvalidArgument, "scores contain NaN");
        }
        out_slice(out, n, n, "out")?.copy_from_slice(&rank(scores));
        Ok(())
    })
}

/// Hit rate, precision, recall, MRR and average precision of a ranking at `k`.
///
/// # Safety
/// `ranked` must hold `n_ranked` indices and `purchased` `n_purchased`.
#[no_mangle]
pub unsafe extern "C" fn cr_metrics_at_k(
    ranked: *const usize,
    n_ranked: usize,
    purchased: *const usize,
    n_purchased: usize,
    k: usize,
    out: *mut CrMetrics,
) -> CrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let m =
            metrics_at_k(slice_arg(ranked, n_ranked, "ranked")?, slice_arg(purchased, n_purchased, "purchased")?, k)?;
        *out = CrMetrics { hr: m.hr, precision: m.precision, recall: m.recall, mrr: m.mrr, ap: m.ap };
        Ok(())
    })
}

fn weibull_args(alpha: f64, beta: f64) -> Result<(), Failure> {
    if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
        return fail(CrStatus::InvalidArgument, "weibull parameters must be positive and finite");
    }
    Ok(())
}

/// Probability that a discrete Weibull variable equals `y`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cr_weibull_pmf(y: i64, alpha: f64, beta: f64, out: *mut f64) -> CrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        weibull_args(alpha, beta)?;
        *out = weibull_pmf(y, alpha, beta)?;
        Ok(())
    })
}

/// Probability that a discrete Weibull variable exceeds `y - 1`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cr_weibull_tail(y: i64, alpha: f64, beta: f64, out: *mut f64) -> CrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        weibull_args(alpha, beta)?;
        *out = weibull_tail(y, alpha, beta)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cr_weibull_median(alpha: f64, beta: f64, out: *mut f64) -> CrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        weibull_args(alpha, beta)?;
        *out = weibull_median(alpha, beta);
        Ok(())
    })
}

/// Fits a two-component mixture to log inter-session gaps (log seconds) and
/// writes the task threshold in days.
///
/// # Safety
/// `log_gaps` must hold `n` doubles; `out_days` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cr_gap_threshold(log_gaps: *const f64, n: usize, out_days: *mut f64) -> CrStatus {
    guard(|| {
        let out = out_ref(out_days, "out_days")?;
        let xs = slice_arg(log_gaps, n, "log_gaps")?;
        if xs.iter().any(|x| !x.is_finite()) {
            return fail(CrStatus::InvalidArgument, "gaps must be finite");
        }
        let fit = fit_gmm_em(xs, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
        *out = intersection_threshold(&fit.gmm)?.days;
        Ok(())
    })
}
