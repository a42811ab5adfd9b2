//! C ABI over `ccl-core`.
//!
//! Datasets and models are opaque heap handles released with their `_free`
//! function. Every fallible call returns a [`CclStatus`]; on failure
//! [`ccl_last_error`] describes the most recent error on the calling thread.
//! Configuration is passed as flat `key = value` text, the same format the
//! command line reads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ccl_core::dataset::{load_coat, load_triples, DatasetBundle, TripleOptions};
use ccl_core::experiment::export_embeddings;
use ccl_core::metrics::{evaluate, EvalCutoffs};
use ccl_core::model::ModelParams;
use ccl_core::simulator::{generate, SimConfig};
use ccl_core::trainer::{prepare_tables_with_oracle, train, TrainConfig};
use ccl_core::{Error, ErrorKind};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CclStatus {
    Ok = 0,
    /// Invalid configuration key or value.
    Config = 2,
    /// Missing or malformed data files.
    Data = 3,
    /// Non-finite loss or undefined metric.
    Numeric = 4,
    /// Bad argument: null pointer, index out of range, shape mismatch.
    InvalidInput = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

impl From<&Error> for CclStatus {
    fn from(err: &Error) -> Self {
        match err.kind() {
            ErrorKind::Config => CclStatus::Config,
            ErrorKind::Data => CclStatus::Data,
            ErrorKind::Numeric => CclStatus::Numeric,
            ErrorKind::InvalidInput => CclStatus::InvalidInput,
        }
    }
}

/// Loaded or simulated dataset.
pub struct CclBundle {
    bundle: DatasetBundle,
    oracle: Option<ccl_core::exposure::PropensityTable>,
}

/// Trained model parameters.
pub struct CclModel {
    params: ModelParams,
}

/// Test-split metrics at the default cutoffs.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CclMetrics {
    pub mae: f64,
    pub auc: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub mrr: f64,
    pub gini: f64,
    pub global_utility: f64,
    pub users_evaluated: usize,
    pub zero_relevant_users: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

struct Failure(CclStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure(CclStatus::from(&err), err.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(CclStatus::InvalidInput, message.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> CclStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CclStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            CclStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn optional_str<'a>(ptr: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if ptr.is_null() {
        Ok(None)
    } else {
        read_str(ptr, what).map(Some)
    }
}

unsafe fn deref<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref()
        .ok_or_else(|| invalid(format!("{what} is null")))
}

fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn ccl_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ccl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads Coat from `dir` (containing `train.ascii` and `test.ascii`).
///
/// # Safety
/// `dir` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccl_bundle_load_coat(
    dir: *const c_char,
    out: *mut *mut CclBundle,
) -> CclStatus {
    guard(|| {
        let dir = PathBuf::from(read_str(dir, "dir")?);
        let bundle = load_coat(&dir)?;
        store(
            out,
            CclBundle {
                bundle,
                oracle: None,
            },
        )
    })
}

/// Loads `user item rating` triple files for an `users x items` universe.
///
/// # Safety
/// Paths must be valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccl_bundle_load_triples(
    train_path: *const c_char,
    test_path: *const c_char,
    users: usize,
    items: usize,
    one_based: bool,
    threshold: u8,
    out: *mut *mut CclBundle,
) -> CclStatus {
    guard(|| {
        let train = PathBuf::from(read_str(train_path, "train_path")?);
        let test = PathBuf::from(read_str(test_path, "test_path")?);
        let options = TripleOptions {
            one_based,
            threshold,
        };
        let bundle = load_triples(&train, &test, users, items, options)?;
        store(
            out,
            CclBundle {
                bundle,
                oracle: None,
            },
        )
    })
}

/// Generates a synthetic dataset. `config` holds simulator keys (`m`, `n`,
/// `latent_dim`, `exposure_skew`, `exposures_per_user`,
/// `confounder_outcome_weight`, `test_exposures_per_user`, `seed`); null uses
/// the defaults. The bundle keeps its true propensities for `propensity_source = oracle`.
///
/// # Safety
/// `config` must be null or a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccl_bundle_simulate(
    config: *const c_char,
    out: *mut *mut CclBundle,
) -> CclStatus {
    guard(|| {
        let mut cfg = SimConfig::default();
        if let Some(text) = optional_str(config, "config")? {
            for line in text.lines() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Failure(CclStatus::Config, format!("expected key = value: {line:?}"))
                })?;
                cfg.set(k.trim(), v.trim())?;
            }
        }
        let sim = generate(&cfg)?;
        let oracle = sim.oracle_propensity(TrainConfig::default().propensity_floor)?;
        store(
            out,
            CclBundle {
                bundle: sim.bundle,
                oracle: Some(oracle),
            },
        )
    })
}

/// # Safety
/// `bundle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccl_bundle_num_users(bundle: *const CclBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.bundle.m)
}

/// # Safety
/// `bundle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccl_bundle_num_items(bundle: *const CclBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.bundle.n)
}

/// # Safety
/// `bundle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccl_bundle_num_train(bundle: *const CclBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.bundle.train.len())
}

/// # Safety
/// `bundle` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ccl_bundle_free(bundle: *mut CclBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Trains on `bundle`. `config` is `key = value` text (null for defaults).
///
/// # Safety
/// `bundle` must be a live handle, `config` null or a valid string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ccl_train(
    bundle: *const CclBundle,
    config: *const c_char,
    out: *mut *mut CclModel,
) -> CclStatus {
    guard(|| {
        let data = deref(bundle, "bundle")?;
        let cfg = match optional_str(config, "config")? {
            Some(text) => TrainConfig::from_kv(text)?,
            None => TrainConfig::default(),
        };
        let tables = prepare_tables_with_oracle(&data.bundle, &cfg, data.oracle.as_ref())?;
        let outcome = train(&data.bundle, &cfg, &tables)?;
        store(
            out,
            CclModel {
                params: outcome.params,
            },
        )
    })
}

/// Writes `len` predicted probabilities for the pairs `(users[k], items[k])`.
///
/// # Safety
/// `users`, `items` and `scores` must each point to `len` elements.
#[no_mangle]
pub unsafe extern "C" fn ccl_model_predict(
    model: *const CclModel,
    users: *const usize,
    items: *const usize,
    len: usize,
    scores: *mut f64,
) -> CclStatus {
    guard(|| {
        let model = deref(model, "model")?;
        if len == 0 {
            return Ok(());
        }
        if users.is_null() || items.is_null() || scores.is_null() {
            return Err(invalid("users, items and scores must be non-null"));
        }
        let users = std::slice::from_raw_parts(users, len);
        let items = std::slice::from_raw_parts(items, len);
        let predicted = model.params.predict(users, items)?;
        std::slice::from_raw_parts_mut(scores, len).copy_from_slice(&predicted);
        Ok(())
    })
}

/// Evaluates on the bundle's test split.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccl_model_evaluate(
    model: *const CclModel,
    bundle: *const CclBundle,
    out: *mut CclMetrics,
) -> CclStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let data = deref(bundle, "bundle")?;
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let report = evaluate(&model.params, &data.bundle, &EvalCutoffs::default())?;
        let metric = |v: Option<f64>| v.unwrap_or(f64::NAN);
        *out = CclMetrics {
            mae: report.mae,
            auc: report.auc,
            ndcg_at_5: metric(report.ndcg_at(5)),
            ndcg_at_10: metric(report.ndcg_at(10)),
            recall_at_1: metric(report.recall_at(1)),
            recall_at_5: metric(report.recall_at(5)),
            mrr: report.mrr,
            gini: report.gini,
            global_utility: report.global_utility,
            users_evaluated: report.users_evaluated,
            zero_relevant_users: report.zero_relevant_users,
        };
        Ok(())
    })
}

/// Writes a binary checkpoint.
///
/// # Safety
/// `model` must be live; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ccl_model_save(model: *const CclModel, path: *const c_char) -> CclStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let path = PathBuf::from(read_str(path, "path")?);
        model.params.save(&path)?;
        Ok(())
    })
}

/// Reads a checkpoint written by `ccl_model_save` or the command line.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccl_model_load(path: *const c_char, out: *mut *mut CclModel) -> CclStatus {
    guard(|| {
        let path = PathBuf::from(read_str(path, "path")?);
        let params = ModelParams::load(&path)?;
        store(out, CclModel { params })
    })
}

/// Writes one user's embedding export as tab-separated text.
///
/// # Safety
/// Handles must be live; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ccl_export_embeddings(
    model: *const CclModel,
    bundle: *const CclBundle,
    user: usize,
    path: *const c_char,
) -> CclStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let data = deref(bundle, "bundle")?;
        let path = PathBuf::from(read_str(path, "path")?);
        export_embeddings(&model.params, &data.bundle, user, &path)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ccl_model_free(model: *mut CclModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
