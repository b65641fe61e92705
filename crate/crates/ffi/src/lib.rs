//! C ABI over `kan-ausculta`: load a saved fold model, extract features from
//! a WAV file and predict class probabilities.
//!
//! Every fallible call returns a [`KaStatus`]. On failure a message is kept
//! per thread and can be read with [`ka_last_error`]. Panics never cross the
//! boundary; they are reported as `KA_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use kan_ausculta::features::{Extractor, FeatureConfig};
use kan_ausculta::model::Checkpoint;
use kan_ausculta::{Error, CLASS_NAMES, NUM_CLASSES};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Utf8 = 4,
    Shape = 5,
    ContractViolation = 6,
    Ingestion = 7,
    Fingerprint = 8,
    TrainingAbort = 9,
    Config = 10,
    Io = 11,
    Json = 12,
    Panic = 99,
}

impl From<&Error> for KaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => KaStatus::InvalidArgument,
            Error::Shape { .. } => KaStatus::Shape,
            Error::ContractViolation(_) => KaStatus::ContractViolation,
            Error::Ingestion(_) => KaStatus::Ingestion,
            Error::Fingerprint { .. } => KaStatus::Fingerprint,
            Error::TrainingAbort { .. } => KaStatus::TrainingAbort,
            Error::Config(_) => KaStatus::Config,
            Error::Io(_) => KaStatus::Io,
            Error::Json(_) => KaStatus::Json,
        }
    }
}

/// Opaque handle to a loaded checkpoint.
pub struct KaModel {
    checkpoint: Checkpoint,
    fingerprint: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(KaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(KaStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> KaStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            KaStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(Failure(KaStatus::NullPointer, format!("{what} is null")));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(KaStatus::Utf8, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn model_ref<'a>(m: *const KaModel) -> FfiResult<&'a KaModel> {
    m.as_ref()
        .ok_or_else(|| Failure(KaStatus::NullPointer, "model handle is null".into()))
}

unsafe fn write_out(values: &[f64], out: *mut f64, out_len: usize) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure(KaStatus::NullPointer, "output buffer is null".into()));
    }
    if out_len < values.len() {
        return Err(Failure(
            KaStatus::BufferTooSmall,
            format!("output buffer holds {out_len} values, {} needed", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next `ka_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ka_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Number of diagnostic classes.
#[no_mangle]
pub extern "C" fn ka_class_count() -> usize {
    NUM_CLASSES
}

/// Static, NUL-terminated class name, or null when `index` is out of range.
#[no_mangle]
pub extern "C" fn ka_class_name(index: usize) -> *const c_char {
    const NAMES: [&CStr; NUM_CLASSES] = [
        c"Healthy",
        c"COPD",
        c"Bronchiectasis",
        c"Bronchiolitis",
        c"Pneumonia",
        c"URTI",
    ];
    debug_assert!(NAMES.iter().zip(CLASS_NAMES).all(|(c, n)| c.to_str() == Ok(n)));
    NAMES.get(index).map_or(ptr::null(), |s| s.as_ptr())
}

/// Loads a checkpoint written by `kan-ausculta train` (`model_fold<i>.json`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer. On
/// success `*out` owns a handle that must be released with [`ka_model_free`].
#[no_mangle]
pub unsafe extern "C" fn ka_model_load(path: *const c_char, out: *mut *mut KaModel) -> KaStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(KaStatus::NullPointer, "out is null".into()));
        }
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let checkpoint = Checkpoint::load(&path, None)?;
        let fingerprint = CString::new(checkpoint.fingerprint.clone())
            .map_err(|_| Failure(KaStatus::Ingestion, "fingerprint contains NUL".into()))?;
        *out = Box::into_raw(Box::new(KaModel { checkpoint, fingerprint }));
        Ok(())
    })
}

/// Releases a handle from [`ka_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ka_model_free(model: *mut KaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input dimension the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ka_model_feature_dim(model: *const KaModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.model.config().d_feat)
}

/// Output class count of the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ka_model_class_count(model: *const KaModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.model.config().num_classes)
}

/// Feature-layout fingerprint the model was trained against; owned by the
/// handle. Null for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ka_model_fingerprint(model: *const KaModel) -> *const c_char {
    model.as_ref().map_or(ptr::null(), |m| m.fingerprint.as_ptr())
}

/// Class probabilities for one raw (unscaled) feature vector.
///
/// # Safety
/// `features` must point to `n_features` readable doubles and `probs` to
/// `probs_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ka_model_predict(
    model: *const KaModel,
    features: *const f64,
    n_features: usize,
    probs: *mut f64,
    probs_len: usize,
) -> KaStatus {
    guard(|| {
        let m = model_ref(model)?;
        if features.is_null() {
            return Err(Failure(KaStatus::NullPointer, "features is null".into()));
        }
        let x = std::slice::from_raw_parts(features, n_features);
        let p = m.checkpoint.predict_proba(x)?;
        write_out(&p, probs, probs_len)
    })
}

/// Feature dimension of the default extraction pipeline.
#[no_mangle]
pub extern "C" fn ka_default_feature_dim() -> usize {
    kan_ausculta::features::FeatureLayout::for_config(&FeatureConfig::default()).dim()
}

/// Extracts the default feature vector from a WAV file. `*written` receives
/// the vector length, also when the buffer is too small.
///
/// # Safety
/// `path` must be NUL-terminated, `out` must hold `out_len` doubles and
/// `written` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn ka_extract_wav(
    path: *const c_char,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> KaStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let v = Extractor::new(FeatureConfig::default())?.extract_file(&path)?;
        if let Some(w) = written.as_mut() {
            *w = v.values.len();
        }
        write_out(&v.values, out, out_len)
    })
}

/// Extracts features from a WAV file and predicts with `model`. Fails with
/// `KA_STATUS_FINGERPRINT` if the model was not trained on the default layout.
///
/// # Safety
/// As for [`ka_model_predict`] and [`ka_extract_wav`].
#[no_mangle]
pub unsafe extern "C" fn ka_model_predict_wav(
    model: *const KaModel,
    path: *const c_char,
    probs: *mut f64,
    probs_len: usize,
) -> KaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = path_arg(path, "path")?;
        let extractor = Extractor::new(FeatureConfig::default())?;
        if extractor.fingerprint() != m.checkpoint.fingerprint {
            return Err(Error::Fingerprint {
                expected: m.checkpoint.fingerprint.clone(),
                found: extractor.fingerprint().to_string(),
            }
            .into());
        }
        let v = extractor.extract_file(&path)?;
        let p = m.checkpoint.predict_proba(&v.values)?;
        write_out(&p, probs, probs_len)
    })
}
