//! C interface to a trained question classifier.
//!
//! Every function returns a [`QcStatus`]. On failure, a description is available
//! from [`qc_last_error_message`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use trec_qc::cli::load_classifier;
use trec_qc::data::{CLASS_LABELS, NUM_CLASSES};
use trec_qc::ensemble::QuestionClassifier;
use trec_qc::metrics::summarize;
use trec_qc::Error;

/// Number of coarse classes, the length of every probability array.
pub const QC_NUM_CLASSES: usize = 6;

const _: () = assert!(QC_NUM_CLASSES == NUM_CLASSES);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Integrity = 5,
    Version = 6,
    Usage = 7,
    Config = 8,
    Numeric = 9,
    Dimension = 10,
    Index = 11,
    Alignment = 12,
    UndefinedMetric = 13,
    Panic = 14,
}

/// Opaque handle to a loaded classifier.
pub struct QcModel {
    inner: QuestionClassifier,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QcMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mse: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> QcStatus {
    match e {
        Error::Dimension(_) => QcStatus::Dimension,
        Error::Index(_) => QcStatus::Index,
        Error::Usage(_) => QcStatus::Usage,
        Error::Numeric(_) => QcStatus::Numeric,
        Error::Config(_) => QcStatus::Config,
        Error::Alignment(_) => QcStatus::Alignment,
        Error::UndefinedMetric(_) => QcStatus::UndefinedMetric,
        Error::Parse { .. } => QcStatus::Parse,
        Error::Integrity(_) => QcStatus::Integrity,
        Error::Version { .. } => QcStatus::Version,
        Error::Io { .. } => QcStatus::Io,
    }
}

fn fail(status: QcStatus, msg: impl Into<String>) -> QcStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> QcStatus) -> QcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(QcStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn from_result(r: trec_qc::Result<()>) -> QcStatus {
    match r {
        Ok(()) => QcStatus::Ok,
        Err(e) => fail(status_of(&e), e.to_string()),
    }
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, QcStatus> {
    if p.is_null() {
        return Err(fail(QcStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(QcStatus::InvalidUtf8, "string argument is not valid UTF-8"))
}

/// Loads an ensemble checkpoint. On success `*out` owns a model that must be
/// released with [`qc_model_free`]; on failure it is set to NULL.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qc_model_load(path: *const c_char, out: *mut *mut QcModel) -> QcStatus {
    guard(|| {
        if out.is_null() {
            return fail(QcStatus::NullPointer, "null output pointer");
        }
        *out = ptr::null_mut();
        let path = match c_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_classifier(Path::new(path)) {
            Ok((_, inner)) => {
                *out = Box::into_raw(Box::new(QcModel { inner }));
                QcStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from [`qc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qc_model_free(model: *mut QcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Classifies one question. Writes the class index to `*out_class` and, when
/// `out_probs` is not NULL, the six class probabilities to `out_probs[0..6]`.
///
/// # Safety
/// `model` must be a live handle, `text` a NUL-terminated string, `out_class`
/// valid, and `out_probs` NULL or valid for six doubles.
#[no_mangle]
pub unsafe extern "C" fn qc_model_predict(
    model: *const QcModel,
    text: *const c_char,
    out_class: *mut u32,
    out_probs: *mut f64,
) -> QcStatus {
    guard(|| {
        if model.is_null() || out_class.is_null() {
            return fail(QcStatus::NullPointer, "null model or output pointer");
        }
        let text = match c_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match (*model).inner.predict(text) {
            Ok((k, probs)) => {
                *out_class = k as u32;
                if !out_probs.is_null() {
                    ptr::copy_nonoverlapping(probs.as_ptr(), out_probs, NUM_CLASSES);
                }
                QcStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Static label for a class index (`"ABBR"` ... `"NUM"`), or NULL when out of range.
#[no_mangle]
pub extern "C" fn qc_class_label(index: u32) -> *const c_char {
    const LABELS: [&CStr; NUM_CLASSES] = [c"ABBR", c"DESC", c"ENTY", c"HUM", c"LOC", c"NUM"];
    debug_assert!(LABELS
        .iter()
        .zip(CLASS_LABELS)
        .all(|(c, l)| c.to_str() == Ok(l)));
    LABELS
        .get(index as usize)
        .map_or(ptr::null(), |c| c.as_ptr())
}

#[no_mangle]
pub extern "C" fn qc_num_classes() -> usize {
    QC_NUM_CLASSES
}

/// Accuracy, macro precision/recall/F1 and label MSE of `n` predictions.
///
/// # Safety
/// `preds` and `golds` must be valid for `n` values and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn qc_metrics(
    preds: *const u32,
    golds: *const u32,
    n: usize,
    out: *mut QcMetrics,
) -> QcStatus {
    guard(|| {
        if out.is_null() || (n > 0 && (preds.is_null() || golds.is_null())) {
            return fail(QcStatus::NullPointer, "null metrics argument");
        }
        let (p, g): (Vec<usize>, Vec<usize>) = if n == 0 {
            (Vec::new(), Vec::new())
        } else {
            (
                std::slice::from_raw_parts(preds, n)
                    .iter()
                    .map(|&x| x as usize)
                    .collect(),
                std::slice::from_raw_parts(golds, n)
                    .iter()
                    .map(|&x| x as usize)
                    .collect(),
            )
        };
        from_result(summarize(&p, &g).map(|s| {
            *out = QcMetrics {
                accuracy: s.accuracy,
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                mse: s.mse,
            };
        }))
    })
}

/// Message for the last failure on this thread, or NULL if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
