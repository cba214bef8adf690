//! C ABI over the chorus classifier and paired significance tests.
//!
//! Every function returns a [`ChorusStatus`]; on failure the message is kept
//! per thread and read with [`chorus_last_error_message`]. Handles are opaque
//! and owned by the caller until passed to [`chorus_classifier_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chorus::audio::AudioClip;
use chorus::eval::{argmax, paired_t_test, wilcoxon_signed_rank, SignificanceResult};
use chorus::stream::classify_window;
use chorus::training::{load_checkpoint, CheckpointError, Classifier};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChorusStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BadFormat = 4,
    BufferTooSmall = 5,
    Internal = 6,
}

/// Loaded checkpoint plus its class names as C strings.
pub struct ChorusClassifier {
    model: Classifier,
    names: Vec<CString>,
}

/// Result of a paired test. `degenerate` is 1 when all differences are zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChorusSignificance {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub degenerate: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn fail(status: ChorusStatus, msg: impl Into<String>) -> ChorusStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> ChorusStatus) -> ChorusStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == ChorusStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(ChorusStatus::Internal, "panic inside chorus"),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn chorus_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or an empty string.
/// Valid until the next chorus call on the same thread.
#[no_mangle]
pub extern "C" fn chorus_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file. On success `*out` receives a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn chorus_classifier_load(path: *const c_char, out: *mut *mut ChorusClassifier) -> ChorusStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(ChorusStatus::NullPointer, "path and out must not be null");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(ChorusStatus::InvalidArgument, "path is not valid UTF-8");
        };
        match load_checkpoint(path) {
            Ok(model) => {
                let names = model
                    .class_names
                    .iter()
                    .map(|n| CString::new(n.replace('\0', " ")).expect("nul bytes removed"))
                    .collect();
                *out = Box::into_raw(Box::new(ChorusClassifier { model, names }));
                ChorusStatus::Ok
            }
            Err(e @ CheckpointError::IoFailure(_)) => fail(ChorusStatus::Io, e.to_string()),
            Err(e) => fail(ChorusStatus::BadFormat, e.to_string()),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` must come from `chorus_classifier_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn chorus_classifier_free(handle: *mut ChorusClassifier) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn chorus_classifier_num_classes(handle: *const ChorusClassifier, out: *mut usize) -> ChorusStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            return fail(ChorusStatus::NullPointer, "handle and out must not be null");
        }
        *out = (*handle).names.len();
        ChorusStatus::Ok
    })
}

/// Sample rate the classifier expects, in Hz.
///
/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn chorus_classifier_sample_rate(handle: *const ChorusClassifier, out: *mut u32) -> ChorusStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            return fail(ChorusStatus::NullPointer, "handle and out must not be null");
        }
        *out = (*handle).model.mel.sample_rate_hz;
        ChorusStatus::Ok
    })
}

/// Class name at `index`; the string is owned by the handle.
///
/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn chorus_classifier_class_name(
    handle: *const ChorusClassifier,
    index: usize,
    out: *mut *const c_char,
) -> ChorusStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            return fail(ChorusStatus::NullPointer, "handle and out must not be null");
        }
        let names = &(*handle).names;
        match names.get(index) {
            Some(n) => {
                *out = n.as_ptr();
                ChorusStatus::Ok
            }
            None => fail(
                ChorusStatus::InvalidArgument,
                format!("class index {index} out of range for {}", names.len()),
            ),
        }
    })
}

/// Classifies one mono clip of float samples in [-1, 1]. Writes one
/// probability per class into `probs` (capacity `probs_len`) and the argmax
/// into `predicted` when it is not null.
///
/// # Safety
/// `samples` must point to `n_samples` floats and `probs` to `probs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn chorus_classifier_classify_pcm(
    handle: *const ChorusClassifier,
    samples: *const f32,
    n_samples: usize,
    sample_rate_hz: u32,
    probs: *mut f64,
    probs_len: usize,
    predicted: *mut usize,
) -> ChorusStatus {
    guard(|| {
        if handle.is_null() || samples.is_null() || probs.is_null() {
            return fail(ChorusStatus::NullPointer, "handle, samples and probs must not be null");
        }
        let h = &*handle;
        let k = h.names.len();
        if probs_len < k {
            return fail(ChorusStatus::BufferTooSmall, format!("need {k} probability slots, got {probs_len}"));
        }
        if sample_rate_hz != h.model.mel.sample_rate_hz {
            return fail(
                ChorusStatus::InvalidArgument,
                format!("expected {} Hz, got {sample_rate_hz}", h.model.mel.sample_rate_hz),
            );
        }
        let clip = match AudioClip::new(std::slice::from_raw_parts(samples, n_samples).to_vec(), sample_rate_hz) {
            Ok(c) => c,
            Err(e) => return fail(ChorusStatus::InvalidArgument, e.to_string()),
        };
        match classify_window(&h.model, &clip) {
            Ok(p) => {
                std::slice::from_raw_parts_mut(probs, k).copy_from_slice(&p);
                if !predicted.is_null() {
                    *predicted = argmax(&p);
                }
                ChorusStatus::Ok
            }
            Err(e) => fail(ChorusStatus::InvalidArgument, e.to_string()),
        }
    })
}

unsafe fn paired(
    a: *const f64,
    b: *const f64,
    n: usize,
    out: *mut ChorusSignificance,
    test: fn(&[f64], &[f64]) -> Result<SignificanceResult, chorus::eval::EvalError>,
) -> ChorusStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return fail(ChorusStatus::NullPointer, "a, b and out must not be null");
        }
        let (a, b) = (std::slice::from_raw_parts(a, n), std::slice::from_raw_parts(b, n));
        match test(a, b) {
            Ok(r) => {
                *out = ChorusSignificance {
                    statistic: r.statistic,
                    p_value: r.p_value,
                    n: r.n,
                    degenerate: i32::from(r.degenerate),
                };
                ChorusStatus::Ok
            }
            Err(e) => fail(ChorusStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Two-sided paired t-test on `a - b`.
///
/// # Safety
/// `a` and `b` must point to `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn chorus_paired_t_test(
    a: *const f64,
    b: *const f64,
    n: usize,
    out: *mut ChorusSignificance,
) -> ChorusStatus {
    paired(a, b, n, out, paired_t_test)
}

/// Two-sided Wilcoxon signed-rank test on `a - b`; `statistic` is W+.
///
/// # Safety
/// `a` and `b` must point to `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn chorus_wilcoxon_signed_rank(
    a: *const f64,
    b: *const f64,
    n: usize,
    out: *mut ChorusSignificance,
) -> ChorusStatus {
    paired(a, b, n, out, wilcoxon_signed_rank)
}
