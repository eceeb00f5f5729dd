//! C ABI over checkpoint loading, beam-search prediction, and ChrF++.
//!
//! Calling conventions, which the committed `include/lexgen.h` restates
//! for C consumers:
//!
//! - Every fallible function returns a [`LexgenStatus`]. On anything but
//!   `Ok`, a description is readable via [`lexgen_last_error_message`]
//!   until the next failing call on the same thread.
//! - Strings returned through out-parameters are owned by the caller and
//!   must be released with [`lexgen_string_free`].
//! - Model handles are opaque; create with [`lexgen_model_load`], release
//!   with [`lexgen_model_free`].
//!
//! After changing the exported surface, regenerate the header with
//! `cbindgen --crate lexgen-ffi --output include/lexgen.h`.

#![deny(unsafe_op_in_unsafe_fn)]

use lexgen_core::checkpoint::{load_checkpoint, Checkpoint};
use lexgen_core::decode::predict_topk;
use lexgen_core::eval::{chrf_pp, ChrfConfig};
use lexgen_core::LexError;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Outcome of a fallible call. The classes match the CLI's exit codes, so
/// a binding can report both the same way.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexgenStatus {
    /// Success.
    Ok = 0,
    /// Caller error: null or malformed argument, unknown language tag,
    /// invalid configuration.
    Usage = 1,
    /// Input that could not be read or fails validation: missing file,
    /// corrupt checkpoint, bad encoding.
    Data = 2,
    /// A defect inside the library, never caused by input.
    Internal = 3,
}

/// Opaque handle to a loaded model. Sharing one handle across threads for
/// prediction is safe; freeing it while another call uses it is not.
pub struct LexgenModel {
    ckpt: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: LexgenStatus, msg: impl std::fmt::Display) -> LexgenStatus {
    let text = msg.to_string().replace('\0', "\u{fffd}");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).expect("interior NULs replaced above");
    });
    status
}

fn fail_with(e: LexError) -> LexgenStatus {
    let status = match e.exit_code() {
        1 => LexgenStatus::Usage,
        2 => LexgenStatus::Data,
        _ => LexgenStatus::Internal,
    };
    fail(status, e)
}

/// Runs `body` with a panic guard so unwinding never crosses the C
/// boundary; a panic is reported as `Internal`.
fn guarded(body: impl FnOnce() -> LexgenStatus) -> LexgenStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(LexgenStatus::Internal, format!("panic: {msg}"))
        }
    }
}

/// Borrows a required NUL-terminated UTF-8 argument, reporting `Usage`
/// for null or non-UTF-8 input.
///
/// # Safety
/// `ptr` must be null or point to a NUL-terminated string that stays
/// alive for the duration of the call.
unsafe fn required_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, LexgenStatus> {
    if ptr.is_null() {
        return Err(fail(LexgenStatus::Usage, format!("{what} must not be null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail(LexgenStatus::Usage, format!("{what} is not valid UTF-8")))
}

macro_rules! try_ffi {
    ($expr:expr) => {
        match $expr {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Returns the message for the most recent failure on this thread, or an
/// empty string when nothing has failed yet. The pointer stays valid
/// until the next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn lexgen_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Returns the library version as a static NUL-terminated string; do not
/// free it.
#[no_mangle]
pub extern "C" fn lexgen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a checkpoint file and writes a model handle to `out_model`.
/// The handle must be released with [`lexgen_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_model` a valid
/// pointer; both must stay alive for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn lexgen_model_load(
    path: *const c_char,
    out_model: *mut *mut LexgenModel,
) -> LexgenStatus {
    guarded(|| {
        if out_model.is_null() {
            return fail(LexgenStatus::Usage, "out_model must not be null");
        }
        let path = try_ffi!(unsafe { required_str(path, "path") });
        let ckpt = match load_checkpoint(Path::new(path)) {
            Ok(c) => c,
            Err(e) => return fail_with(e),
        };
        let handle = Box::into_raw(Box::new(LexgenModel { ckpt }));
        unsafe { *out_model = handle };
        LexgenStatus::Ok
    })
}

/// Releases a handle from [`lexgen_model_load`]. Null is a no-op.
///
/// # Safety
/// `model` must be null or a handle that has not already been freed, with
/// no other call using it concurrently.
#[no_mangle]
pub unsafe extern "C" fn lexgen_model_free(model: *mut LexgenModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Returns the training step the checkpoint was saved at, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle from [`lexgen_model_load`].
#[no_mangle]
pub unsafe extern "C" fn lexgen_model_step(model: *const LexgenModel) -> u64 {
    match unsafe { model.as_ref() } {
        Some(m) => m.ckpt.step,
        None => 0,
    }
}

/// Returns the validation loss recorded in the checkpoint, or NaN for
/// null.
///
/// # Safety
/// `model` must be null or a live handle from [`lexgen_model_load`].
#[no_mangle]
pub unsafe extern "C" fn lexgen_model_val_loss(model: *const LexgenModel) -> f64 {
    match unsafe { model.as_ref() } {
        Some(m) => m.ckpt.val_loss,
        None => f64::NAN,
    }
}

/// Beam-searches translations of `source` into `tgt_lang` and writes a
/// JSON array to `out_json`, best first, each element an object with a
/// `"text"` string and a `"score"` number (length-normalized log
/// probability). At most `topk` results are returned; release the string
/// with [`lexgen_string_free`].
///
/// # Safety
/// `model` must be a live handle; `tgt_lang` and `source` must be
/// NUL-terminated strings; `out_json` must be a valid pointer. All must
/// stay alive for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn lexgen_predict(
    model: *const LexgenModel,
    tgt_lang: *const c_char,
    source: *const c_char,
    beam_size: u32,
    topk: u32,
    length_penalty_alpha: f64,
    out_json: *mut *mut c_char,
) -> LexgenStatus {
    guarded(|| {
        if out_json.is_null() {
            return fail(LexgenStatus::Usage, "out_json must not be null");
        }
        let Some(model) = (unsafe { model.as_ref() }) else {
            return fail(LexgenStatus::Usage, "model must not be null");
        };
        let tgt_lang = try_ffi!(unsafe { required_str(tgt_lang, "tgt_lang") });
        let source = try_ffi!(unsafe { required_str(source, "source") });
        if beam_size == 0 || topk == 0 {
            return fail(LexgenStatus::Usage, "beam_size and topk must be at least 1");
        }
        if !length_penalty_alpha.is_finite() {
            return fail(LexgenStatus::Usage, "length_penalty_alpha must be finite");
        }
        let mut preds = match predict_topk(
            &model.ckpt.params,
            &model.ckpt.vocab,
            tgt_lang,
            source,
            beam_size as usize,
            length_penalty_alpha,
        ) {
            Ok(p) => p,
            Err(e) => return fail_with(e),
        };
        preds.truncate(topk as usize);
        let rows: Vec<serde_json::Value> = preds
            .iter()
            .map(|p| serde_json::json!({ "text": p.text, "score": p.score }))
            .collect();
        let json = serde_json::Value::Array(rows).to_string();
        let out = CString::new(json).expect("serde_json escapes control characters");
        unsafe { *out_json = out.into_raw() };
        LexgenStatus::Ok
    })
}

/// Scores `hypothesis` against `reference_count` reference strings with
/// ChrF++ (character n-grams up to 4 plus unigram word matches, beta 2)
/// and writes the best score in [0, 100] to `out_score`.
///
/// # Safety
/// `hypothesis` must be a NUL-terminated string; `references` must point
/// to `reference_count` NUL-terminated strings; `out_score` must be a
/// valid pointer. All must stay alive for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn lexgen_chrf(
    hypothesis: *const c_char,
    references: *const *const c_char,
    reference_count: usize,
    out_score: *mut f64,
) -> LexgenStatus {
    guarded(|| {
        if out_score.is_null() {
            return fail(LexgenStatus::Usage, "out_score must not be null");
        }
        let hypothesis = try_ffi!(unsafe { required_str(hypothesis, "hypothesis") });
        if references.is_null() && reference_count > 0 {
            return fail(LexgenStatus::Usage, "references must not be null");
        }
        let raw: &[*const c_char] = if reference_count == 0 {
            &[]
        } else {
            unsafe { std::slice::from_raw_parts(references, reference_count) }
        };
        let mut refs = Vec::with_capacity(raw.len());
        for (i, ptr) in raw.iter().enumerate() {
            refs.push(try_ffi!(unsafe { required_str(*ptr, &format!("references[{i}]")) }));
        }
        match chrf_pp(hypothesis, &refs, &ChrfConfig::default()) {
            Ok(score) => {
                unsafe { *out_score = score };
                LexgenStatus::Ok
            }
            Err(e) => fail_with(e),
        }
    })
}

/// Releases a string returned through an out-parameter. Null is a no-op.
///
/// # Safety
/// `s` must be null or a string produced by this library that has not
/// already been freed.
#[no_mangle]
pub unsafe extern "C" fn lexgen_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
