// SPDX-License-Identifier: MIT OR Apache-2.0

//! C ABI over the reward-lens toolkit.
//!
//! Models are opaque [`RlModel`] handles. Every fallible call returns an
//! [`RlStatus`]; on failure the message is available from
//! [`rl_last_error_message`] on the same thread. Structured results come
//! back as JSON strings owned by the library and released with
//! [`rl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use reward_lens::engine::{build_seeded_model, PreferencePair, RewardModelBundle, TransformerConfig};
use reward_lens::patching::{PatchMode, SpliceRule};
use reward_lens::Error;

/// Opaque model handle.
pub struct RlModel {
    bundle: RewardModelBundle,
}

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Format = 4,
    Numeric = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlPatchMode {
    Noising = 0,
    Denoising = 1,
    Zero = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlSpliceRule {
    SharedTokenPrefix = 0,
    Positional = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: RlStatus, msg: impl Into<String>) -> RlStatus {
    set_error(msg.into());
    status
}

fn status_of(err: &Error) -> RlStatus {
    match err.exit_code() {
        2 => RlStatus::InvalidArgument,
        3 => RlStatus::Format,
        4 => RlStatus::Numeric,
        _ => RlStatus::Io,
    }
}

struct Failure(RlStatus, String);

type Call<T> = std::result::Result<T, Failure>;

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Call<()>) -> RlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RlStatus::Ok,
        Ok(Err(Failure(status, msg))) => fail(status, msg),
        Err(_) => fail(RlStatus::Panic, "internal panic"),
    }
}

unsafe fn model<'a>(ptr: *const RlModel) -> Call<&'a RlModel> {
    ptr.as_ref().ok_or(Failure(RlStatus::NullPointer, "model handle is null".into()))
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Call<&'a str> {
    if ptr.is_null() {
        return Err(Failure(RlStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(RlStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Call<()> {
    if out.is_null() {
        return Err(Failure(RlStatus::NullPointer, "output pointer is null".into()));
    }
    out.write(value);
    Ok(())
}

unsafe fn pair(prompt: *const c_char, preferred: *const c_char, dispreferred: *const c_char) -> Call<PreferencePair> {
    Ok(PreferencePair::new(
        text(prompt, "prompt")?,
        text(preferred, "preferred")?,
        text(dispreferred, "dispreferred")?,
    ))
}

unsafe fn write_json<T: serde::Serialize>(out: *mut *mut c_char, value: &T) -> Call<()> {
    let s = serde_json::to_string(value).map_err(|e| Failure(RlStatus::Format, e.to_string()))?;
    let c = CString::new(s).map_err(|e| Failure(RlStatus::Format, e.to_string()))?;
    write_out(out, c.into_raw())
}

fn boxed(bundle: RewardModelBundle) -> *mut RlModel {
    Box::into_raw(Box::new(RlModel { bundle }))
}

/// Loads a model directory. On success `*out` owns a handle that must be
/// released with `rl_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rl_model_load(path: *const c_char, out: *mut *mut RlModel) -> RlStatus {
    guard(|| {
        let path = text(path, "path")?;
        let bundle = reward_lens::io::load_model(Path::new(path))?;
        write_out(out, boxed(bundle))
    })
}

/// Builds the seeded toy model with the given shape.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rl_model_build_seeded(
    n_layers: usize,
    d_model: usize,
    n_heads: usize,
    vocab_size: usize,
    seed: u64,
    out: *mut *mut RlModel,
) -> RlStatus {
    guard(|| {
        let cfg = TransformerConfig::new(n_layers, d_model, n_heads, vocab_size);
        write_out(out, boxed(build_seeded_model(&cfg, seed)?))
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rl_model_free(model: *mut RlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Scalar reward of `response` after `prompt`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rl_model_score(
    model: *const RlModel,
    prompt: *const c_char,
    response: *const c_char,
    out: *mut f64,
) -> RlStatus {
    guard(|| {
        let m = self::model(model)?;
        let r = m.bundle.score(text(prompt, "prompt")?, text(response, "response")?)?;
        write_out(out, r)
    })
}

/// Number of layers, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rl_model_n_layers(model: *const RlModel) -> usize {
    model.as_ref().map_or(0, |m| m.bundle.n_layers())
}

/// Residual width, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rl_model_d_model(model: *const RlModel) -> usize {
    model.as_ref().map_or(0, |m| m.bundle.d_model())
}

/// Copies the reward direction into `buf`. `*written` receives the
/// direction length; when `len` is too short nothing is copied and
/// `RL_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `buf` must hold `len` doubles; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_model_reward_direction(
    model: *const RlModel,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> RlStatus {
    guard(|| {
        let w = self::model(model)?.bundle.reward_direction();
        write_out(written, w.len())?;
        if len < w.len() {
            return Err(Failure(RlStatus::BufferTooSmall, format!("need {} doubles, got {len}", w.len())));
        }
        if buf.is_null() {
            return Err(Failure(RlStatus::NullPointer, "buffer is null".into()));
        }
        std::ptr::copy_nonoverlapping(w.as_ptr(), buf, w.len());
        Ok(())
    })
}

/// Reward-lens trajectories of a preference pair, as JSON.
///
/// # Safety
/// Pointers must be valid; release `*out_json` with `rl_string_free`.
#[no_mangle]
pub unsafe extern "C" fn rl_lens_trace(
    model: *const RlModel,
    prompt: *const c_char,
    preferred: *const c_char,
    dispreferred: *const c_char,
    out_json: *mut *mut c_char,
) -> RlStatus {
    guard(|| {
        let m = self::model(model)?;
        let r = reward_lens::lens::trace(&m.bundle, &pair(prompt, preferred, dispreferred)?)?;
        write_json(out_json, &r)
    })
}

/// Per-component attribution of a preference pair, as JSON.
///
/// # Safety
/// Pointers must be valid; release `*out_json` with `rl_string_free`.
#[no_mangle]
pub unsafe extern "C" fn rl_attribute(
    model: *const RlModel,
    prompt: *const c_char,
    preferred: *const c_char,
    dispreferred: *const c_char,
    out_json: *mut *mut c_char,
) -> RlStatus {
    guard(|| {
        let m = self::model(model)?;
        let r = reward_lens::attribution::attribute(&m.bundle, &pair(prompt, preferred, dispreferred)?)?;
        write_json(out_json, &r)
    })
}

/// Patches every sublayer in turn, as JSON.
///
/// # Safety
/// Pointers must be valid; release `*out_json` with `rl_string_free`.
#[no_mangle]
pub unsafe extern "C" fn rl_patch_all(
    model: *const RlModel,
    prompt: *const c_char,
    preferred: *const c_char,
    dispreferred: *const c_char,
    mode: RlPatchMode,
    rule: RlSpliceRule,
    out_json: *mut *mut c_char,
) -> RlStatus {
    guard(|| {
        let m = self::model(model)?;
        let mode = match mode {
            RlPatchMode::Noising => PatchMode::Noising,
            RlPatchMode::Denoising => PatchMode::Denoising,
            RlPatchMode::Zero => PatchMode::Zero,
        };
        let rule = match rule {
            RlSpliceRule::SharedTokenPrefix => SpliceRule::SharedTokenPrefix,
            RlSpliceRule::Positional => SpliceRule::Positional,
        };
        let p = pair(prompt, preferred, dispreferred)?;
        let r = reward_lens::patching::patch_all_components(&m.bundle, &p, mode, rule)?;
        write_json(out_json, &r)
    })
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn rl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
