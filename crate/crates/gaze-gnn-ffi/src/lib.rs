//! C ABI for the gaze-graph classifier.
//!
//! Handles are opaque pointers owned by this library: create with the
//! `gg_*_new`/`gg_model_*` constructors, release with the matching free.
//! Every fallible call returns a [`GgStatus`]; on failure a human-readable
//! message is stored per thread and readable via [`gg_last_error`] until the
//! next fallible call on that thread. No call unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use gaze_gnn::checkpoint::{load_model, save_model, CheckpointMeta};
use gaze_gnn::data::{patch_durations, prepare_sample, uniform_durations, RawSample};
use gaze_gnn::gaze::{Fixation, FixationSet, PatchGrid};
use gaze_gnn::model::{Model, ModelConfig};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GgStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument violated a documented precondition.
    InvalidArgument = 2,
    /// File could not be read or written.
    Io = 3,
    /// Checkpoint bytes failed structural validation.
    BadCheckpoint = 4,
    /// Internal invariant failure (a bug); see gg_last_error.
    Internal = 5,
}

/// Opaque classifier handle.
pub struct GgModel {
    inner: Model,
}

/// Opaque fixation-list handle with its coordinate frame.
pub struct GgFixations {
    inner: FixationSet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).expect("NUL bytes stripped above");
    });
}

fn clear_error() {
    LAST_ERROR.with(|e| e.borrow_mut().clear_inner());
}

trait ClearInner {
    fn clear_inner(&mut self);
}

impl ClearInner for CString {
    fn clear_inner(&mut self) {
        *self = CString::default();
    }
}

/// Message for the most recent failure on this thread, empty after success.
/// The pointer stays valid until the next gg_* call on the same thread.
#[no_mangle]
pub extern "C" fn gg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

fn fail(status: GgStatus, msg: &str) -> GgStatus {
    set_error(msg);
    status
}

fn guard<F: FnOnce() -> GgStatus>(f: F) -> GgStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(GgStatus::Internal, "internal panic; this is a bug"),
    }
}

unsafe fn path_from(ptr: *const c_char) -> Result<PathBuf, GgStatus> {
    if ptr.is_null() {
        set_error("path is null");
        return Err(GgStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(GgStatus::InvalidArgument)
        }
    }
}

/// Builds a freshly initialized model.
///
/// # Safety
/// `out` must be a valid pointer to a writable `*mut GgModel` slot.
#[no_mangle]
pub unsafe extern "C" fn gg_model_init(
    input_size: usize,
    patch_size: usize,
    embed_dim: usize,
    blocks: usize,
    classes: usize,
    k: usize,
    lambda: f64,
    seed: u64,
    out: *mut *mut GgModel,
) -> GgStatus {
    guard(|| {
        if out.is_null() {
            return fail(GgStatus::NullArgument, "out is null");
        }
        let cfg = ModelConfig {
            input_size,
            patch_size,
            embed_dim,
            blocks,
            classes,
            k,
            lambda,
            ..ModelConfig::default()
        };
        match Model::init(cfg, seed) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(GgModel { inner }));
                GgStatus::Ok
            }
            Err(e) => fail(GgStatus::InvalidArgument, &e.to_string()),
        }
    })
}

/// Loads a model from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn gg_model_load(path: *const c_char, out: *mut *mut GgModel) -> GgStatus {
    guard(|| {
        if out.is_null() {
            return fail(GgStatus::NullArgument, "out is null");
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) => return fail(GgStatus::Io, &format!("cannot open {}: {e}", path.display())),
        };
        match load_model(BufReader::new(file)) {
            Ok((inner, _meta)) => {
                *out = Box::into_raw(Box::new(GgModel { inner }));
                GgStatus::Ok
            }
            Err(e) => fail(GgStatus::BadCheckpoint, &e.to_string()),
        }
    })
}

/// Writes the model to a checkpoint file (seed recorded as provenance).
///
/// # Safety
/// `model` must be a live handle from this library; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gg_model_save(
    model: *const GgModel,
    path: *const c_char,
    seed: u64,
) -> GgStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(GgStatus::NullArgument, "model is null");
        };
        let path = match path_from(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let file = match File::create(&path) {
            Ok(f) => f,
            Err(e) => return fail(GgStatus::Io, &format!("cannot create {}: {e}", path.display())),
        };
        let meta = CheckpointMeta { seed, config_hash: String::new() };
        match save_model(BufWriter::new(file), &model.inner, &meta) {
            Ok(()) => GgStatus::Ok,
            Err(e) => fail(GgStatus::Io, &e.to_string()),
        }
    })
}

/// Releases a model handle; a null pointer is a no-op.
#[no_mangle]
pub extern "C" fn gg_model_free(model: *mut GgModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gg_model_classes(model: *const GgModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.cfg.classes)
}

/// Side length of the square input frame, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gg_model_input_size(model: *const GgModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.cfg.input_size)
}

/// Creates an empty fixation list over a `height` x `width` pixel frame.
///
/// # Safety
/// `out` must be a writable slot.
#[no_mangle]
pub unsafe extern "C" fn gg_fixations_new(
    height: usize,
    width: usize,
    out: *mut *mut GgFixations,
) -> GgStatus {
    guard(|| {
        if out.is_null() {
            return fail(GgStatus::NullArgument, "out is null");
        }
        if height == 0 || width == 0 {
            return fail(GgStatus::InvalidArgument, "frame must be at least 1x1");
        }
        *out = Box::into_raw(Box::new(GgFixations { inner: FixationSet::empty(height, width) }));
        GgStatus::Ok
    })
}

/// Appends one fixation; coordinates must lie inside the frame and the
/// duration must be a positive finite number of seconds.
///
/// # Safety
/// `fixations` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn gg_fixations_push(
    fixations: *mut GgFixations,
    row: f64,
    col: f64,
    duration_s: f64,
) -> GgStatus {
    guard(|| {
        let Some(f) = fixations.as_mut() else {
            return fail(GgStatus::NullArgument, "fixations is null");
        };
        let (h, w) = (f.inner.height as f64, f.inner.width as f64);
        if !row.is_finite() || !col.is_finite() || row < 0.0 || col < 0.0 || row >= h || col >= w {
            return fail(
                GgStatus::InvalidArgument,
                &format!("fixation ({row}, {col}) outside {h}x{w} frame"),
            );
        }
        if !duration_s.is_finite() || duration_s <= 0.0 {
            return fail(GgStatus::InvalidArgument, "duration must be positive and finite");
        }
        f.inner.points.push(Fixation { row, col, duration_s });
        GgStatus::Ok
    })
}

/// Number of fixations, or 0 for a null handle.
///
/// # Safety
/// `fixations` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gg_fixations_len(fixations: *const GgFixations) -> usize {
    fixations.as_ref().map_or(0, |f| f.inner.points.len())
}

/// Releases a fixation-list handle; a null pointer is a no-op.
#[no_mangle]
pub extern "C" fn gg_fixations_free(fixations: *mut GgFixations) {
    if !fixations.is_null() {
        drop(unsafe { Box::from_raw(fixations) });
    }
}

/// Classifies one grayscale image with its gaze record.
///
/// `image` holds `height * width` values in [0, 1], row-major; it is resized
/// to the model frame if needed. `fixations` may be null, meaning no gaze —
/// the model then sees a uniform dwell distribution; otherwise its frame must
/// match `height` x `width`. `probs_out` receives `probs_len` probabilities
/// (must equal the class count) and `class_out`, if non-null, the argmax.
///
/// # Safety
/// All pointers must be valid for their stated lengths; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn gg_predict(
    model: *const GgModel,
    image: *const f64,
    image_len: usize,
    height: usize,
    width: usize,
    fixations: *const GgFixations,
    probs_out: *mut f64,
    probs_len: usize,
    class_out: *mut usize,
) -> GgStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(GgStatus::NullArgument, "model is null");
        };
        if image.is_null() || probs_out.is_null() {
            return fail(GgStatus::NullArgument, "image and probs_out must be non-null");
        }
        if image_len != height * width || image_len == 0 {
            return fail(
                GgStatus::InvalidArgument,
                &format!("image_len {image_len} does not match {height}x{width}"),
            );
        }
        let classes = model.inner.cfg.classes;
        if probs_len != classes {
            return fail(
                GgStatus::InvalidArgument,
                &format!("probs_len {probs_len} but the model has {classes} classes"),
            );
        }
        let pixels = std::slice::from_raw_parts(image, image_len);
        let fix = match fixations.as_ref() {
            Some(f) => {
                if f.inner.height != height || f.inner.width != width {
                    return fail(
                        GgStatus::InvalidArgument,
                        &format!(
                            "fixation frame {}x{} does not match image {height}x{width}",
                            f.inner.height, f.inner.width
                        ),
                    );
                }
                f.inner.clone()
            }
            None => FixationSet::empty(height, width),
        };
        let raw = RawSample { image: pixels.to_vec(), height, width, fixations: fix, label: 0 };
        let side = model.inner.cfg.input_size;
        let result = prepare_sample(&raw, side).and_then(|prepared| {
            let grid = PatchGrid::new(side, side, model.inner.cfg.patch_size)?;
            let durations = if fixations.is_null() || prepared.fixations.points.is_empty() {
                uniform_durations(grid.n_patches())
            } else {
                patch_durations(&prepared.fixations, &grid, false)?
            };
            model.inner.predict(&prepared.image, &durations)
        });
        match result {
            Ok(pred) => {
                std::slice::from_raw_parts_mut(probs_out, probs_len)
                    .copy_from_slice(&pred.probs);
                if let Some(slot) = class_out.as_mut() {
                    *slot = pred.class;
                }
                GgStatus::Ok
            }
            Err(e) => fail(GgStatus::InvalidArgument, &e.to_string()),
        }
    })
}
