//! C ABI for the leafcast pipeline.
//!
//! All functions return a [`LeafcastStatus`]; on any non-OK status the
//! thread-local error message is available through [`leafcast_last_error`].
//! Models are exchanged as opaque handles that must be released with
//! [`leafcast_model_free`]. The generated header lives at
//! `include/leafcast.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use leafcast::config::RunConfig;
use leafcast::features::DatasetManifest;
use leafcast::nn::LstmModel;
use leafcast::pipeline::{self, PipelineError};

/// Call outcome; mirrors the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafcastStatus {
    Ok = 0,
    UsageError = 1,
    DataError = 2,
    NumericError = 3,
    InternalError = 4,
}

/// Opaque trained-model handle.
pub struct LeafcastModel {
    model: LstmModel,
    manifest: DatasetManifest,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::default();
    });
}

fn status_of(err: &PipelineError) -> LeafcastStatus {
    match err.exit_code() {
        1 => LeafcastStatus::UsageError,
        2 => LeafcastStatus::DataError,
        3 => LeafcastStatus::NumericError,
        _ => LeafcastStatus::InternalError,
    }
}

fn run_guarded(body: impl FnOnce() -> Result<(), PipelineError>) -> LeafcastStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => LeafcastStatus::Ok,
        Ok(Err(err)) => {
            set_last_error(&err.to_string());
            status_of(&err)
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in leafcast".into());
            set_last_error(&message);
            LeafcastStatus::InternalError
        }
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated UTF-8 string.
unsafe fn optional_path(ptr: *const c_char) -> Result<Option<PathBuf>, PipelineError> {
    if ptr.is_null() {
        return Ok(None);
    }
    let text = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| PipelineError::Usage("path is not valid UTF-8".into()))?;
    Ok(Some(PathBuf::from(text)))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, PipelineError> {
    Ok(RunConfig::load(path)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn leafcast_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message for this thread into `buf` (truncated to
/// `cap - 1` bytes, always NUL-terminated) and returns the full message
/// length in bytes. With a null buffer or zero capacity, just returns the
/// length.
///
/// # Safety
/// `buf` must be null or point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn leafcast_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Generates a synthetic dataset at the config's input paths.
///
/// # Safety
/// `config_path` must be null (defaults) or a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn leafcast_run_synth(config_path: *const c_char) -> LeafcastStatus {
    let path = match optional_path(config_path) {
        Ok(p) => p,
        Err(e) => {
            set_last_error(&e.to_string());
            return status_of(&e);
        }
    };
    run_guarded(|| pipeline::cmd_synth(&load_config(path.as_deref())?))
}

/// Trains the configured model; writes the checkpoint and metrics.
///
/// # Safety
/// `config_path` must be null (defaults) or a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn leafcast_run_train(config_path: *const c_char) -> LeafcastStatus {
    let path = match optional_path(config_path) {
        Ok(p) => p,
        Err(e) => {
            set_last_error(&e.to_string());
            return status_of(&e);
        }
    };
    run_guarded(|| pipeline::cmd_train(&load_config(path.as_deref())?))
}

/// Runs the Hyperband search; writes the report and best checkpoint.
///
/// # Safety
/// `config_path` must be null (defaults) or a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn leafcast_run_tune(config_path: *const c_char) -> LeafcastStatus {
    let path = match optional_path(config_path) {
        Ok(p) => p,
        Err(e) => {
            set_last_error(&e.to_string());
            return status_of(&e);
        }
    };
    run_guarded(|| pipeline::cmd_tune(&load_config(path.as_deref())?))
}

fn checkpoint_or_default(
    config: &RunConfig,
    checkpoint: Option<PathBuf>,
) -> PathBuf {
    checkpoint.unwrap_or_else(|| config.paths.out_dir.join(pipeline::CHECKPOINT_FILE))
}

/// Evaluates a checkpoint on the holdout tree; writes all reports.
///
/// # Safety
/// Both arguments must be null or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn leafcast_run_evaluate(
    config_path: *const c_char,
    checkpoint_path: *const c_char,
) -> LeafcastStatus {
    let (path, ckpt) = match (optional_path(config_path), optional_path(checkpoint_path)) {
        (Ok(p), Ok(c)) => (p, c),
        (Err(e), _) | (_, Err(e)) => {
            set_last_error(&e.to_string());
            return status_of(&e);
        }
    };
    run_guarded(|| {
        let config = load_config(path.as_deref())?;
        let ckpt = checkpoint_or_default(&config, ckpt);
        pipeline::cmd_evaluate(&config, &ckpt)
    })
}

/// Writes per-day predictions for every tree.
///
/// # Safety
/// Both arguments must be null or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn leafcast_run_predict(
    config_path: *const c_char,
    checkpoint_path: *const c_char,
) -> LeafcastStatus {
    let (path, ckpt) = match (optional_path(config_path), optional_path(checkpoint_path)) {
        (Ok(p), Ok(c)) => (p, c),
        (Err(e), _) | (_, Err(e)) => {
            set_last_error(&e.to_string());
            return status_of(&e);
        }
    };
    run_guarded(|| {
        let config = load_config(path.as_deref())?;
        let ckpt = checkpoint_or_default(&config, ckpt);
        pipeline::cmd_predict(&config, &ckpt)
    })
}

/// Loads a checkpoint into an opaque model handle stored in `*out`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
/// On success the caller owns the handle and must release it with
/// [`leafcast_model_free`].
#[no_mangle]
pub unsafe extern "C" fn leafcast_model_load(
    path: *const c_char,
    out: *mut *mut LeafcastModel,
) -> LeafcastStatus {
    clear_last_error();
    if path.is_null() || out.is_null() {
        set_last_error("null pointer argument");
        return LeafcastStatus::UsageError;
    }
    *out = std::ptr::null_mut();
    let path = match optional_path(path) {
        Ok(Some(p)) => p,
        _ => {
            set_last_error("invalid path");
            return LeafcastStatus::UsageError;
        }
    };
    let result = catch_unwind(|| -> Result<LeafcastModel, PipelineError> {
        let file = std::fs::File::open(&path)
            .map_err(|e| PipelineError::Data(format!("cannot open `{}`: {e}", path.display())))?;
        let (model, manifest) = leafcast::nn::load_checkpoint(file).map_err(PipelineError::from)?;
        Ok(LeafcastModel { model, manifest })
    });
    match result {
        Ok(Ok(handle)) => {
            *out = Box::into_raw(Box::new(handle));
            LeafcastStatus::Ok
        }
        Ok(Err(err)) => {
            set_last_error(&err.to_string());
            status_of(&err)
        }
        Err(_) => {
            set_last_error("panic while loading checkpoint");
            LeafcastStatus::InternalError
        }
    }
}

/// Releases a handle returned by [`leafcast_model_load`]. Null is a no-op.
///
/// # Safety
/// `model` must be null or a pointer previously returned by
/// [`leafcast_model_load`] that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn leafcast_model_free(model: *mut LeafcastModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Stores the model's expected window length (days) in `*out`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn leafcast_model_window_size(
    model: *const LeafcastModel,
    out: *mut usize,
) -> LeafcastStatus {
    if model.is_null() || out.is_null() {
        set_last_error("null pointer argument");
        return LeafcastStatus::UsageError;
    }
    *out = (*model).model.config.window_size;
    LeafcastStatus::Ok
}

/// Stores the model's expected feature count per day in `*out`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn leafcast_model_feature_count(
    model: *const LeafcastModel,
    out: *mut usize,
) -> LeafcastStatus {
    if model.is_null() || out.is_null() {
        set_last_error("null pointer argument");
        return LeafcastStatus::UsageError;
    }
    *out = (*model).model.config.feature_count;
    LeafcastStatus::Ok
}

/// Stores the model's classification threshold in `*out`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn leafcast_model_threshold(
    model: *const LeafcastModel,
    out: *mut f64,
) -> LeafcastStatus {
    if model.is_null() || out.is_null() {
        set_last_error("null pointer argument");
        return LeafcastStatus::UsageError;
    }
    *out = (*model).model.config.threshold;
    LeafcastStatus::Ok
}

/// Runs one window through the model and stores the leaf-fall probability in
/// `*out_probability`.
///
/// `window` is a row-major `rows x cols` matrix of scaled feature values in
/// the column order recorded in the checkpoint (`rows` = window size,
/// `cols` = feature count).
///
/// # Safety
/// `model` must be a live handle, `window` must point to `rows * cols`
/// doubles, and `out_probability` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn leafcast_model_predict(
    model: *const LeafcastModel,
    window: *const f64,
    rows: usize,
    cols: usize,
    out_probability: *mut f64,
) -> LeafcastStatus {
    clear_last_error();
    if model.is_null() || window.is_null() || out_probability.is_null() {
        set_last_error("null pointer argument");
        return LeafcastStatus::UsageError;
    }
    let handle = &*model;
    let config = &handle.model.config;
    if rows != config.window_size || cols != config.feature_count {
        set_last_error(&format!(
            "window shape {rows}x{cols} does not match model {}x{} ({} feature columns)",
            config.window_size,
            config.feature_count,
            handle.manifest.feature_names.len(),
        ));
        return LeafcastStatus::UsageError;
    }
    let values = std::slice::from_raw_parts(window, rows * cols);
    match catch_unwind(AssertUnwindSafe(|| handle.model.forward(values))) {
        Ok(Ok(p)) => {
            *out_probability = p;
            LeafcastStatus::Ok
        }
        Ok(Err(err)) => {
            set_last_error(&err.to_string());
            LeafcastStatus::NumericError
        }
        Err(_) => {
            set_last_error("panic during forward pass");
            LeafcastStatus::InternalError
        }
    }
}
