//! C ABI for the schgan library.
//!
//! Conventions:
//! - Handles (`SchganDataset`, `SchganModel`) are opaque pointers created
//!   and destroyed by this library; never free them with `free()`.
//! - Functions return [`SchganStatus`]; on any non-OK status,
//!   [`schgan_last_error_message`] yields a human-readable message for the
//!   current thread (free it with [`schgan_string_free`]).
//! - Strings passed in must be NUL-terminated UTF-8. Strings returned are
//!   NUL-terminated, allocated by this library, and freed with
//!   [`schgan_string_free`].
//! - Configs cross the boundary as JSON, with exactly the same schema the
//!   `schgan` CLI reads.

use schgan::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use schgan::data::{load_dataset, save_dataset, synth_generate, Dataset, SynthConfig};
use schgan::eval::{default_k_grid, evaluate};
use schgan::model::{binarize, HashCode, Modality, ModelConfig};
use schgan::trainer::{train, GanModel, TrainConfig};
use schgan::{Error, ErrorCategory};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Status of an FFI call. Non-zero values match the CLI's exit codes where
/// a counterpart exists.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchganStatus {
    Ok = 0,
    /// A required pointer was NULL or a buffer had the wrong size.
    InvalidArgument = 1,
    ConfigError = 2,
    DataError = 3,
    RuntimeError = 4,
}

/// Feature modality selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchganModality {
    Image = 0,
    Text = 1,
}

impl From<SchganModality> for Modality {
    fn from(m: SchganModality) -> Modality {
        match m {
            SchganModality::Image => Modality::Image,
            SchganModality::Text => Modality::Text,
        }
    }
}

/// Retrieval direction selector for evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchganDirection {
    TextToImage = 0,
    ImageToText = 1,
    Both = 2,
}

/// Opaque dataset handle.
pub struct SchganDataset {
    inner: Dataset,
}

/// Opaque model handle holding both trained players.
pub struct SchganModel {
    inner: GanModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SchganStatus {
    match err.category() {
        ErrorCategory::Config => SchganStatus::ConfigError,
        ErrorCategory::Data => SchganStatus::DataError,
        ErrorCategory::Runtime => SchganStatus::RuntimeError,
    }
}

fn fail(err: Error) -> SchganStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn invalid(msg: &str) -> SchganStatus {
    set_error(msg.to_string());
    SchganStatus::InvalidArgument
}

/// Runs a body, converting panics into `RuntimeError` instead of unwinding
/// across the FFI boundary.
fn guarded(body: impl FnOnce() -> SchganStatus) -> SchganStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic".to_string());
            SchganStatus::RuntimeError
        }
    }
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok()
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn schgan_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Returns (and clears) the current thread's last error message, or NULL.
/// Free the result with [`schgan_string_free`].
#[no_mangle]
pub extern "C" fn schgan_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match slot.borrow_mut().take() {
        Some(c) => c.into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Frees a string returned by this library. NULL is accepted.
///
/// # Safety
/// `s` must have been returned by a schgan function and not freed before.
#[no_mangle]
pub unsafe extern "C" fn schgan_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset from a manifest path into a new handle.
///
/// # Safety
/// `manifest_path` must be a valid NUL-terminated string; `out` must be a
/// valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn schgan_dataset_load(
    manifest_path: *const c_char,
    out: *mut *mut SchganDataset,
) -> SchganStatus {
    guarded(|| {
        let (Some(path), false) = (cstr(manifest_path), out.is_null()) else {
            return invalid("manifest_path and out must be non-NULL valid UTF-8");
        };
        match load_dataset(Path::new(path)) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(SchganDataset { inner: ds }));
                SchganStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Generates a synthetic dataset from a JSON [`SynthConfig`]; when
/// `out_dir` is non-NULL the dataset files are also written there.
///
/// # Safety
/// `config_json` must be valid NUL-terminated UTF-8; `out_dir` may be NULL;
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn schgan_dataset_synth(
    config_json: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut SchganDataset,
) -> SchganStatus {
    guarded(|| {
        let (Some(json), false) = (cstr(config_json), out.is_null()) else {
            return invalid("config_json and out must be non-NULL valid UTF-8");
        };
        let cfg: SynthConfig = match serde_json::from_str(json) {
            Ok(c) => c,
            Err(e) => return fail(Error::Config(format!("synth config: {e}"))),
        };
        let generated = match synth_generate(&cfg) {
            Ok(g) => g,
            Err(e) => return fail(e),
        };
        if !out_dir.is_null() {
            let Some(dir) = cstr(out_dir) else {
                return invalid("out_dir must be valid UTF-8");
            };
            if let Err(e) = save_dataset(&generated.dataset, Path::new(dir)) {
                return fail(e);
            }
        }
        *out = Box::into_raw(Box::new(SchganDataset {
            inner: generated.dataset,
        }));
        SchganStatus::Ok
    })
}

/// Releases a dataset handle. NULL is accepted.
///
/// # Safety
/// `ds` must be a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn schgan_dataset_free(ds: *mut SchganDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of retrieval-database items (labeled + unlabeled); 0 on NULL.
///
/// # Safety
/// `ds` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn schgan_dataset_database_size(ds: *const SchganDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.database_size())
}

/// Number of query items; 0 on NULL.
///
/// # Safety
/// `ds` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn schgan_dataset_query_count(ds: *const SchganDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.queries().len())
}

/// Trains on a dataset. `model_config_json` and `train_config_json` use the
/// same JSON schemas as the CLI config's `model` and `train` sections
/// (pass `"{}"` for all-default training). Returns a new model handle.
///
/// # Safety
/// `ds` must be a live dataset handle; the JSON pointers must be valid
/// NUL-terminated UTF-8; `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn schgan_train(
    ds: *const SchganDataset,
    model_config_json: *const c_char,
    train_config_json: *const c_char,
    out: *mut *mut SchganModel,
) -> SchganStatus {
    guarded(|| {
        let Some(ds) = ds.as_ref() else {
            return invalid("dataset handle is NULL");
        };
        let (Some(model_json), Some(train_json), false) = (
            cstr(model_config_json),
            cstr(train_config_json),
            out.is_null(),
        ) else {
            return invalid("config pointers and out must be non-NULL valid UTF-8");
        };
        let model_cfg: ModelConfig = match serde_json::from_str(model_json) {
            Ok(c) => c,
            Err(e) => return fail(Error::Config(format!("model config: {e}"))),
        };
        let train_cfg: TrainConfig = match serde_json::from_str(train_json) {
            Ok(c) => c,
            Err(e) => return fail(Error::Config(format!("train config: {e}"))),
        };
        match train(&ds.inner, &model_cfg, train_cfg) {
            Ok(output) => {
                *out = Box::into_raw(Box::new(SchganModel {
                    inner: output.model,
                }));
                SchganStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Loads a model from a checkpoint file.
///
/// # Safety
/// `path` must be valid NUL-terminated UTF-8; `out` must be a valid pointer
/// to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn schgan_model_load(
    path: *const c_char,
    out: *mut *mut SchganModel,
) -> SchganStatus {
    guarded(|| {
        let (Some(path), false) = (cstr(path), out.is_null()) else {
            return invalid("path and out must be non-NULL valid UTF-8");
        };
        match load_checkpoint(Path::new(path)) {
            Ok(ckpt) => {
                *out = Box::into_raw(Box::new(SchganModel { inner: ckpt.model }));
                SchganStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Saves a model to a checkpoint file (without trainer state).
///
/// # Safety
/// `model` must be a live handle; `path` valid NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn schgan_model_save(
    model: *const SchganModel,
    path: *const c_char,
) -> SchganStatus {
    guarded(|| {
        let (Some(model), Some(path)) = (model.as_ref(), cstr(path)) else {
            return invalid("model and path must be non-NULL");
        };
        let ckpt = Checkpoint {
            model: model.inner.clone(),
            state: None,
        };
        match save_checkpoint(Path::new(path), &ckpt) {
            Ok(()) => SchganStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Releases a model handle. NULL is accepted.
///
/// # Safety
/// `model` must be a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn schgan_model_free(model: *mut SchganModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Hash code length in bits; 0 on NULL.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn schgan_model_code_bits(model: *const SchganModel) -> u32 {
    model.as_ref().map_or(0, |m| m.inner.config().code_len as u32)
}

/// Input feature dimension of one pathway; 0 on NULL.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn schgan_model_input_dim(
    model: *const SchganModel,
    modality: SchganModality,
) -> u32 {
    model
        .as_ref()
        .map_or(0, |m| m.inner.config().input_dim(modality.into()) as u32)
}

/// Encodes one feature vector into a packed binary code using the
/// discriminator's hash function (the retrieval pathway). `out_code` must
/// hold exactly `ceil(code_bits / 8)` bytes; bits are packed LSB-first.
///
/// # Safety
/// `features` must point to `dim` doubles; `out_code` to `out_len` writable
/// bytes; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn schgan_encode(
    model: *const SchganModel,
    modality: SchganModality,
    features: *const f64,
    dim: usize,
    out_code: *mut u8,
    out_len: usize,
) -> SchganStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return invalid("model handle is NULL");
        };
        if features.is_null() || out_code.is_null() {
            return invalid("features and out_code must be non-NULL");
        }
        let m: Modality = modality.into();
        let expected_dim = model.inner.config().input_dim(m);
        if dim != expected_dim {
            return invalid(&format!(
                "feature dim {dim} does not match model input dim {expected_dim}"
            ));
        }
        let code_bytes = model.inner.config().code_len.div_ceil(8);
        if out_len != code_bytes {
            return invalid(&format!(
                "out_len {out_len} does not match code size {code_bytes} bytes"
            ));
        }
        let feats = std::slice::from_raw_parts(features, dim);
        if !feats.iter().all(|v| v.is_finite()) {
            return fail(Error::NonFinite("encode features"));
        }
        match model.inner.discriminator.forward(m, feats) {
            Ok(trace) => {
                let code = binarize(trace.hash());
                let bytes = code.to_bytes();
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), out_code, code_bytes);
                SchganStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Hamming distance between two packed codes of `code_bits` bits, as
/// written by [`schgan_encode`]. Returns -1 on invalid input.
///
/// # Safety
/// `a` and `b` must each point to `ceil(code_bits / 8)` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn schgan_hamming(
    code_bits: u32,
    a: *const u8,
    b: *const u8,
) -> i64 {
    if a.is_null() || b.is_null() || code_bits == 0 {
        return -1;
    }
    let n = (code_bits as usize).div_ceil(8);
    let sa = std::slice::from_raw_parts(a, n);
    let sb = std::slice::from_raw_parts(b, n);
    let (Ok(ca), Ok(cb)) = (
        HashCode::from_bytes(code_bits as usize, sa),
        HashCode::from_bytes(code_bits as usize, sb),
    ) else {
        return -1;
    };
    match ca.hamming(&cb) {
        Ok(d) => d as i64,
        Err(_) => -1,
    }
}

/// Evaluates a model on a dataset's query split and returns the metrics
/// report as a JSON string (free with [`schgan_string_free`]). The top-K
/// grid is the library default clipped to the database size.
///
/// # Safety
/// `model` and `ds` must be live handles; `out_json` must be a valid
/// pointer to a string slot.
#[no_mangle]
pub unsafe extern "C" fn schgan_evaluate(
    model: *const SchganModel,
    ds: *const SchganDataset,
    direction: SchganDirection,
    out_json: *mut *mut c_char,
) -> SchganStatus {
    guarded(|| {
        let (Some(model), Some(ds), false) = (model.as_ref(), ds.as_ref(), out_json.is_null())
        else {
            return invalid("model, dataset and out_json must be non-NULL");
        };
        let directions = match direction {
            SchganDirection::TextToImage => vec![schgan::model::Direction::TextToImage],
            SchganDirection::ImageToText => vec![schgan::model::Direction::ImageToText],
            SchganDirection::Both => vec![
                schgan::model::Direction::TextToImage,
                schgan::model::Direction::ImageToText,
            ],
        };
        let mut k_grid = default_k_grid();
        let db = ds.inner.database_size();
        k_grid.retain(|&k| k <= db);
        if k_grid.is_empty() {
            return fail(Error::Data(format!("database too small to evaluate ({db})")));
        }
        let report = match evaluate(&model.inner.discriminator, &ds.inner, &directions, &k_grid) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        match report.to_json() {
            Ok(json) => {
                let c = CString::new(json).unwrap_or_default();
                *out_json = c.into_raw();
                SchganStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
