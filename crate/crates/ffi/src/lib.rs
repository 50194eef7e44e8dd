//! C ABI over `ninformer` inference.
//!
//! Models live behind the opaque `NinModel` handle. Every fallible call
//! returns a `NinStatus`; on failure `nin_last_error()` describes the most
//! recent error on the calling thread. Panics never cross the boundary.
//!
//! The header `include/ninformer.h` is generated from this file at build
//! time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ninformer::benchmark::count_flops;
use ninformer::models::{build_model, load_checkpoint, save_checkpoint, Model, ModelConfig};
use ninformer::presets::preset;
use ninformer::{Error, Tensor, TensorError};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NinStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Checkpoint = 5,
    Numeric = 6,
    Panic = 7,
}

/// Opaque model handle. Create with `nin_model_from_preset`,
/// `nin_model_from_config_json` or `nin_model_load`; release with
/// `nin_model_free`.
pub struct NinModel {
    inner: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> NinStatus {
    match e {
        Error::Io { .. } => NinStatus::Io,
        Error::Format { .. } => NinStatus::Format,
        Error::Checkpoint(_) => NinStatus::Checkpoint,
        Error::NonFiniteLoss { .. } | Error::Tensor(TensorError::NonFinite { .. }) => {
            NinStatus::Numeric
        }
        _ => NinStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (NinStatus, String)>) -> NinStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NinStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            NinStatus::Panic
        }
    }
}

fn lift(e: Error) -> (NinStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (NinStatus, String) {
    (NinStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (NinStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (NinStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn model_ref<'a>(m: *const NinModel) -> Result<&'a NinModel, (NinStatus, String)> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn emit(out: *mut *mut NinModel, inner: Model<f32>) -> Result<(), (NinStatus, String)> {
    *out = Box::into_raw(Box::new(NinModel { inner }));
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn nin_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nin_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a freshly initialized model from a preset name such as
/// "ninformer-cifar10-paper".
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nin_model_from_preset(
    name: *const c_char,
    seed: u64,
    out: *mut *mut NinModel,
) -> NinStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let rc = preset(c_str(name, "name")?).map_err(lift)?;
        emit(out, build_model(&rc.model, seed).map_err(lift)?)
    })
}

/// Builds a freshly initialized model from a model-config JSON object.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nin_model_from_config_json(
    json: *const c_char,
    seed: u64,
    out: *mut *mut NinModel,
) -> NinStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: ModelConfig = serde_json::from_str(c_str(json, "json")?)
            .map_err(|e| (NinStatus::InvalidArgument, e.to_string()))?;
        cfg.validate().map_err(lift)?;
        emit(out, build_model(&cfg, seed).map_err(lift)?)
    })
}

/// Loads a checkpoint written by `ninformer train` or `nin_model_save`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nin_model_load(path: *const c_char, out: *mut *mut NinModel) -> NinStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        emit(out, load_checkpoint(Path::new(path)).map_err(lift)?)
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nin_model_save(model: *const NinModel, path: *const c_char) -> NinStatus {
    guard(|| {
        let m = model_ref(model)?;
        save_checkpoint(&m.inner, Path::new(c_str(path, "path")?)).map_err(lift)
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nin_model_free(model: *mut NinModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the expected image height, width and channels.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nin_model_input_shape(
    model: *const NinModel,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> NinStatus {
    guard(|| {
        let s = model_ref(model)?.inner.config.image_size;
        if height.is_null() || width.is_null() || channels.is_null() {
            return Err(null("shape output"));
        }
        (*height, *width, *channels) = (s.height, s.width, s.channels);
        Ok(())
    })
}

/// Number of classes, or 0 for a NULL model.
///
/// # Safety
/// `model` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn nin_model_num_classes(model: *const NinModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.n_classes)
}

/// Trainable scalar count, or 0 for a NULL model.
///
/// # Safety
/// `model` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn nin_model_num_params(model: *const NinModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_params())
}

/// Analytic multiply-accumulates per image, or 0 for a NULL model.
///
/// # Safety
/// `model` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn nin_model_flops_per_sample(model: *const NinModel) -> u64 {
    model
        .as_ref()
        .map_or(0, |m| count_flops(&m.inner.config).total())
}

unsafe fn run_logits(
    m: &NinModel,
    images: *const f32,
    batch: usize,
) -> Result<Tensor<f32>, (NinStatus, String)> {
    if images.is_null() {
        return Err(null("images"));
    }
    if batch == 0 {
        return Err((NinStatus::InvalidArgument, "batch must be positive".into()));
    }
    let s = m.inner.config.image_size;
    let len = batch * s.numel();
    let data = std::slice::from_raw_parts(images, len).to_vec();
    let x = Tensor::new(vec![batch, s.height, s.width, s.channels], data)
        .map_err(|e| lift(e.into()))?;
    m.inner.logits(&x).map_err(lift)
}

/// Class scores for `batch` images laid out `[batch][height][width][channels]`.
/// `out_len` must equal `batch * nin_model_num_classes(model)`.
///
/// # Safety
/// `images` must hold `batch * height * width * channels` floats and
/// `out_logits` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn nin_model_logits(
    model: *const NinModel,
    images: *const f32,
    batch: usize,
    out_logits: *mut f32,
    out_len: usize,
) -> NinStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out_logits.is_null() {
            return Err(null("out_logits"));
        }
        let want = batch * m.inner.config.n_classes;
        if out_len != want {
            return Err((
                NinStatus::InvalidArgument,
                format!("out_len is {out_len}, expected {want}"),
            ));
        }
        let logits = run_logits(m, images, batch)?;
        std::slice::from_raw_parts_mut(out_logits, out_len).copy_from_slice(logits.data());
        Ok(())
    })
}

/// Arg-max class per image, ties going to the lowest index.
///
/// # Safety
/// `images` as for `nin_model_logits`; `out_labels` must hold `batch` values.
#[no_mangle]
pub unsafe extern "C" fn nin_model_predict(
    model: *const NinModel,
    images: *const f32,
    batch: usize,
    out_labels: *mut u32,
) -> NinStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out_labels.is_null() {
            return Err(null("out_labels"));
        }
        let labels = ninformer::models::argmax_rows(&run_logits(m, images, batch)?);
        let out = std::slice::from_raw_parts_mut(out_labels, batch);
        for (o, l) in out.iter_mut().zip(labels) {
            *o = l as u32;
        }
        Ok(())
    })
}
