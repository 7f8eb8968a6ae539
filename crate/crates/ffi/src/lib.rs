//! C ABI over the paraserve engine.
//!
//! Every function returns a [`ParaStatus`]; on failure a message is kept for
//! the calling thread and can be read with [`para_last_error`]. Handles are
//! opaque and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use paraserve::backbone::generate;
use paraserve::format::{load_adapter_for, load_model, save_adapter, save_model, FormatError};
use paraserve::peft::{count_params, AdapterError, AdapterHyper, AdapterSet, Method};
use paraserve::{Model, ModelConfig, ModelError, Scalar};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Model = 5,
    Adapter = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Codes for the `precision` arguments.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParaPrecision {
    F32 = 0,
    F64 = 1,
}

/// Codes for the `method` arguments.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParaMethod {
    None = 0,
    Para = 1,
    Lora = 2,
    Ia3 = 3,
}

fn method_arg(raw: u32) -> Result<Method, Failure> {
    Method::ALL
        .into_iter()
        .find(|m| method_code(*m) == raw)
        .ok_or_else(|| Failure(ParaStatus::InvalidArgument, format!("unknown method code {raw}")))
}

fn method_code(m: Method) -> u32 {
    (match m {
        Method::None => ParaMethod::None,
        Method::Para => ParaMethod::Para,
        Method::Lora => ParaMethod::Lora,
        Method::Ia3 => ParaMethod::Ia3,
    }) as u32
}

fn precision_arg(raw: u32) -> Result<ParaPrecision, Failure> {
    match raw {
        0 => Ok(ParaPrecision::F32),
        1 => Ok(ParaPrecision::F64),
        _ => Err(Failure(ParaStatus::InvalidArgument, format!("unknown precision code {raw}"))),
    }
}

/// Backbone shape. Activation, positions and norm epsilon take the engine
/// defaults (SiLU, rotary, 1e-5).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParaModelConfig {
    pub n_layers: u32,
    pub d_model: u32,
    pub d_ffn: u32,
    pub n_heads: u32,
    pub vocab_size: u32,
    pub max_seq_len: u32,
}

impl ParaModelConfig {
    fn to_core(self) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers as usize,
            d_model: self.d_model as usize,
            d_ffn: self.d_ffn as usize,
            n_heads: self.n_heads as usize,
            vocab_size: self.vocab_size as usize,
            max_seq_len: self.max_seq_len as usize,
            ..ModelConfig::desk()
        }
    }

    fn from_core(c: &ModelConfig) -> Self {
        ParaModelConfig {
            n_layers: c.n_layers as u32,
            d_model: c.d_model as u32,
            d_ffn: c.d_ffn as u32,
            n_heads: c.n_heads as u32,
            vocab_size: c.vocab_size as u32,
            max_seq_len: c.max_seq_len as u32,
        }
    }
}

enum ModelInner {
    F32(Arc<Model<f32>>),
    F64(Arc<Model<f64>>),
}

/// Opaque frozen backbone.
pub struct ParaModel {
    inner: ModelInner,
}

enum AdapterInner {
    F32(Arc<AdapterSet<f32>>),
    F64(Arc<AdapterSet<f64>>),
}

/// Opaque adapter set bound to the precision of the model it was made for.
pub struct ParaAdapter {
    inner: AdapterInner,
}

struct Failure(ParaStatus, String);

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        let status = if matches!(e, FormatError::Io { .. }) { ParaStatus::Io } else { ParaStatus::Format };
        Failure(status, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure(ParaStatus::Model, e.to_string())
    }
}

impl From<AdapterError> for Failure {
    fn from(e: AdapterError) -> Self {
        Failure(ParaStatus::Adapter, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ParaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ParaStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ParaStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ParaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ParaStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message describing the last failed call on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn para_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn para_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the default desk configuration into `out`.
///
/// # Safety
/// `out` must be null or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn para_config_desk(out: *mut ParaModelConfig) -> ParaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ParaModelConfig::from_core(&ModelConfig::desk());
        Ok(())
    })
}

/// Creates a randomly initialized backbone.
///
/// # Safety
/// `config` must point to a valid config and `out` to writable storage for
/// one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn para_model_new_random(
    config: *const ParaModelConfig,
    seed: u64,
    precision: u32,
    out: *mut *mut ParaModel,
) -> ParaStatus {
    guard(|| {
        let precision = precision_arg(precision)?;
        let c = config.as_ref().ok_or_else(|| null("config"))?.to_core();
        let inner = match precision {
            ParaPrecision::F32 => ModelInner::F32(Arc::new(Model::random(c, seed)?)),
            ParaPrecision::F64 => ModelInner::F64(Arc::new(Model::random(c, seed)?)),
        };
        write_out(out, ParaModel { inner })
    })
}

/// Loads a weights file written by `paraserve init` or [`para_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as for
/// [`para_model_new_random`].
#[no_mangle]
pub unsafe extern "C" fn para_model_load(
    path: *const c_char,
    precision: u32,
    out: *mut *mut ParaModel,
) -> ParaStatus {
    guard(|| {
        let precision = precision_arg(precision)?;
        let p = path_arg(path)?;
        let inner = match precision {
            ParaPrecision::F32 => ModelInner::F32(Arc::new(load_model(&p)?)),
            ParaPrecision::F64 => ModelInner::F64(Arc::new(load_model(&p)?)),
        };
        write_out(out, ParaModel { inner })
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn para_model_save(model: *const ParaModel, path: *const c_char) -> ParaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let p = path_arg(path)?;
        match &m.inner {
            ModelInner::F32(x) => save_model(&p, x.as_ref())?,
            ModelInner::F64(x) => save_model(&p, x.as_ref())?,
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn para_model_config(model: *const ParaModel, out: *mut ParaModelConfig) -> ParaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = match &m.inner {
            ModelInner::F32(x) => *x.config(),
            ModelInner::F64(x) => *x.config(),
        };
        *out = ParaModelConfig::from_core(&c);
        Ok(())
    })
}

/// Releases a model. Null is ignored. Adapters made for it stay valid.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn para_model_free(model: *mut ParaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn init_for<T: Scalar>(model: &Model<T>, method: Method, seed: u64) -> Result<Arc<AdapterSet<T>>, Failure> {
    Ok(Arc::new(AdapterSet::init(model.config(), method, &AdapterHyper::default(), seed)?))
}

/// Fresh adapter with default hyper-parameters (r = 12; LoRA rank 16 on Q
/// and V). Fresh adapters leave the backbone output unchanged.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn para_adapter_init(
    model: *const ParaModel,
    method: u32,
    seed: u64,
    out: *mut *mut ParaAdapter,
) -> ParaStatus {
    guard(|| {
        let method = method_arg(method)?;
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let inner = match &m.inner {
            ModelInner::F32(x) => AdapterInner::F32(init_for(x, method, seed)?),
            ModelInner::F64(x) => AdapterInner::F64(init_for(x, method, seed)?),
        };
        write_out(out, ParaAdapter { inner })
    })
}

/// Loads an adapter file and checks it against `model`.
///
/// # Safety
/// `model` must be a live handle, `path` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn para_adapter_load(
    model: *const ParaModel,
    path: *const c_char,
    out: *mut *mut ParaAdapter,
) -> ParaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let p = path_arg(path)?;
        let bytes = std::fs::read(&p).map_err(|e| Failure(ParaStatus::Io, format!("{}: {e}", p.display())))?;
        let inner = match &m.inner {
            ModelInner::F32(x) => AdapterInner::F32(Arc::new(load_adapter_for(&bytes, x.config())?)),
            ModelInner::F64(x) => AdapterInner::F64(Arc::new(load_adapter_for(&bytes, x.config())?)),
        };
        write_out(out, ParaAdapter { inner })
    })
}

/// # Safety
/// `adapter` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn para_adapter_save(adapter: *const ParaAdapter, path: *const c_char) -> ParaStatus {
    guard(|| {
        let a = adapter.as_ref().ok_or_else(|| null("adapter"))?;
        let p = path_arg(path)?;
        match &a.inner {
            AdapterInner::F32(x) => save_adapter(&p, x.as_ref())?,
            AdapterInner::F64(x) => save_adapter(&p, x.as_ref())?,
        }
        Ok(())
    })
}

/// # Safety
/// `adapter` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn para_adapter_method(adapter: *const ParaAdapter, out: *mut u32) -> ParaStatus {
    guard(|| {
        let a = adapter.as_ref().ok_or_else(|| null("adapter"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = method_code(match &a.inner {
            AdapterInner::F32(x) => x.method(),
            AdapterInner::F64(x) => x.method(),
        });
        Ok(())
    })
}

/// # Safety
/// `adapter` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn para_adapter_free(adapter: *mut ParaAdapter) {
    if !adapter.is_null() {
        drop(Box::from_raw(adapter));
    }
}

/// Generates `max_new` tokens after `prompt` with beam search of width
/// `beam` (1 is greedy), writing them to `out_tokens`. `adapter` may be null
/// for the bare backbone. `out_len` receives the number of tokens written;
/// if `out_cap < max_new` nothing is generated, `out_len` receives the
/// required capacity and `BUFFER_TOO_SMALL` is returned.
/// `out_generator_invocations` may be null.
///
/// # Safety
/// `prompt` must point to `prompt_len` ids, `out_tokens` to `out_cap`
/// writable ids, and the handles must be live.
#[no_mangle]
pub unsafe extern "C" fn para_generate(
    model: *const ParaModel,
    adapter: *const ParaAdapter,
    prompt: *const u32,
    prompt_len: usize,
    max_new: usize,
    beam: usize,
    out_tokens: *mut u32,
    out_cap: usize,
    out_len: *mut usize,
    out_generator_invocations: *mut usize,
) -> ParaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        if prompt.is_null() && prompt_len > 0 {
            return Err(null("prompt"));
        }
        if out_cap < max_new {
            *out_len = max_new;
            return Err(Failure(
                ParaStatus::BufferTooSmall,
                format!("output buffer holds {out_cap} tokens, {max_new} needed"),
            ));
        }
        if out_tokens.is_null() && max_new > 0 {
            return Err(null("out_tokens"));
        }
        let ids: &[u32] = if prompt_len == 0 { &[] } else { std::slice::from_raw_parts(prompt, prompt_len) };
        let g = match (&m.inner, adapter.as_ref().map(|a| &a.inner)) {
            (ModelInner::F32(x), None) => generate(x, &Arc::new(AdapterSet::none(x.config())), ids, max_new, beam)?,
            (ModelInner::F64(x), None) => generate(x, &Arc::new(AdapterSet::none(x.config())), ids, max_new, beam)?,
            (ModelInner::F32(x), Some(AdapterInner::F32(a))) => generate(x, a, ids, max_new, beam)?,
            (ModelInner::F64(x), Some(AdapterInner::F64(a))) => generate(x, a, ids, max_new, beam)?,
            _ => {
                return Err(Failure(
                    ParaStatus::InvalidArgument,
                    "adapter and model precisions differ".into(),
                ))
            }
        };
        if !g.tokens.is_empty() {
            std::slice::from_raw_parts_mut(out_tokens, g.tokens.len()).copy_from_slice(&g.tokens);
        }
        *out_len = g.tokens.len();
        if !out_generator_invocations.is_null() {
            *out_generator_invocations = g.generator_invocations;
        }
        Ok(())
    })
}

/// Tunable-parameter count for `method` with default hyper-parameters.
/// `out_headline` excludes the vector-generator bias; `out_with_bias`
/// includes it.
///
/// # Safety
/// `config` must be valid; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn para_count_params(
    config: *const ParaModelConfig,
    method: u32,
    out_headline: *mut u64,
    out_with_bias: *mut u64,
) -> ParaStatus {
    guard(|| {
        let method = method_arg(method)?;
        let c = config.as_ref().ok_or_else(|| null("config"))?.to_core();
        if out_headline.is_null() || out_with_bias.is_null() {
            return Err(null("output"));
        }
        let n = count_params(&c, method, &AdapterHyper::default())?;
        *out_headline = n.headline;
        *out_with_bias = n.with_bias;
        Ok(())
    })
}
