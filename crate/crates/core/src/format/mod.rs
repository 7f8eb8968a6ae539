//! Binary containers for backbone weights and adapter sets.
//!
//! Both files share a framing:
//!
//! ```text
//! offset  size  field
//! 0       8     magic
//! 8       4     format version (u32 LE)
//! 12      8     payload length in bytes (u64 LE)
//! 20      n     payload
//! 20+n    4     CRC-32 of bytes [0, 20+n) (u32 LE)
//! ```
//!
//! All integers and scalars are little-endian. A tensor record inside a
//! payload is `name_len: u16, name: utf8, rows: u32, cols: u32` followed by
//! `rows * cols` scalars in row-major order. Scalar width (4 or 8) is stored
//! once per file; loading into the other precision is an error.
//!
//! Every file has a JSON sidecar at `<path>.json` describing its contents.
//! Sidecars are informational: loading reads only the binary file.

mod adapter;
mod codec;
mod weights;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use adapter::{
    deserialize_adapter, load_adapter, load_adapter_for, save_adapter, serialize_adapter,
    AdapterSidecar, ADAPTER_MAGIC, ADAPTER_VERSION,
};
pub use weights::{
    deserialize_model, load_model, save_model, serialize_model, WeightsSidecar, WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
};

use crate::tensor::Precision;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: Vec<u8> },
    #[error("unsupported format version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("truncated payload: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("file holds {file} scalars but {requested} was requested")]
    PrecisionMismatch { file: Precision, requested: Precision },
    #[error("unknown method tag {0}")]
    MethodTag(u8),
    #[error("invalid field {field}: {detail}")]
    InvalidField { field: &'static str, detail: String },
    #[error("adapter {what} is {adapter} but model {what} is {model}")]
    ConfigMismatch { what: &'static str, adapter: usize, model: usize },
    #[error("tensor {index}: expected {expected} with shape {expected_shape:?}, found {found} with shape {found_shape:?}")]
    TensorMismatch {
        index: usize,
        expected: String,
        expected_shape: (usize, usize),
        found: String,
        found_shape: (usize, usize),
    },
    #[error("expected {expected} tensors, found {found}")]
    TensorCount { expected: usize, found: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sidecar json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Location of the JSON sidecar for a binary file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}

fn write_with_sidecar<S: serde::Serialize>(
    path: &Path,
    bytes: &[u8],
    sidecar: &S,
) -> Result<(), FormatError> {
    std::fs::write(path, bytes).map_err(io_err(path))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(sidecar)?;
    std::fs::write(&side, json + "\n").map_err(io_err(&side))
}

fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(io_err(path))
}
