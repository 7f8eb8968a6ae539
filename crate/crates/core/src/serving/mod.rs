//! One frozen backbone serving many tenants, and the latency/memory
//! benchmark over adapter families.

mod bench;
mod flops;
mod registry;

use thiserror::Error;

pub use bench::{run_bench, BenchCell, BenchCheck, BenchMeta, BenchReport, BenchSpec};
pub use flops::{flop_model, FlopEstimate};
pub use registry::{serve_concurrent, Request, SessionFactory, TenantRegistry};

use crate::backbone::ModelError;
use crate::format::FormatError;
use crate::peft::{AdapterError, Method};

#[derive(Debug, Error)]
pub enum ServingError {
    #[error("tenant {0:?} is already registered")]
    DuplicateTenant(String),
    #[error("unknown tenant {0:?}")]
    UnknownTenant(String),
    #[error("no tenant registered for method {0}")]
    MissingMethod(Method),
    #[error("invalid bench spec: {0}")]
    InvalidSpec(String),
    #[error("bench run for {method} beam {beam} produced differing outputs across repetitions")]
    Nondeterministic { method: Method, beam: usize },
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("report output: {0}")]
    Output(String),
}
