//! Dense tensors with a define-by-run computation graph and reverse-mode
//! gradients.
//!
//! A [`Graph`] borrows a [`ParamStore`] read-only, records every operation
//! eagerly as it is applied, and [`Graph::backward`] walks the record in
//! reverse. All reductions run left to right in index order, so forward and
//! backward passes are bitwise reproducible for identical inputs.

mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_against, GradCheckReport, ParamCheck};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tensor::Tensor;

/// Floating point element type of tensors; implemented for `f64` (default)
/// and `f32`.
pub trait Real:
    Float + FromPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    fn lit(v: f64) -> Self;
    fn to_f64_lossless(self) -> f64;
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn to_f64_lossless(self) -> f64 {
        self
    }
}

impl Real for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("graph already consumed by backward; call reset first")]
    Consumed,
    #[error("{op}: index out of range ({detail})")]
    Index { op: &'static str, detail: String },
    #[error("loss function is not deterministic (repeat evaluation differs by {0:e})")]
    NonDeterministic(f64),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
}

impl AutodiffError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, AutodiffError::NonFinite { .. })
    }
}

pub type AdResult<T> = std::result::Result<T, AutodiffError>;
