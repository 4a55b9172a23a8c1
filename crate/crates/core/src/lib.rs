//! Multi-label, multi-certainty sentence classification with per-label
//! attention over interchangeable sentence encoders.

pub mod autodiff;
pub mod corpus;
pub mod embed_pretrain;
pub mod embeddings;
pub mod encoders;
pub mod error;
pub mod heads;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod schema;
pub mod synth;
pub mod toy;
pub mod training;

pub use error::{Error, Result, SchemaError};
