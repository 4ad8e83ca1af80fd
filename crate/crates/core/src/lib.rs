//! Streaming embedded topic model.
//!
//! Each incoming batch of documents trains an embedded topic model whose
//! topic embeddings are then aligned with the previous step's topics by
//! unbalanced optimal transport. Matched topics are blended, unmatched ones
//! are registered as new topics, and per-topic proportion series are
//! monitored with online Bayesian change-point detection.

pub mod bench;
pub mod changepoint;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod etm;
pub mod metrics;
pub mod pipeline;
pub mod stream;
pub mod synthetic;
pub mod transport;

pub use error::{Error, Result};
