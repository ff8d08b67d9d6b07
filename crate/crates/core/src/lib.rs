//! Task-adaptive few-shot node classification.
//!
//! A graph encoder is meta-trained on N-way K-shot episodes drawn from base
//! classes. Each episode adapts at three levels: per-class ego subgraphs
//! around a virtual class node, FiLM modulation of the subgraph encoder's
//! parameters, and per-class adaptive temperatures in the matching loss.
//! Evaluation runs on episodes from held-out novel classes.

pub mod adaptation;
pub mod autodiff;
pub mod encoder;
pub mod episodes;
pub mod error;
pub mod graph;
pub mod harness;
pub mod matching;

pub use error::{Result, TentError};
pub use graph::{ClassSplit, Csr, Graph, LocalNode, Subgraph};
pub use harness::{MetricsRecord, ModelParams, TrainConfig, Variant};
