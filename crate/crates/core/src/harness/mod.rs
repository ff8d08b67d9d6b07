//! Orchestration: configuration, the episode pipeline for every variant,
//! Adam, meta-training/meta-test loops, the SBM generator and persistence.

pub mod config;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod persist;
pub mod pipeline;
pub mod sbm;
pub mod train;

pub use config::{TrainConfig, Variant};
pub use metrics::{EvalSummary, MetricsEvent, MetricsRecord, ValidationPoint};
pub use model::{ModelConfig, ModelParams, ParamVars};
pub use optimizer::{optimizer_step, OptimizerState};
pub use pipeline::{episode_forward, first_step_embeddings, CeTerm, EpisodeVars, GraphContext};
pub use sbm::{generate_sbm, write_dataset, SbmParams};
pub use train::{eval_record, meta_eval, meta_train, run_ablation, run_variant, train_episode, TrainOutcome};
