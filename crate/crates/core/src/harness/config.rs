use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::episodes::EpisodeConfig;
use crate::error::{Result, TentError};

/// Model variant: the full method, its three ablations and the
/// prototypical-network baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Prototypes from per-support-node 2-hop subgraphs instead of
    /// class-ego subgraphs.
    NoNode,
    /// No FiLM: the shared encoder parameters are used for every class.
    NoClass,
    /// Untempered squared-Euclidean matching instead of the adaptive loss.
    NoTask,
    ProtoNet,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoNode,
        Variant::NoClass,
        Variant::NoTask,
        Variant::ProtoNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoNode => "no_node",
            Variant::NoClass => "no_class",
            Variant::NoTask => "no_task",
            Variant::ProtoNet => "protonet",
        }
    }

    pub(crate) fn uses_film(self) -> bool {
        matches!(self, Variant::Full | Variant::NoNode | Variant::NoTask)
    }

    pub(crate) fn uses_temperature(self) -> bool {
        matches!(self, Variant::Full | Variant::NoNode | Variant::NoClass)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = TentError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| TentError::Argument(format!("unknown variant {s:?}")))
    }
}

/// Everything that determines a run. Defaults follow the reference
/// implementation settings (Adam at 0.05, weight decay 1e-4, γ = 1,
/// dropout 0.2, hidden sizes 16, 500 episodes, 500 test tasks of 10
/// queries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub episodes: EpisodeConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub dropout: f64,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
    pub variant: Variant,
    pub test_tasks: usize,
    pub validation_every: usize,
    pub validation_tasks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: EpisodeConfig::default(),
            epochs: 500,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            gamma: 1.0,
            dropout: 0.2,
            hidden_dim: 16,
            out_dim: 16,
            seed: 0,
            variant: Variant::Full,
            test_tasks: 500,
            validation_every: 25,
            validation_tasks: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.episodes.validate()?;
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(TentError::Argument("learning rate must be positive".into()));
        }
        if self.weight_decay < 0.0 || self.gamma < 0.0 {
            return Err(TentError::Argument("weight decay and gamma must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TentError::Argument("dropout must lie in [0, 1)".into()));
        }
        if self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(TentError::Argument("dimensions must be positive".into()));
        }
        if self.test_tasks == 0 || self.validation_every == 0 || self.validation_tasks == 0 {
            return Err(TentError::Argument("task counts and validation cadence must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form; equal configs share it.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let known = serde_json::to_value(TrainConfig::default())?;
        if let (Some(given), Some(known)) = (value.as_object(), known.as_object()) {
            if let Some(key) = given.keys().find(|k| !known.contains_key(*k)) {
                return Err(TentError::Schema(format!("unknown config field {key:?}")));
            }
        }
        let cfg: TrainConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
