use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::FilmAdapterParams;
use crate::autodiff::{Tape, Var};
use crate::encoder::{xavier_init, GinConfig, ParamLayout, ParamVector, LAYOUT_VERSION};
use crate::error::{Result, TentError};
use crate::matching::ClassifierHead;

/// Shapes needed to rebuild a [`ModelParams`] from raw buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub dropout: f64,
    /// Sorted base classes; the head's output `j` is `base_classes[j]`.
    pub base_classes: Vec<usize>,
    pub layout_version: u32,
}

impl ModelConfig {
    /// Whole-graph encoder: `d → d_h → d_h`.
    pub fn phi(&self) -> GinConfig {
        GinConfig {
            in_dim: self.feature_dim,
            hidden_dim: self.hidden_dim,
            out_dim: self.hidden_dim,
            dropout: self.dropout,
        }
    }

    /// Subgraph encoder: `d_h → d_h → d_s`.
    pub fn theta(&self) -> GinConfig {
        GinConfig {
            in_dim: self.hidden_dim,
            hidden_dim: self.hidden_dim,
            out_dim: self.out_dim,
            dropout: self.dropout,
        }
    }

    pub fn layouts(&self) -> [(&'static str, ParamLayout); 5] {
        let theta_len = ParamLayout::gin(&self.theta()).len();
        [
            (GROUP_PHI, ParamLayout::gin(&self.phi())),
            (GROUP_THETA, ParamLayout::gin(&self.theta())),
            (GROUP_ALPHA, FilmAdapterParams::layout(self.hidden_dim, theta_len)),
            (GROUP_BETA, FilmAdapterParams::layout(self.hidden_dim, theta_len)),
            (GROUP_HEAD, ParamLayout::linear(self.hidden_dim, self.base_classes.len().max(1))),
        ]
    }
}

pub const GROUP_PHI: &str = "phi";
pub const GROUP_THETA: &str = "theta";
pub const GROUP_ALPHA: &str = "adapter.alpha";
pub const GROUP_BETA: &str = "adapter.beta";
pub const GROUP_HEAD: &str = "head";

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub phi: ParamVector,
    pub theta: ParamVector,
    pub adapter: FilmAdapterParams,
    pub head: ClassifierHead,
}

/// Tape handles of every parameter group for one episode.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub phi: Var,
    pub theta: Var,
    pub alpha: Var,
    pub beta: Var,
    pub head: Var,
}

impl ParamVars {
    pub fn as_array(&self) -> [Var; 5] {
        [self.phi, self.theta, self.alpha, self.beta, self.head]
    }
}

impl ModelParams {
    /// Xavier-initialized encoders and head; FiLM output layers start at zero.
    pub fn init(feature_dim: usize, hidden_dim: usize, out_dim: usize, dropout: f64, base_classes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut base_classes = base_classes.to_vec();
        base_classes.sort_unstable();
        base_classes.dedup();
        let config = ModelConfig {
            feature_dim,
            hidden_dim,
            out_dim,
            dropout,
            base_classes,
            layout_version: LAYOUT_VERSION,
        };
        config.phi().validate()?;
        config.theta().validate()?;
        let phi = xavier_init(Arc::new(ParamLayout::gin(&config.phi())), rng, false);
        let theta = xavier_init(Arc::new(ParamLayout::gin(&config.theta())), rng, false);
        let adapter = FilmAdapterParams::init(hidden_dim, theta.len(), rng);
        let head = ClassifierHead::init(hidden_dim, config.base_classes.len().max(1), rng);
        Ok(ModelParams {
            config,
            phi,
            theta,
            adapter,
            head,
        })
    }

    /// Rebuilds from named groups, checking every length against `config`.
    pub fn from_groups(config: ModelConfig, groups: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if config.layout_version != LAYOUT_VERSION {
            return Err(TentError::Schema(format!(
                "layout version {} (expected {LAYOUT_VERSION})",
                config.layout_version
            )));
        }
        let layouts = config.layouts();
        if groups.len() != layouts.len() {
            return Err(TentError::Schema(format!("{} parameter groups, expected {}", groups.len(), layouts.len())));
        }
        let mut vectors = Vec::with_capacity(5);
        for ((expected, layout), (name, values)) in layouts.into_iter().zip(groups) {
            if name != expected {
                return Err(TentError::Schema(format!("group {name} where {expected} was expected")));
            }
            vectors.push(ParamVector::from_values(Arc::new(layout), values)?);
        }
        let mut it = vectors.into_iter();
        let mut next = || it.next().unwrap();
        let (phi, theta, alpha, beta, head) = (next(), next(), next(), next(), next());
        Ok(ModelParams {
            config,
            phi,
            theta,
            adapter: FilmAdapterParams { alpha, beta },
            head: ClassifierHead { params: head },
        })
    }

    pub fn groups(&self) -> [(&'static str, &ParamVector); 5] {
        [
            (GROUP_PHI, &self.phi),
            (GROUP_THETA, &self.theta),
            (GROUP_ALPHA, &self.adapter.alpha),
            (GROUP_BETA, &self.adapter.beta),
            (GROUP_HEAD, &self.head.params),
        ]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut ParamVector); 5] {
        [
            (GROUP_PHI, &mut self.phi),
            (GROUP_THETA, &mut self.theta),
            (GROUP_ALPHA, &mut self.adapter.alpha),
            (GROUP_BETA, &mut self.adapter.beta),
            (GROUP_HEAD, &mut self.head.params),
        ]
    }

    pub fn to_tape(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            phi: self.phi.to_tape(tape),
            theta: self.theta.to_tape(tape),
            alpha: self.adapter.alpha.to_tape(tape),
            beta: self.adapter.beta.to_tape(tape),
            head: self.head.params.to_tape(tape),
        }
    }

    /// Head target of a global class id, if it is a base class.
    pub fn base_index(&self, class: usize) -> Option<usize> {
        self.config.base_classes.binary_search(&class).ok()
    }

    pub fn parameter_count(&self) -> usize {
        self.groups().iter().map(|(_, p)| p.len()).sum()
    }
}
