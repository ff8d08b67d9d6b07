//! Stochastic block model graphs with class-mean features, written in the
//! standard dataset layout.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TentError};
use crate::graph::io::{write_graph, write_split, DatasetPaths};
use crate::graph::{make_class_split, ClassSplit, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub classes: usize,
    pub nodes_per_class: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    /// `(base, validation, novel)` class counts.
    pub split: (usize, usize, usize),
    pub seed: u64,
}

impl SbmParams {
    /// 15 classes × 50 nodes, d = 32, p_in 0.2, p_out 0.01, noise 0.3,
    /// 5/5/5 split.
    pub fn small(seed: u64) -> Self {
        SbmParams {
            classes: 15,
            nodes_per_class: 50,
            p_in: 0.2,
            p_out: 0.01,
            feature_dim: 32,
            feature_noise: 0.3,
            split: (5, 5, 5),
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "sbm-small" => Ok(SbmParams::small(seed)),
            other => Err(TentError::Argument(format!("unknown preset {other:?} (available: sbm-small)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return Err(TentError::Argument(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.classes < 3 {
            return Err(TentError::Argument("at least 3 classes are needed for a base/val/novel split".into()));
        }
        if self.nodes_per_class == 0 {
            return Err(TentError::Argument("nodes_per_class must be positive".into()));
        }
        if self.feature_dim < self.classes {
            return Err(TentError::Argument(format!(
                "{} orthogonal class means need feature_dim >= classes (got {})",
                self.classes, self.feature_dim
            )));
        }
        if self.feature_noise < 0.0 || !self.feature_noise.is_finite() {
            return Err(TentError::Argument("feature_noise must be a non-negative number".into()));
        }
        let (b, v, n) = self.split;
        if b + v + n > self.classes || b == 0 || v == 0 || n == 0 {
            return Err(TentError::Argument(format!(
                "split {:?} infeasible for {} classes",
                self.split, self.classes
            )));
        }
        Ok(())
    }
}

/// Samples the graph and its class split. Node `v` belongs to class
/// `v / nodes_per_class`; class `c`'s feature mean is the unit vector `e_c`.
pub fn generate_sbm(params: &SbmParams) -> Result<(Graph, ClassSplit)> {
    params.validate()?;
    let n = params.classes * params.nodes_per_class;
    let class_of = |v: usize| v / params.nodes_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if class_of(u) == class_of(v) { params.p_in } else { params.p_out };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Array2::zeros((n, params.feature_dim));
    for v in 0..n {
        for j in 0..params.feature_dim {
            let mean = if j == class_of(v) { 1.0 } else { 0.0 };
            features[[v, j]] = mean + params.feature_noise * noise.sample(&mut rng);
        }
    }
    let labels = (0..n).map(|v| class_of(v) as i64).collect();
    let g = Graph::from_edges(&edges, features, labels)?;
    let split = make_class_split(&g, params.split, params.seed)?;
    Ok((g, split))
}

/// Writes edges, features, labels and the split manifest into `dir`.
pub fn write_dataset(dir: &Path, g: &Graph, split: &ClassSplit) -> Result<()> {
    let paths = DatasetPaths::in_dir(dir);
    write_graph(g, &paths)?;
    write_split(&paths.split, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        let mut p = SbmParams::small(0);
        p.p_out = 0.5;
        assert!(generate_sbm(&p).is_err());
        let mut p = SbmParams::small(0);
        p.split = (10, 5, 5);
        assert!(generate_sbm(&p).is_err());
        assert!(SbmParams::preset("cora", 0).is_err());
    }

    #[test]
    fn noiseless_features_match_class() {
        let p = SbmParams {
            classes: 3,
            nodes_per_class: 4,
            p_in: 0.5,
            p_out: 0.1,
            feature_dim: 3,
            feature_noise: 0.0,
            split: (1, 1, 1),
            seed: 2,
        };
        let (g, _) = generate_sbm(&p).unwrap();
        for v in 0..12 {
            assert_eq!(g.feature_row(v), g.feature_row(v - v % 4));
            assert_eq!(g.feature_row(v)[v / 4], 1.0);
        }
    }
}
