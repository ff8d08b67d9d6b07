//! N-way K-shot episode sampling with order-independent, seed-keyed
//! substreams.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TentError};
use crate::graph::Graph;

/// Maximum number of class redraws before an episode is declared infeasible.
pub const MAX_CLASS_REDRAWS: usize = 100;

/// Episode shapes for meta-training (`train_*`) and meta-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub query_size: usize,
    pub train_n_way: usize,
    pub train_k_shot: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            n_way: 5,
            k_shot: 5,
            query_size: 10,
            train_n_way: 5,
            train_k_shot: 5,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 || self.train_n_way < 2 {
            return Err(TentError::Argument("n_way and train_n_way must be at least 2".into()));
        }
        if self.k_shot == 0 || self.train_k_shot == 0 || self.query_size == 0 {
            return Err(TentError::Argument("k_shot, train_k_shot and query_size must be positive".into()));
        }
        Ok(())
    }

    pub fn train_shape(&self) -> TaskShape {
        TaskShape {
            n_way: self.train_n_way,
            k_shot: self.train_k_shot,
            query_size: self.query_size,
        }
    }

    pub fn test_shape(&self) -> TaskShape {
        TaskShape {
            n_way: self.n_way,
            k_shot: self.k_shot,
            query_size: self.query_size,
        }
    }
}

/// `(N, K, Q)` of a single episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskShape {
    pub n_way: usize,
    pub k_shot: usize,
    pub query_size: usize,
}

impl TaskShape {
    /// Queries assigned to `slot` under round-robin allocation.
    pub fn queries_for_slot(&self, slot: usize) -> usize {
        self.query_size / self.n_way + usize::from(slot < self.query_size % self.n_way)
    }

    /// Labeled nodes a class must have to be drawable.
    pub fn required_per_class(&self) -> usize {
        self.k_shot + self.query_size.div_ceil(self.n_way)
    }
}

/// One sampled episode. Support pairs are grouped by slot; query slots
/// cycle `0, 1, .., N-1, 0, ..`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaTask {
    pub support: Vec<(usize, usize)>,
    pub query: Vec<(usize, usize)>,
    pub class_map: Vec<usize>,
}

impl MetaTask {
    pub fn n_way(&self) -> usize {
        self.class_map.len()
    }

    pub fn k_shot(&self) -> usize {
        self.support.len() / self.n_way().max(1)
    }

    /// Support node ids of one slot.
    pub fn support_of(&self, slot: usize) -> Vec<usize> {
        self.support.iter().filter(|(_, s)| *s == slot).map(|(v, _)| *v).collect()
    }

    pub fn support_nodes(&self) -> Vec<usize> {
        self.support.iter().map(|(v, _)| *v).collect()
    }

    pub fn query_nodes(&self) -> Vec<usize> {
        self.query.iter().map(|(v, _)| *v).collect()
    }

    pub fn query_slots(&self) -> Vec<usize> {
        self.query.iter().map(|(_, s)| *s).collect()
    }

    /// Debug dump line: `{"task_index", "class_map", "support", "query"}`.
    pub fn to_json_line(&self, task_index: usize) -> String {
        serde_json::json!({
            "task_index": task_index,
            "class_map": self.class_map,
            "support": self.support,
            "query": self.query,
        })
        .to_string()
    }
}

/// Purpose of a random draw inside one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    ClassDraw = 0,
    Support = 1,
    Query = 2,
    Dropout = 3,
}

/// Independent generator keyed by `(seed, stream, index, role)`.
///
/// The key fills the whole ChaCha key, so distinct tuples give unrelated
/// streams and any task can be regenerated without touching earlier ones.
pub fn substream(seed: u64, stream: u64, index: u64, role: Role) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, stream, index, role as u64]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// The three generators consumed by [`EpisodeSampler::sample`].
pub struct EpisodeRngs {
    pub class_draw: ChaCha8Rng,
    pub support: ChaCha8Rng,
    pub query: ChaCha8Rng,
}

impl EpisodeRngs {
    pub fn keyed(seed: u64, stream: u64, index: u64) -> Self {
        EpisodeRngs {
            class_draw: substream(seed, stream, index, Role::ClassDraw),
            support: substream(seed, stream, index, Role::Support),
            query: substream(seed, stream, index, Role::Query),
        }
    }
}

/// Per-class node pools for a fixed set of eligible classes.
#[derive(Debug, Clone)]
pub struct EpisodeSampler {
    classes: Vec<usize>,
    pools: BTreeMap<usize, Vec<usize>>,
}

impl EpisodeSampler {
    pub fn new(g: &Graph, classes: &[usize]) -> Self {
        let mut classes = classes.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let mut pools: BTreeMap<usize, Vec<usize>> = classes.iter().map(|&c| (c, Vec::new())).collect();
        for v in 0..g.node_count() {
            if let Some(pool) = g.label(v).and_then(|c| pools.get_mut(&c)) {
                pool.push(v);
            }
        }
        EpisodeSampler { classes, pools }
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn sample(&self, shape: TaskShape, rngs: &mut EpisodeRngs) -> Result<MetaTask> {
        if shape.n_way == 0 || shape.k_shot == 0 || shape.query_size == 0 {
            return Err(TentError::Argument("N, K and Q must be positive".into()));
        }
        if self.classes.len() < shape.n_way {
            return Err(TentError::Infeasible(format!(
                "{} eligible classes for a {}-way task",
                self.classes.len(),
                shape.n_way
            )));
        }
        let need = shape.required_per_class();
        let mut deficient = Vec::new();
        let mut drawn = None;
        for _ in 0..MAX_CLASS_REDRAWS {
            let pick: Vec<usize> = self
                .classes
                .choose_multiple(&mut rngs.class_draw, shape.n_way)
                .copied()
                .collect();
            let short: Vec<usize> = pick.iter().copied().filter(|c| self.pools[c].len() < need).collect();
            if short.is_empty() {
                drawn = Some(pick);
                break;
            }
            for c in short {
                if !deficient.contains(&c) {
                    deficient.push(c);
                }
            }
        }
        let Some(class_map) = drawn else {
            deficient.sort_unstable();
            return Err(TentError::Infeasible(format!(
                "no feasible {}-way draw after {MAX_CLASS_REDRAWS} attempts; classes with fewer than {need} labeled nodes: {deficient:?}",
                shape.n_way
            )));
        };

        let mut support = Vec::with_capacity(shape.n_way * shape.k_shot);
        let mut per_slot_queries = Vec::with_capacity(shape.n_way);
        for (slot, class) in class_map.iter().enumerate() {
            let mut pool = self.pools[class].clone();
            let (chosen, rest) = pool.partial_shuffle(&mut rngs.support, shape.k_shot);
            support.extend(chosen.iter().map(|&v| (v, slot)));
            let mut rest = rest.to_vec();
            rest.sort_unstable();
            let q = shape.queries_for_slot(slot);
            let (picked, _) = rest.partial_shuffle(&mut rngs.query, q);
            per_slot_queries.push(picked.to_vec());
        }
        let mut query = Vec::with_capacity(shape.query_size);
        for i in 0..shape.query_size {
            let slot = i % shape.n_way;
            query.push((per_slot_queries[slot][i / shape.n_way], slot));
        }
        Ok(MetaTask {
            support,
            query,
            class_map,
        })
    }
}

/// Samples one task from `classes` with a single seeded generator family.
pub fn sample_meta_task(g: &Graph, classes: &[usize], shape: TaskShape, rngs: &mut EpisodeRngs) -> Result<MetaTask> {
    EpisodeSampler::new(g, classes).sample(shape, rngs)
}

/// Stream tags separating training, validation and test episodes.
pub mod stream {
    pub const TRAIN: u64 = 0;
    pub const VALIDATION: u64 = 1;
    pub const TEST: u64 = 2;
    pub const INIT: u64 = 3;
}

/// Deterministic, random-access sequence of episodes.
#[derive(Debug, Clone)]
pub struct EpisodeStream {
    sampler: EpisodeSampler,
    shape: TaskShape,
    seed: u64,
    stream: u64,
}

impl EpisodeStream {
    pub fn new(g: &Graph, classes: &[usize], shape: TaskShape, seed: u64, stream: u64) -> Self {
        EpisodeStream {
            sampler: EpisodeSampler::new(g, classes),
            shape,
            seed,
            stream,
        }
    }

    pub fn shape(&self) -> TaskShape {
        self.shape
    }

    /// Task `index`, identical regardless of which other tasks were drawn.
    pub fn task(&self, index: usize) -> Result<MetaTask> {
        let mut rngs = EpisodeRngs::keyed(self.seed, self.stream, index as u64);
        self.sampler.sample(self.shape, &mut rngs)
    }

    pub fn take(&self, count: usize) -> Result<Vec<MetaTask>> {
        (0..count).map(|i| self.task(i)).collect()
    }
}

/// Materializes `count` tasks of a stream.
pub fn episode_stream(
    g: &Graph,
    classes: &[usize],
    shape: TaskShape,
    base_seed: u64,
    stream_tag: u64,
    count: usize,
) -> Result<Vec<MetaTask>> {
    if count == 0 {
        return Err(TentError::Argument("episode count must be at least 1".into()));
    }
    EpisodeStream::new(g, classes, shape, base_seed, stream_tag).take(count)
}
