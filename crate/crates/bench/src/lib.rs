//! Fixtures shared by the benchmarks.

use tent_core::episodes::{stream, EpisodeStream, MetaTask};
use tent_core::harness::{generate_sbm, train::init_model, ModelParams, SbmParams, TrainConfig};
use tent_core::{ClassSplit, Graph};

pub struct Fixture {
    pub graph: Graph,
    pub split: ClassSplit,
    pub model: ModelParams,
    pub tasks: Vec<MetaTask>,
}

/// The `sbm-small` graph, a freshly initialized model and `count` base-class
/// training tasks.
pub fn sbm_fixture(count: usize) -> Fixture {
    let (graph, split) = generate_sbm(&SbmParams::small(0)).expect("preset is valid");
    let cfg = TrainConfig::default();
    let model = init_model(&graph, &split, &cfg).expect("model initializes");
    let tasks = EpisodeStream::new(&graph, &split.base, cfg.episodes.train_shape(), cfg.seed, stream::TRAIN)
        .take(count)
        .expect("preset supports 5-way 5-shot");
    Fixture {
        graph,
        split,
        model,
        tasks,
    }
}
