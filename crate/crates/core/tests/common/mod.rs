#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tent_core::autodiff::Tape;
use tent_core::episodes::{stream, EpisodeStream, MetaTask, TaskShape};
use tent_core::harness::{episode_forward, first_step_embeddings, CeTerm, GraphContext, ModelParams, SbmParams, Variant};
use tent_core::{ClassSplit, Graph};

pub struct Tiny {
    pub graph: Graph,
    pub split: ClassSplit,
    pub model: ModelParams,
    pub task: MetaTask,
}

/// A small SBM graph, a model with every parameter drawn uniformly from
/// `[-scale, scale]`, and one base-class task.
pub fn tiny_episode(seed: u64, n_way: usize, k_shot: usize, dim: usize, scale: f64) -> Tiny {
    let params = SbmParams {
        classes: n_way + 2,
        nodes_per_class: 8,
        p_in: 0.5,
        p_out: 0.03,
        feature_dim: dim,
        feature_noise: 0.3,
        split: (n_way, 1, 1),
        seed,
    };
    let (graph, split) = tent_core::harness::generate_sbm(&params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut model = ModelParams::init(dim, dim, dim, 0.0, &split.base, &mut rng).unwrap();
    for (_, p) in model.groups_mut() {
        for v in p.values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
    let shape = TaskShape {
        n_way,
        k_shot,
        query_size: n_way,
    };
    let task = EpisodeStream::new(&graph, &split.base, shape, seed, stream::TRAIN).task(0).unwrap();
    Tiny {
        graph,
        split,
        model,
        task,
    }
}

/// Full training loss of one episode without dropout.
pub fn episode_loss(model: &ModelParams, graph: &Graph, task: &MetaTask, variant: Variant, gamma: f64) -> f64 {
    let ctx = GraphContext::new(graph);
    let mut tape = Tape::new();
    let vars = model.to_tape(&mut tape);
    let h = first_step_embeddings(&mut tape, &vars, model, &ctx, None).unwrap();
    let ev = episode_forward(&mut tape, &vars, model, graph, h, task, variant, None, Some(CeTerm { gamma })).unwrap();
    tape.scalar(ev.loss)
}

/// Analytic gradient of [`episode_loss`], one vector per parameter group.
pub fn episode_gradient(model: &ModelParams, graph: &Graph, task: &MetaTask, variant: Variant, gamma: f64) -> Vec<Vec<f64>> {
    let ctx = GraphContext::new(graph);
    tent_core::harness::train_episode(model, &ctx, task, variant, gamma, None).unwrap().grads
}

/// Central-difference gradient of [`episode_loss`] with step `h`.
pub fn numeric_gradient(model: &ModelParams, graph: &Graph, task: &MetaTask, variant: Variant, gamma: f64, h: f64) -> Vec<Vec<f64>> {
    let mut probe = model.clone();
    let mut out = Vec::new();
    for g in 0..model.groups().len() {
        let len = model.groups()[g].1.len();
        let mut grad = Vec::with_capacity(len);
        for i in 0..len {
            let original = probe.groups_mut()[g].1.values()[i];
            probe.groups_mut()[g].1.values_mut()[i] = original + h;
            let up = episode_loss(&probe, graph, task, variant, gamma);
            probe.groups_mut()[g].1.values_mut()[i] = original - h;
            let down = episode_loss(&probe, graph, task, variant, gamma);
            probe.groups_mut()[g].1.values_mut()[i] = original;
            grad.push((up - down) / (2.0 * h));
        }
        out.push(grad);
    }
    out
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient norm below which a group counts as zero. Central differences of
/// an O(1) loss carry roundoff of about `1e-16 / h`, so a group the loss
/// barely touches shows pure noise on the numeric side.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// `‖a − n‖ / max(‖a‖, ‖n‖, GRADIENT_FLOOR)` per parameter group.
pub fn group_errors(model: &ModelParams, analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> Vec<(&'static str, f64)> {
    model
        .groups()
        .iter()
        .zip(analytic.iter().zip(numeric))
        .map(|((name, _), (a, n))| {
            let scale = norm(a.iter().copied()).max(norm(n.iter().copied()));
            let diff = norm(a.iter().zip(n).map(|(x, y)| x - y));
            (*name, diff / scale.max(GRADIENT_FLOOR))
        })
        .collect()
}

/// Worst group error between the analytic and central-difference gradients.
pub fn max_gradient_error(model: &ModelParams, graph: &Graph, task: &MetaTask, variant: Variant, gamma: f64, h: f64) -> (f64, String) {
    let analytic = episode_gradient(model, graph, task, variant, gamma);
    let numeric = numeric_gradient(model, graph, task, variant, gamma, h);
    group_errors(model, &analytic, &numeric)
        .into_iter()
        .fold((0.0, String::new()), |acc, (name, e)| if e > acc.0 { (e, name.to_string()) } else { acc })
}

/// Temperatures of the episode under `variant` (`None` for variants without
/// them).
pub fn episode_temperatures(model: &ModelParams, graph: &Graph, task: &MetaTask, variant: Variant) -> Option<Vec<f64>> {
    let ctx = GraphContext::new(graph);
    let mut tape = Tape::new();
    let vars = model.to_tape(&mut tape);
    let h = first_step_embeddings(&mut tape, &vars, model, &ctx, None).unwrap();
    let ev = episode_forward(&mut tape, &vars, model, graph, h, task, variant, None, None).unwrap();
    ev.tau.map(|t| tape.value(t).iter().copied().collect())
}
