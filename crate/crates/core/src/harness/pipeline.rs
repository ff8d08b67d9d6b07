//! One episode's forward computation for every variant, recorded on a tape
//! so the same code path serves training (with gradients) and evaluation.

use std::sync::Arc;

use ndarray::Array2;

use super::config::Variant;
use super::model::{ModelParams, ParamVars};
use crate::adaptation::{build_query_subgraph, class_ego_structure, class_prototype_var, ego_features_var, film_var};
use crate::autodiff::{Tape, Var};
use crate::encoder::{gin_forward_var, Dropout, NodeInput};
use crate::episodes::MetaTask;
use crate::error::{Result, TentError};
use crate::graph::{Csr, Graph, Subgraph};
use crate::matching::{argmax_rows, base_class_ce_var, cosine_logits_var, euclidean_logits_var, temperatures_var};

/// Graph data shared by all episodes of a run.
pub struct GraphContext<'g> {
    pub graph: &'g Graph,
    pub adjacency: Arc<Csr>,
    pub features: Arc<Array2<f64>>,
}

impl<'g> GraphContext<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        GraphContext {
            graph,
            adjacency: Arc::new(graph.adjacency().clone()),
            features: graph.features_arc(),
        }
    }
}

/// First-step embeddings `H` of every node from the whole-graph encoder.
pub fn first_step_embeddings(
    tape: &mut Tape,
    vars: &ParamVars,
    model: &ModelParams,
    ctx: &GraphContext<'_>,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    gin_forward_var(
        tape,
        vars.phi,
        &model.config.phi(),
        &ctx.adjacency,
        NodeInput::Const(Arc::clone(&ctx.features)),
        dropout,
    )
}

/// Auxiliary base-class loss settings; absent at evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CeTerm {
    pub gamma: f64,
}

/// Tape handles produced by [`episode_forward`].
#[derive(Debug, Clone)]
pub struct EpisodeVars {
    /// Matching loss of the variant (`L_N`, or the Euclidean prototype loss).
    pub matching_loss: Var,
    pub ce_loss: Option<Var>,
    /// `matching_loss + γ·ce_loss`.
    pub loss: Var,
    /// `Q × N` logits used for prediction.
    pub logits: Var,
    pub tau: Option<Var>,
    pub prototypes: Var,
    pub queries: Var,
    /// Adapted encoder parameters per class slot, then for queries (FiLM
    /// variants only).
    pub adapted: Vec<Var>,
}

/// Runs several subgraphs through one encoder pass as a disjoint union and
/// returns the centroid rows in order.
fn batched_centroids(
    tape: &mut Tape,
    theta: Var,
    model: &ModelParams,
    h: Var,
    subgraphs: &[Subgraph],
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    let union = Arc::new(Csr::block_diagonal(subgraphs.iter().map(|s| &s.adjacency)));
    let mut rows = Vec::with_capacity(union.node_count());
    let mut centroids = Vec::with_capacity(subgraphs.len());
    for sg in subgraphs {
        centroids.push(rows.len() + sg.centroid_index);
        rows.extend(sg.real_nodes());
    }
    if rows.len() != union.node_count() {
        return Err(TentError::Argument("batched subgraphs must not contain virtual nodes".into()));
    }
    let x = tape.gather_rows(h, &rows);
    let out = gin_forward_var(tape, theta, &model.config.theta(), &union, NodeInput::Var(x), dropout)?;
    Ok(tape.gather_rows(out, &centroids))
}

fn adapt(tape: &mut Tape, variant: Variant, vars: &ParamVars, model: &ModelParams, context: Var) -> Result<Var> {
    if variant.uses_film() {
        film_var(tape, vars.theta, vars.alpha, vars.beta, model.adapter.alpha.layout(), context)
    } else {
        Ok(vars.theta)
    }
}

/// Episode forward pass for `variant` given first-step embeddings `h`.
///
/// When `ce` is set, query nodes' base-class targets come from
/// `task.class_map`, so the task must be drawn from base classes.
#[allow(clippy::too_many_arguments)]
pub fn episode_forward(
    tape: &mut Tape,
    vars: &ParamVars,
    model: &ModelParams,
    graph: &Graph,
    h: Var,
    task: &MetaTask,
    variant: Variant,
    mut dropout: Option<&mut Dropout<'_>>,
    ce: Option<CeTerm>,
) -> Result<EpisodeVars> {
    let n = task.n_way();
    let slots = task.query_slots();
    let query_nodes = task.query_nodes();
    let mut adapted = Vec::new();

    let (prototypes, queries, support_rows) = if variant == Variant::ProtoNet {
        let mut protos = Vec::with_capacity(n);
        for slot in 0..n {
            let rows = tape.gather_rows(h, &task.support_of(slot));
            protos.push(tape.mean_rows(rows));
        }
        (tape.concat_rows(&protos), tape.gather_rows(h, &query_nodes), Vec::new())
    } else {
        let mut protos = Vec::with_capacity(n);
        let mut support_rows = Vec::with_capacity(n);
        for slot in 0..n {
            let support = task.support_of(slot);
            let context = tape.gather_rows(h, &support);
            let theta_i = adapt(tape, variant, vars, model, context)?;
            adapted.push(theta_i);
            if variant == Variant::NoNode {
                let sgs = support
                    .iter()
                    .map(|&v| build_query_subgraph(graph, v))
                    .collect::<Result<Vec<_>>>()?;
                let rows = batched_centroids(tape, theta_i, model, h, &sgs, dropout.as_deref_mut())?;
                protos.push(tape.mean_rows(rows));
                support_rows.push(rows);
            } else {
                let (sg, local) = class_ego_structure(graph, &support)?;
                let x = ego_features_var(tape, h, &sg, &support);
                let (p, rows) = class_prototype_var(tape, theta_i, &model.config.theta(), &sg, &local, x, dropout.as_deref_mut())?;
                protos.push(p);
                support_rows.push(rows);
            }
        }
        let all_support = tape.gather_rows(h, &task.support_nodes());
        let theta_q = adapt(tape, variant, vars, model, all_support)?;
        adapted.push(theta_q);
        let qsgs = query_nodes
            .iter()
            .map(|&q| build_query_subgraph(graph, q))
            .collect::<Result<Vec<_>>>()?;
        let queries = batched_centroids(tape, theta_q, model, h, &qsgs, dropout)?;
        let protos_var = tape.concat_rows(&protos);
        (protos_var, queries, support_rows.into_iter().zip(protos).collect::<Vec<_>>())
    };

    let (logits, tau) = if variant.uses_temperature() {
        let (rows, protos): (Vec<Var>, Vec<Var>) = support_rows.iter().copied().unzip();
        let (tau, _) = temperatures_var(tape, &rows, &protos);
        (cosine_logits_var(tape, queries, prototypes, tau)?, Some(tau))
    } else {
        (euclidean_logits_var(tape, queries, prototypes)?, None)
    };
    let matching_loss = tape.softmax_xent(logits, &slots);

    let (loss, ce_loss) = match ce {
        Some(CeTerm { gamma }) if variant != Variant::ProtoNet => {
            let labels = query_nodes
                .iter()
                .zip(&slots)
                .map(|(q, &s)| {
                    model.base_index(task.class_map[s]).ok_or_else(|| {
                        TentError::Argument(format!("query {q} has class {} outside the base classes", task.class_map[s]))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let hq = tape.gather_rows(h, &query_nodes);
            let l_ce = base_class_ce_var(tape, vars.head, model.head.params.layout(), hq, &labels)?;
            let weighted = tape.scale(l_ce, gamma);
            (tape.add(matching_loss, weighted), Some(l_ce))
        }
        _ => (matching_loss, None),
    };

    Ok(EpisodeVars {
        matching_loss,
        ce_loss,
        loss,
        logits,
        tau,
        prototypes,
        queries,
        adapted,
    })
}

/// Fraction of queries whose predicted slot matches the true slot.
pub fn episode_accuracy(tape: &Tape, ev: &EpisodeVars, task: &MetaTask) -> f64 {
    let preds = argmax_rows(tape.value(ev.logits));
    let correct = preds.iter().zip(task.query_slots()).filter(|(p, s)| **p == *s).count();
    correct as f64 / task.query.len() as f64
}
