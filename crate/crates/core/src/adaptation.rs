//! Node-level adaptation (class-ego subgraphs with a virtual class node) and
//! class-level adaptation (FiLM modulation of the subgraph encoder's flat
//! parameters), producing class prototypes and query embeddings.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::encoder::{gin_forward_var, mlp_var, xavier_init, Dropout, GinConfig, NodeInput, ParamLayout, ParamVector};
use crate::error::{Result, TentError};
use crate::graph::{Csr, Graph, LocalNode, Subgraph};

/// Hop radius of query subgraphs.
pub const QUERY_HOPS: usize = 2;

/// Class-ego subgraph: virtual class node at local index 0 (the centroid),
/// followed by `S_i ∪ N_i` in ascending node id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEgoSubgraph {
    pub sg: Subgraph,
    pub support_local_indices: Vec<usize>,
    pub virtual_feature: Vec<f64>,
}

/// Structure of a class-ego subgraph without the virtual feature.
pub fn class_ego_structure(g: &Graph, support: &[usize]) -> Result<(Subgraph, Vec<usize>)> {
    if support.is_empty() {
        return Err(TentError::Argument("class-ego subgraph needs at least one support node".into()));
    }
    let mut real: Vec<usize> = Vec::new();
    for &v in support {
        real.push(v);
        real.extend_from_slice(g.neighbors(v)?);
    }
    real.sort_unstable();
    real.dedup();
    let mut distinct = support.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != support.len() {
        return Err(TentError::Argument("support nodes must be distinct".into()));
    }

    let local = |v: usize| real.binary_search(&v).unwrap() + 1;
    let support_local: Vec<usize> = support.iter().map(|&v| local(v)).collect();
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(real.len() + 1);
    rows.push(support_local.clone());
    for &v in &real {
        let mut row: Vec<usize> = g
            .adjacency()
            .row(v)
            .iter()
            .filter_map(|u| real.binary_search(u).ok().map(|i| i + 1))
            .collect();
        if support.contains(&v) {
            row.push(0);
        }
        rows.push(row);
    }
    let mut nodes = vec![LocalNode::Virtual];
    nodes.extend(real.iter().map(|&v| LocalNode::Real(v)));
    let sg = Subgraph {
        nodes,
        adjacency: Csr::from_rows(rows),
        centroid_index: 0,
    };
    Ok((sg, support_local))
}

/// Builds `G_i` for one class with the virtual feature set to the mean of
/// the support rows of `h`.
pub fn build_class_ego_subgraph(g: &Graph, support: &[usize], h: &Array2<f64>) -> Result<ClassEgoSubgraph> {
    if h.nrows() != g.node_count() {
        return Err(TentError::Shape(format!(
            "{} embedding rows for {} nodes",
            h.nrows(),
            g.node_count()
        )));
    }
    let (sg, support_local_indices) = class_ego_structure(g, support)?;
    let mut mean = vec![0.0; h.ncols()];
    for &v in support {
        for (m, x) in mean.iter_mut().zip(h.row(v)) {
            *m += x / support.len() as f64;
        }
    }
    Ok(ClassEgoSubgraph {
        sg,
        support_local_indices,
        virtual_feature: mean,
    })
}

impl ClassEgoSubgraph {
    /// Debug dump: real nodes, induced edges, virtual edges and centroid.
    pub fn to_debug_json(&self) -> serde_json::Value {
        let real: Vec<Option<usize>> = self
            .sg
            .nodes
            .iter()
            .map(|n| match n {
                LocalNode::Real(v) => Some(*v),
                LocalNode::Virtual => None,
            })
            .collect();
        let (mut edges, mut virtual_edges) = (Vec::new(), Vec::new());
        for (a, b) in self.sg.adjacency.edges() {
            match (real[a], real[b]) {
                (Some(u), Some(v)) => edges.push((u, v)),
                (None, Some(v)) | (Some(v), None) => virtual_edges.push(v),
                (None, None) => {}
            }
        }
        serde_json::json!({
            "nodes": real.iter().flatten().collect::<Vec<_>>(),
            "edges": edges,
            "virtual_edges": virtual_edges,
            "centroid": "virtual",
        })
    }
}

/// Induced subgraph on the 2-hop neighborhood of `q`, centred on `q`.
pub fn build_query_subgraph(g: &Graph, q: usize) -> Result<Subgraph> {
    let nodes = g.k_hop_neighborhood(q, QUERY_HOPS)?;
    g.induced_subgraph(&nodes, q)
}

/// FiLM generators: `alpha` and `beta` perceptrons `d_h → d_h → d_θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmAdapterParams {
    pub alpha: ParamVector,
    pub beta: ParamVector,
}

impl FilmAdapterParams {
    pub fn layout(context_dim: usize, theta_len: usize) -> ParamLayout {
        ParamLayout::mlp(context_dim, context_dim, theta_len)
    }

    /// Xavier first layer; output layer zeroed so `α = β = 0` initially.
    pub fn init(context_dim: usize, theta_len: usize, rng: &mut impl Rng) -> Self {
        let layout = Arc::new(Self::layout(context_dim, theta_len));
        FilmAdapterParams {
            alpha: xavier_init(layout.clone(), rng, true),
            beta: xavier_init(layout, rng, true),
        }
    }
}

/// On-tape FiLM: `(α + 1) ∘ θ + β` with `α`, `β` generated from the mean of
/// the `context` rows.
pub fn film_var(tape: &mut Tape, theta: Var, alpha: Var, beta: Var, adapter_layout: &ParamLayout, context: Var) -> Result<Var> {
    let ctx = tape.mean_rows(context);
    let a = mlp_var(tape, alpha, adapter_layout, "", ctx, None)?;
    let b = mlp_var(tape, beta, adapter_layout, "", ctx, None)?;
    if tape.shape(a) != tape.shape(theta) {
        return Err(TentError::Shape(format!(
            "adapter output {:?} vs encoder parameters {:?}",
            tape.shape(a),
            tape.shape(theta)
        )));
    }
    let scale = tape.add_scalar(a, 1.0);
    let scaled = tape.mul(scale, theta);
    Ok(tape.add(scaled, b))
}

/// Adapted encoder parameters for a context set of first-step embeddings
/// (one row per context node).
pub fn film_adapt(theta: &ParamVector, context: &Array2<f64>, adapter: &FilmAdapterParams) -> Result<ParamVector> {
    if context.nrows() == 0 {
        return Err(TentError::Argument("FiLM context is empty".into()));
    }
    let layout = adapter.alpha.layout();
    let expected_in = layout.slot("w1")?.rows;
    if context.ncols() != expected_in {
        return Err(TentError::Shape(format!(
            "context width {} vs adapter input {expected_in}",
            context.ncols()
        )));
    }
    let mut tape = Tape::new();
    let t = theta.to_tape(&mut tape);
    let a = adapter.alpha.to_tape(&mut tape);
    let b = adapter.beta.to_tape(&mut tape);
    let c = tape.leaf(context.clone());
    let out = film_var(&mut tape, t, a, b, layout, c)?;
    ParamVector::from_values(theta.layout().clone(), tape.value(out).iter().copied().collect())
}

/// Per-class prototype output of the adapted encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototype {
    /// Virtual-node (centroid) embedding `s_i`.
    pub prototype: Vec<f64>,
    /// Output rows of the K support nodes from the same pass.
    pub support_rows: Array2<f64>,
}

/// Node features of a class-ego subgraph on tape: virtual row (mean of the
/// support rows of `h`) followed by the real nodes' rows.
pub fn ego_features_var(tape: &mut Tape, h: Var, sg: &Subgraph, support: &[usize]) -> Var {
    let support_rows = tape.gather_rows(h, support);
    let virtual_row = tape.mean_rows(support_rows);
    let real: Vec<usize> = sg.real_nodes().collect();
    let real_rows = tape.gather_rows(h, &real);
    tape.concat_rows(&[virtual_row, real_rows])
}

/// On-tape prototype pass; returns `(s_i, support rows)`.
pub fn class_prototype_var(
    tape: &mut Tape,
    theta_i: Var,
    cfg: &GinConfig,
    sg: &Subgraph,
    support_local: &[usize],
    x: Var,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<(Var, Var)> {
    let adj = Arc::new(sg.adjacency.clone());
    let out = gin_forward_var(tape, theta_i, cfg, &adj, NodeInput::Var(x), dropout)?;
    let proto = tape.row(out, sg.centroid_index);
    let rows = tape.gather_rows(out, support_local);
    Ok((proto, rows))
}

/// Runs the adapted encoder on a class-ego subgraph (eval mode).
pub fn class_prototype(theta_i: &ParamVector, cfg: &GinConfig, ces: &ClassEgoSubgraph, h: &Array2<f64>) -> Result<ClassPrototype> {
    let virtual_row = ndarray::ArrayView1::from(&ces.virtual_feature);
    let x = ces.sg.gather_features(h, Some(virtual_row))?;
    let mut tape = Tape::new();
    let t = theta_i.to_tape(&mut tape);
    let xv = tape.leaf(x);
    let (p, rows) = class_prototype_var(&mut tape, t, cfg, &ces.sg, &ces.support_local_indices, xv, None)?;
    Ok(ClassPrototype {
        prototype: tape.value(p).iter().copied().collect(),
        support_rows: tape.value(rows).clone(),
    })
}

/// Centroid embedding of a query subgraph under adapted parameters `θ_q`.
pub fn query_embedding(theta_q: &ParamVector, cfg: &GinConfig, qsg: &Subgraph, h: &Array2<f64>) -> Result<Vec<f64>> {
    let x = qsg.gather_features(h, None)?;
    let mut tape = Tape::new();
    let t = theta_q.to_tape(&mut tape);
    let xv = tape.leaf(x);
    let adj = Arc::new(qsg.adjacency.clone());
    let out = gin_forward_var(&mut tape, t, cfg, &adj, NodeInput::Var(xv), None)?;
    Ok(tape.value(out).row(qsg.centroid_index).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Graph {
        // 0–1, 1–2, 3–4, 2–5
        Graph::from_edges(&[(0, 1), (1, 2), (3, 4), (2, 5)], Array2::zeros((6, 1)), vec![0; 6]).unwrap()
    }

    #[test]
    fn single_support_with_two_neighbors() {
        let g = toy();
        let h = Array2::from_shape_fn((6, 2), |(i, j)| (i * 2 + j) as f64);
        let ces = build_class_ego_subgraph(&g, &[1], &h).unwrap();
        assert_eq!(ces.sg.len(), 4);
        assert_eq!(ces.sg.adjacency.degree(0), 1);
        assert_eq!(ces.virtual_feature, vec![2.0, 3.0]);
    }

    #[test]
    fn adjacent_supports_keep_their_edge() {
        let g = Graph::from_edges(&[(0, 1)], Array2::zeros((3, 1)), vec![0; 3]).unwrap();
        let (sg, sl) = class_ego_structure(&g, &[0, 1]).unwrap();
        assert_eq!(sg.nodes, vec![LocalNode::Virtual, LocalNode::Real(0), LocalNode::Real(1)]);
        assert_eq!(sg.adjacency.degree(0), 2);
        assert!(sg.adjacency.has_edge(sl[0], sl[1]));
        assert_eq!(sg.adjacency.undirected_edge_count(), 3);
    }

    #[test]
    fn empty_support_rejected() {
        assert!(matches!(class_ego_structure(&toy(), &[]), Err(TentError::Argument(_))));
    }

    #[test]
    fn query_subgraphs() {
        let g = Graph::from_edges(&[(0, 1), (1, 2), (2, 3)], Array2::zeros((5, 1)), vec![0; 5]).unwrap();
        let q = build_query_subgraph(&g, 0).unwrap();
        assert_eq!(q.real_nodes().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(q.centroid_index, 0);
        let iso = build_query_subgraph(&g, 4).unwrap();
        assert_eq!(iso.len(), 1);
    }

    #[test]
    fn film_identity_and_doubling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = init_params(&GinConfig::new(3, 3, 2), 1);
        let adapter = FilmAdapterParams::init(3, theta.len(), &mut rng);
        let ctx = array![[0.5, -0.2, 1.0], [0.1, 0.4, -0.3]];
        assert_eq!(film_adapt(&theta, &ctx, &adapter).unwrap(), theta);

        // α ≡ 1, β ≡ 0: zero weights, unit α bias
        let mut doubling = adapter.clone();
        doubling.alpha.values_mut().fill(0.0);
        let b2 = doubling.alpha.layout().slot("b2").unwrap().clone();
        doubling.alpha.values_mut()[b2.offset..b2.offset + b2.len()].fill(1.0);
        let out = film_adapt(&theta, &ctx, &doubling).unwrap();
        for (o, t) in out.values().iter().zip(theta.values()) {
            assert_eq!(*o, 2.0 * t);
        }
        assert!(film_adapt(&theta, &Array2::zeros((0, 3)), &adapter).is_err());
        assert!(matches!(film_adapt(&theta, &Array2::zeros((1, 4)), &adapter), Err(TentError::Shape(_))));
    }

    #[test]
    fn zero_theta_gives_zero_prototype() {
        let g = toy();
        let cfg = GinConfig::new(2, 3, 2);
        let h = Array2::from_elem((6, 2), 0.7);
        let ces = build_class_ego_subgraph(&g, &[1, 4], &h).unwrap();
        let zero = ParamVector::zeros(Arc::new(ParamLayout::gin(&cfg)));
        let out = class_prototype(&zero, &cfg, &ces, &h).unwrap();
        assert!(out.prototype.iter().all(|&x| x == 0.0));
        assert_eq!(out.support_rows.nrows(), 2);
        let q = build_query_subgraph(&g, 3).unwrap();
        assert!(query_embedding(&zero, &cfg, &q, &h).unwrap().iter().all(|&x| x == 0.0));
    }
}
