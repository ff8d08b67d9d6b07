//! Attributed graph storage and the neighborhood queries used by the
//! episode sampler and the subgraph builders.

mod csr;
pub mod io;

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use csr::Csr;

use crate::error::{Result, TentError};

/// Immutable attributed graph: symmetric CSR adjacency, dense `f64`
/// features (one row per node) and integer labels, `-1` for unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Csr,
    features: Arc<Array2<f64>>,
    labels: Vec<i64>,
}

impl Graph {
    pub fn new(adjacency: Csr, features: Array2<f64>, labels: Vec<i64>) -> Result<Self> {
        let n = adjacency.node_count();
        if n == 0 {
            return Err(TentError::Integrity("graph has no nodes".into()));
        }
        if features.nrows() != n {
            return Err(TentError::Integrity(format!(
                "feature rows ({}) != node count ({n})",
                features.nrows()
            )));
        }
        if labels.len() != n {
            return Err(TentError::Integrity(format!(
                "label count ({}) != node count ({n})",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l < -1) {
            return Err(TentError::Integrity(format!("invalid label {bad}")));
        }
        Ok(Graph {
            adjacency,
            features: Arc::new(features),
            labels,
        })
    }

    /// Convenience constructor from an undirected edge list.
    pub fn from_edges(edges: &[(usize, usize)], features: Array2<f64>, labels: Vec<i64>) -> Result<Self> {
        let adjacency = Csr::from_undirected_edges(features.nrows(), edges)?;
        Graph::new(adjacency, features, labels)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.node_count()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    /// Shared handle to the feature matrix.
    pub fn features_arc(&self) -> Arc<Array2<f64>> {
        Arc::clone(&self.features)
    }

    pub fn feature_row(&self, v: usize) -> ArrayView1<'_, f64> {
        self.features.row(v)
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    /// Label of `v`, `None` when unlabeled.
    pub fn label(&self, v: usize) -> Option<usize> {
        usize::try_from(self.labels[v]).ok()
    }

    /// Sorted distinct label values present in the graph.
    pub fn classes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.labels.iter().filter_map(|&l| usize::try_from(l).ok()).collect();
        set.into_iter().collect()
    }

    /// Labeled nodes of class `c`, ascending.
    pub fn nodes_of_class(&self, c: usize) -> Vec<usize> {
        (0..self.node_count()).filter(|&v| self.label(v) == Some(c)).collect()
    }

    fn check(&self, v: usize) -> Result<()> {
        if v >= self.node_count() {
            Err(TentError::Bounds {
                node: v,
                node_count: self.node_count(),
            })
        } else {
            Ok(())
        }
    }

    /// Sorted one-hop neighbors of `v`.
    pub fn neighbors(&self, v: usize) -> Result<&[usize]> {
        self.check(v)?;
        Ok(self.adjacency.row(v))
    }

    /// All nodes within shortest-path distance `k` of `v`, `v` included,
    /// ascending.
    pub fn k_hop_neighborhood(&self, v: usize, k: usize) -> Result<Vec<usize>> {
        self.check(v)?;
        let mut seen = BTreeSet::from([v]);
        let mut frontier = vec![v];
        for _ in 0..k {
            let mut next = Vec::new();
            for &u in &frontier {
                for &w in self.adjacency.row(u) {
                    if seen.insert(w) {
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        Ok(seen.into_iter().collect())
    }

    /// Subgraph induced on `nodes` (deduplicated, ascending) with `centroid`
    /// marked.
    pub fn induced_subgraph(&self, nodes: &[usize], centroid: usize) -> Result<Subgraph> {
        for &v in nodes {
            self.check(v)?;
        }
        let mut sorted = nodes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let centroid_index = sorted.binary_search(&centroid).map_err(|_| {
            TentError::Argument(format!("centroid {centroid} is not in the node set"))
        })?;
        let rows = sorted
            .iter()
            .map(|&v| {
                self.adjacency
                    .row(v)
                    .iter()
                    .filter_map(|u| sorted.binary_search(u).ok())
                    .collect()
            })
            .collect();
        Ok(Subgraph {
            nodes: sorted.into_iter().map(LocalNode::Real).collect(),
            adjacency: Csr::from_rows(rows),
            centroid_index,
        })
    }

    /// Breadth-first distances from `v` (`usize::MAX` when unreachable).
    pub fn bfs_distances(&self, v: usize) -> Result<Vec<usize>> {
        self.check(v)?;
        let mut dist = vec![usize::MAX; self.node_count()];
        dist[v] = 0;
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for &w in self.adjacency.row(u) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        Ok(dist)
    }
}

/// A node of a local subgraph: either a node of the parent graph or a
/// synthetic node with no parent counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocalNode {
    Real(usize),
    Virtual,
}

/// Local subgraph with its own CSR over local indices. Feature rows are
/// gathered on demand from whichever node-feature matrix the caller runs on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgraph {
    pub nodes: Vec<LocalNode>,
    pub adjacency: Csr,
    pub centroid_index: usize,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn real_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            LocalNode::Real(v) => Some(*v),
            LocalNode::Virtual => None,
        })
    }

    pub fn local_index(&self, node: LocalNode) -> Option<usize> {
        self.nodes.iter().position(|&n| n == node)
    }

    /// Copies the rows of `source` for each real node; virtual rows use
    /// `virtual_row`.
    pub fn gather_features(&self, source: &Array2<f64>, virtual_row: Option<ArrayView1<'_, f64>>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((self.len(), source.ncols()));
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                LocalNode::Real(v) => out.row_mut(i).assign(&source.row(*v)),
                LocalNode::Virtual => {
                    let row = virtual_row.ok_or_else(|| {
                        TentError::Argument("virtual node without a feature row".into())
                    })?;
                    out.row_mut(i).assign(&row);
                }
            }
        }
        Ok(out)
    }
}

/// Disjoint base / validation / novel class sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub base: Vec<usize>,
    pub val: Vec<usize>,
    pub novel: Vec<usize>,
}

impl ClassSplit {
    /// Checks disjointness, non-emptiness and that every class occurs in `g`.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let observed: BTreeSet<usize> = g.classes().into_iter().collect();
        let mut all = BTreeSet::new();
        for (name, set) in [("base", &self.base), ("val", &self.val), ("novel", &self.novel)] {
            if set.is_empty() {
                return Err(TentError::Argument(format!("{name} class set is empty")));
            }
            for &c in set {
                if !observed.contains(&c) {
                    return Err(TentError::Argument(format!("{name} class {c} has no labeled nodes")));
                }
                if !all.insert(c) {
                    return Err(TentError::Argument(format!("class {c} appears in more than one set")));
                }
            }
        }
        Ok(())
    }

    /// Index of a base class inside the sorted base set, used as the
    /// classifier-head target.
    pub fn base_index(&self, class: usize) -> Option<usize> {
        let mut sorted = self.base.clone();
        sorted.sort_unstable();
        sorted.binary_search(&class).ok()
    }
}

/// Seeded shuffle of the graph's classes, partitioned in order into
/// `(n_base, n_val, n_novel)`.
pub fn make_class_split(g: &Graph, counts: (usize, usize, usize), seed: u64) -> Result<ClassSplit> {
    let (n_base, n_val, n_novel) = counts;
    let mut classes = g.classes();
    if n_base + n_val + n_novel > classes.len() {
        return Err(TentError::Argument(format!(
            "split ({n_base}, {n_val}, {n_novel}) needs more than the {} available classes",
            classes.len()
        )));
    }
    if n_base == 0 || n_val == 0 || n_novel == 0 {
        return Err(TentError::Argument("every split part needs at least one class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    classes.shuffle(&mut rng);
    let mut it = classes.into_iter();
    let mut take = |k: usize| -> Vec<usize> {
        let mut v: Vec<usize> = it.by_ref().take(k).collect();
        v.sort_unstable();
        v
    };
    let base = take(n_base);
    let val = take(n_val);
    let novel = take(n_novel);
    Ok(ClassSplit { base, val, novel })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
        Graph::from_edges(&edges, Array2::zeros((n, 1)), vec![0; n]).unwrap()
    }

    #[test]
    fn neighbors_on_path() {
        let g = path(3);
        assert_eq!(g.neighbors(1).unwrap(), &[0, 2]);
        assert!(matches!(g.neighbors(3), Err(TentError::Bounds { .. })));
    }

    #[test]
    fn isolated_nodes_have_no_neighbors() {
        let g = Graph::from_edges(&[], Array2::zeros((3, 2)), vec![0, 1, 2]).unwrap();
        for v in 0..3 {
            assert!(g.neighbors(v).unwrap().is_empty());
        }
    }

    #[test]
    fn k_hop_on_path() {
        let g = path(4);
        assert_eq!(g.k_hop_neighborhood(0, 2).unwrap(), vec![0, 1, 2]);
        assert_eq!(g.k_hop_neighborhood(2, 0).unwrap(), vec![2]);
        assert!(g.k_hop_neighborhood(9, 1).is_err());
    }

    #[test]
    fn induced_triangle_pair() {
        let g = Graph::from_edges(&[(0, 1), (1, 2), (0, 2)], Array2::zeros((3, 1)), vec![0; 3]).unwrap();
        let sg = g.induced_subgraph(&[0, 1], 0).unwrap();
        assert_eq!(sg.adjacency.undirected_edge_count(), 1);
        assert!(matches!(g.induced_subgraph(&[0, 1], 2), Err(TentError::Argument(_))));
        let full = g.induced_subgraph(&[2, 1, 0], 1).unwrap();
        assert_eq!(&full.adjacency, g.adjacency());
        assert_eq!(full.centroid_index, 1);
    }

    #[test]
    fn split_exhaustive_and_deterministic() {
        let g = Graph::from_edges(&[], Array2::zeros((3, 1)), vec![0, 1, 2]).unwrap();
        let s = make_class_split(&g, (1, 1, 1), 3).unwrap();
        s.validate(&g).unwrap();
        let mut all: Vec<_> = s.base.iter().chain(&s.val).chain(&s.novel).copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(make_class_split(&g, (2, 1, 1), 3).is_err());
    }

    #[test]
    fn split_seed_sensitivity() {
        let labels: Vec<i64> = (0..12).collect();
        let g = Graph::from_edges(&[], Array2::zeros((12, 1)), labels).unwrap();
        let a = make_class_split(&g, (4, 4, 4), 1).unwrap();
        assert_eq!(a, make_class_split(&g, (4, 4, 4), 1).unwrap());
        let differing = (2..12).filter(|&s| make_class_split(&g, (4, 4, 4), s).unwrap() != a).count();
        assert!(differing >= 9);
    }
}
