use serde::{Deserialize, Serialize};

use crate::error::{Result, TentError};

/// Compressed sparse row adjacency over `0..node_count`.
///
/// Rows are sorted and free of duplicates. Undirected graphs store both
/// directions of every edge, so the structure is symmetric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    /// Builds a symmetric adjacency from an arbitrary edge list.
    ///
    /// Each pair is inserted in both directions; self-loops and duplicates
    /// are dropped. Endpoints must already be in range.
    pub fn from_undirected_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut degree = vec![0usize; node_count];
        for &(u, v) in edges {
            for w in [u, v] {
                if w >= node_count {
                    return Err(TentError::Bounds {
                        node: w,
                        node_count,
                    });
                }
            }
            if u != v {
                degree[u] += 1;
                degree[v] += 1;
            }
        }
        let mut rows: Vec<Vec<usize>> = degree.iter().map(|&d| Vec::with_capacity(d)).collect();
        for &(u, v) in edges {
            if u != v {
                rows[u].push(v);
                rows[v].push(u);
            }
        }
        Ok(Self::from_rows(rows))
    }

    /// Builds from per-node neighbor lists, sorting and deduplicating each row.
    pub(crate) fn from_rows(mut rows: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            targets.extend_from_slice(row);
            offsets.push(targets.len());
        }
        Csr { offsets, targets }
    }

    /// Validates raw CSR arrays (non-decreasing offsets, in-range targets,
    /// sorted rows, no self-loops, symmetry).
    pub fn from_raw(offsets: Vec<usize>, targets: Vec<usize>) -> Result<Self> {
        if offsets.is_empty() || offsets[0] != 0 {
            return Err(TentError::Integrity("offsets must start at 0".into()));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(TentError::Integrity("offsets must be non-decreasing".into()));
        }
        if *offsets.last().unwrap() != targets.len() {
            return Err(TentError::Integrity(
                "last offset must equal the number of targets".into(),
            ));
        }
        let csr = Csr { offsets, targets };
        let n = csr.node_count();
        for v in 0..n {
            let row = csr.row(v);
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(TentError::Integrity(format!("row {v} not strictly sorted")));
            }
            for &u in row {
                if u >= n {
                    return Err(TentError::Integrity(format!("target {u} out of range")));
                }
                if u == v {
                    return Err(TentError::Integrity(format!("self-loop at {v}")));
                }
                if csr.row(u).binary_search(&v).is_err() {
                    return Err(TentError::Integrity(format!("edge ({v},{u}) not symmetric")));
                }
            }
        }
        Ok(csr)
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of stored directed entries (twice the undirected edge count).
    pub fn entry_count(&self) -> usize {
        self.targets.len()
    }

    pub fn undirected_edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    #[inline]
    pub fn row(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.row(u).binary_search(&v).is_ok()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Undirected edges as `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count())
            .flat_map(move |u| self.row(u).iter().map(move |&v| (u, v)))
            .filter(|&(u, v)| u < v)
    }

    /// Disjoint union of several adjacencies; block `i` is shifted by the
    /// sum of the preceding node counts.
    pub fn block_diagonal<'a>(blocks: impl IntoIterator<Item = &'a Csr>) -> Csr {
        let mut offsets = vec![0usize];
        let mut targets = Vec::new();
        let mut shift = 0;
        for block in blocks {
            for v in 0..block.node_count() {
                targets.extend(block.row(v).iter().map(|&u| u + shift));
                offsets.push(targets.len());
            }
            shift += block.node_count();
        }
        Csr { offsets, targets }
    }
}
