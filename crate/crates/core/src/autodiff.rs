//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::backward`]
//! walks it in reverse and accumulates adjoints. Only the operations needed
//! by the encoders and losses are provided, each with a hand-derived adjoint.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::graph::Csr;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    ConstMatMul(Arc<Array2<f64>>, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Relu(Var),
    Mask(Var, Array2<f64>),
    GinAggregate { h: Var, eps: Var, adj: Arc<Csr> },
    Slice { src: Var, offset: usize },
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    NormalizeRows(Var),
    RowNorms(Var),
    Sum(Var),
    DivColumns(Var, Var),
    DivScalar(Var, Var),
    SoftmaxXent(Var, Vec<usize>),
    SqDist(Var, Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Recorded computation. Values are immutable once pushed.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`; exact zeros when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    /// Adjoint flattened in row-major order.
    pub fn flat(&self, v: Var) -> Vec<f64> {
        self.get(v).iter().copied().collect()
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &delta,
        None => *slot = Some(delta),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Row vector leaf.
    pub fn leaf_row(&mut self, values: &[f64]) -> Var {
        self.leaf(Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `x · w` for a constant left operand; only `w` receives a gradient.
    pub fn const_matmul(&mut self, x: Arc<Array2<f64>>, w: Var) -> Var {
        let v = x.dot(self.value(w));
        self.push(v, Op::ConstMatMul(x, w))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a + b` with the `1 × c` row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::AddRow(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Array2<f64>) -> Var {
        let v = self.value(a) * &mask;
        self.push(v, Op::Mask(a, mask))
    }

    /// GIN neighborhood sum `(1 + ε)·h_v + Σ_{u ∈ N(v)} h_u` over a
    /// symmetric adjacency; `eps` is a `1 × 1` variable.
    pub fn gin_aggregate(&mut self, h: Var, eps: Var, adj: Arc<Csr>) -> Var {
        let hv = self.value(h);
        assert_eq!(hv.nrows(), adj.node_count(), "adjacency/feature row mismatch");
        let self_weight = 1.0 + self.scalar(eps);
        let v = sparse_sum(&adj, hv.view(), self_weight);
        self.push(v, Op::GinAggregate { h, eps, adj })
    }

    /// `rows × cols` block read from the row-major data of `src` starting at
    /// `offset`.
    pub fn slice(&mut self, src: Var, offset: usize, rows: usize, cols: usize) -> Var {
        let data = self.value(src).as_slice().expect("standard layout");
        let v = Array2::from_shape_vec((rows, cols), data[offset..offset + rows * cols].to_vec()).unwrap();
        self.push(v, Op::Slice { src, offset })
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), rows);
        self.push(v, Op::GatherRows(a, rows.to_vec()))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        self.gather_rows(a, &[r])
    }

    /// Column means as a `1 × c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column mismatch in concat_rows");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Divides every row by its Euclidean norm. Callers must rule out zero
    /// rows first.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            row /= n;
        }
        self.push(v, Op::NormalizeRows(a))
    }

    /// Euclidean norm of each row as an `r × 1` column.
    pub fn row_norms(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
        self.push(v, Op::RowNorms(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// `a[r, c] / b[0, c]`.
    pub fn div_columns(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) / self.value(b);
        self.push(v, Op::DivColumns(a, b))
    }

    /// `a / s` for a `1 × 1` variable `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Var {
        let v = self.value(a) / self.scalar(s);
        self.push(v, Op::DivScalar(a, s))
    }

    /// Sum over rows of `-log softmax(row)[target]`, log-sum-exp stabilized.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.nrows(), targets.len());
        let mut total = 0.0;
        for (row, &t) in l.rows().into_iter().zip(targets) {
            total += log_sum_exp(row.iter().copied()) - row[t];
        }
        self.push(Array2::from_elem((1, 1), total), Op::SoftmaxXent(logits, targets.to_vec()))
    }

    /// `out[i, j] = ‖q_i − s_j‖²`.
    pub fn sq_dist(&mut self, q: Var, s: Var) -> Var {
        let (qv, sv) = (self.value(q), self.value(s));
        let mut out = Array2::zeros((qv.nrows(), sv.nrows()));
        for (i, qi) in qv.rows().into_iter().enumerate() {
            for (j, sj) in sv.rows().into_iter().enumerate() {
                out[[i, j]] = Zip::from(&qi).and(&sj).fold(0.0, |acc, a, b| acc + (a - b) * (a - b));
            }
        }
        self.push(out, Op::SqDist(q, s))
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::ConstMatMul(x, w) => {
                    accumulate(&mut grads[w.0], x.t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    let da = g.dot(self.value(*b));
                    let db = g.t().dot(self.value(*a));
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], -&g);
                    accumulate(&mut grads[a.0], g.clone());
                }
                Op::Mul(a, b) => {
                    let da = &g * self.value(*b);
                    let db = &g * self.value(*a);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::AddRow(a, b) => {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[b.0], db);
                    accumulate(&mut grads[a.0], g.clone());
                }
                Op::AddScalar(a) => accumulate(&mut grads[a.0], g.clone()),
                Op::Scale(a, c) => accumulate(&mut grads[a.0], &g * *c),
                Op::Relu(a) => {
                    let mut da = g.clone();
                    Zip::from(&mut da).and(self.value(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    accumulate(&mut grads[a.0], da);
                }
                Op::Mask(a, m) => accumulate(&mut grads[a.0], &g * m),
                Op::GinAggregate { h, eps, adj } => {
                    let self_weight = 1.0 + self.scalar(*eps);
                    let dh = sparse_sum(adj, g.view(), self_weight);
                    let deps = (&g * self.value(*h)).sum();
                    accumulate(&mut grads[h.0], dh);
                    accumulate(&mut grads[eps.0], Array2::from_elem((1, 1), deps));
                }
                Op::Slice { src, offset } => {
                    let shape = self.shape(*src);
                    let mut d = Array2::zeros(shape);
                    let flat = d.as_slice_mut().unwrap();
                    for (k, &x) in g.iter().enumerate() {
                        flat[offset + k] = x;
                    }
                    accumulate(&mut grads[src.0], d);
                }
                Op::GatherRows(a, rows) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = d.row_mut(r);
                        dst += &g.row(k);
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.shape(*a);
                    let row = g.row(0).to_owned() / r as f64;
                    let d = row.broadcast((r, c)).unwrap().to_owned();
                    accumulate(&mut grads[a.0], d);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.shape(*p).0;
                        accumulate(&mut grads[p.0], g.slice(s![start..start + rows, ..]).to_owned());
                        start += rows;
                    }
                }
                Op::NormalizeRows(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut d = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        let n = x.row(i).dot(&x.row(i)).sqrt();
                        let yg = y.row(i).dot(&g.row(i));
                        let row = (&g.row(i) - &(&y.row(i) * yg)) / n;
                        d.row_mut(i).assign(&row);
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::RowNorms(a) => {
                    let x = self.value(*a);
                    let mut d = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        let n = node.value[[i, 0]];
                        if n > 0.0 {
                            let row = &x.row(i) * (g[[i, 0]] / n);
                            d.row_mut(i).assign(&row);
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::Sum(a) => {
                    let d = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    accumulate(&mut grads[a.0], d);
                }
                Op::DivColumns(a, b) => {
                    let bv = self.value(*b);
                    let da = &g / bv;
                    let db = -(&g * self.value(*a) / (bv * bv)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::DivScalar(a, sv) => {
                    let sval = self.scalar(*sv);
                    let da = &g / sval;
                    let ds = -(&g * self.value(*a)).sum() / (sval * sval);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[sv.0], Array2::from_elem((1, 1), ds));
                }
                Op::SoftmaxXent(logits, targets) => {
                    let l = self.value(*logits);
                    let mut d = Array2::zeros(l.dim());
                    let scale = g[[0, 0]];
                    for (i, &t) in targets.iter().enumerate() {
                        let row = l.row(i);
                        let lse = log_sum_exp(row.iter().copied());
                        for j in 0..row.len() {
                            d[[i, j]] = scale * ((row[j] - lse).exp() - f64::from(j == t));
                        }
                    }
                    accumulate(&mut grads[logits.0], d);
                }
                Op::SqDist(q, sv) => {
                    let (qv, svv) = (self.value(*q), self.value(*sv));
                    let mut dq = Array2::zeros(qv.dim());
                    let mut ds = Array2::zeros(svv.dim());
                    for i in 0..qv.nrows() {
                        for j in 0..svv.nrows() {
                            let w = 2.0 * g[[i, j]];
                            let diff = (&qv.row(i) - &svv.row(j)) * w;
                            let mut a = dq.row_mut(i);
                            a += &diff;
                            let mut b = ds.row_mut(j);
                            b -= &diff;
                        }
                    }
                    accumulate(&mut grads[q.0], dq);
                    accumulate(&mut grads[sv.0], ds);
                }
            }
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        let shapes = self.nodes.iter().map(|n| n.value.dim()).collect();
        Gradients { grads, shapes }
    }
}

/// `self_weight·x_v + Σ_{u ∈ N(v)} x_u` for every row.
fn sparse_sum(adj: &Csr, x: ArrayView2<'_, f64>, self_weight: f64) -> Array2<f64> {
    let mut out = &x * self_weight;
    for v in 0..adj.node_count() {
        let mut dst = out.row_mut(v);
        for &u in adj.row(v) {
            dst += &x.row(u);
        }
    }
    out
}

/// Stable `log Σ exp(x)`.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central differences of `f` around `x`, one coordinate at a time.
    fn numeric_grad(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            g.as_slice_mut().unwrap()[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>) {
        for (x, y) in a.iter().zip(b) {
            let denom = x.abs().max(y.abs()).max(1e-4);
            assert!((x - y).abs() / denom < 1e-5, "{x} vs {y}");
        }
    }

    fn build(x: &Array2<f64>) -> (Tape, Var, Var) {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let w = t.leaf(array![[0.3, -0.2, 0.5], [0.1, 0.7, -0.4]]);
        let adj = Arc::new(Csr::from_undirected_edges(3, &[(0, 1), (1, 2)]).unwrap());
        let eps = t.leaf(array![[0.25]]);
        let agg = t.gin_aggregate(xv, eps, adj);
        let h = t.matmul(agg, w);
        let r = t.relu(h);
        let n = t.normalize_rows(r);
        let protos = t.gather_rows(n, &[0, 2]);
        let m = t.mean_rows(protos);
        let both = t.concat_rows(&[protos, m]);
        let norms = t.row_norms(h);
        let total = t.sum(norms);
        let taus = t.slice(both, 0, 1, 3);
        let taus = t.add_scalar(taus, 2.0);
        let logits = t.matmul_t(n, both);
        let logits = t.div_scalar(logits, total);
        let sd = t.sq_dist(r, both);
        let sd = t.scale(sd, -0.5);
        let logits = t.add(logits, sd);
        let l = t.div_columns(logits, taus);
        let loss = t.softmax_xent(l, &[0, 1, 2]);
        (t, xv, loss)
    }

    #[test]
    fn composite_gradient_matches_central_differences() {
        let x = array![[0.5, -1.0], [1.5, 0.3], [-0.7, 0.9]];
        let (t, xv, loss) = build(&x);
        let analytic = t.backward(loss).get(xv);
        let numeric = numeric_grad(&x, |x| {
            let (t, _, loss) = build(x);
            t.scalar(loss)
        });
        assert_close(&analytic, &numeric);
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0]]);
        let unused = t.leaf(array![[3.0]]);
        let s = t.sum(a);
        let g = t.backward(s);
        assert_eq!(g.get(unused), array![[0.0]]);
        assert_eq!(g.get(a), array![[1.0, 1.0]]);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp([1000.0, 1000.0].into_iter());
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
