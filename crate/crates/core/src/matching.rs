//! Task-level adaptation: per-class adaptive temperatures, the
//! temperature-scaled cosine matching loss, the auxiliary base-class
//! cross-entropy and the prediction rule.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoder::{linear_var, xavier_init, ParamLayout, ParamVector};
use crate::error::{Result, TentError};

/// Total within-class spread below which every temperature falls back to 1.
pub const DEGENERATE_SPREAD: f64 = 1e-12;

/// Smallest per-class spread, as a fraction of the mean spread, so that a
/// class whose supports coincide with its prototype keeps a finite logit.
pub const MIN_RELATIVE_SPREAD: f64 = 1e-6;

/// Strictly positive per-class temperatures, mean 1 unless degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureVector {
    pub tau: Vec<f64>,
    pub fallback: bool,
}

impl TemperatureVector {
    pub fn uniform(n: usize) -> Self {
        TemperatureVector {
            tau: vec![1.0; n],
            fallback: true,
        }
    }
}

/// On-tape temperatures: `τ_i = N·D_i / Σ_j D_j` with
/// `D_i = Σ_k ‖s_i^k − s_i‖₂`, each `D_i` floored at
/// [`MIN_RELATIVE_SPREAD`] of the mean. Returns a `1 × N` row and whether
/// the degenerate fallback (constant ones, no gradient) was taken.
pub fn temperatures_var(tape: &mut Tape, support_rows: &[Var], prototypes: &[Var]) -> (Var, bool) {
    let n = prototypes.len();
    let spreads: Vec<Var> = support_rows
        .iter()
        .zip(prototypes)
        .map(|(&rows, &proto)| {
            let neg = tape.scale(proto, -1.0);
            let diff = tape.add_row(rows, neg);
            let norms = tape.row_norms(diff);
            tape.sum(norms)
        })
        .collect();
    let stacked = tape.concat_rows(&spreads);
    let d = tape.slice(stacked, 0, 1, n);
    let total = tape.sum(d);
    if tape.scalar(total) < DEGENERATE_SPREAD {
        return (tape.leaf(Array2::ones((1, n))), true);
    }
    let floor = MIN_RELATIVE_SPREAD * tape.scalar(total) / n as f64;
    let (d, total) = if tape.value(d).iter().any(|&x| x < floor) {
        let ones = tape.leaf(Array2::ones((1, n)));
        let spread = tape.matmul(total, ones);
        let floor_row = tape.scale(spread, MIN_RELATIVE_SPREAD / n as f64);
        let gap = tape.sub(floor_row, d);
        let lift = tape.relu(gap);
        let d = tape.add(d, lift);
        (d, tape.sum(d))
    } else {
        (d, total)
    };
    let ratio = tape.div_scalar(d, total);
    (tape.scale(ratio, n as f64), false)
}

/// Adaptive temperatures from raw (unnormalized) support-node embeddings
/// `support_embs[i]` (K rows each) and prototypes `s_i`.
pub fn adaptive_temperatures(support_embs: &[Array2<f64>], prototypes: &[Vec<f64>]) -> Result<TemperatureVector> {
    if support_embs.is_empty() || support_embs.len() != prototypes.len() {
        return Err(TentError::Shape(format!(
            "{} support groups for {} prototypes",
            support_embs.len(),
            prototypes.len()
        )));
    }
    let mut tape = Tape::new();
    let mut rows = Vec::new();
    let mut protos = Vec::new();
    for (s, p) in support_embs.iter().zip(prototypes) {
        if s.nrows() == 0 || s.ncols() != p.len() {
            return Err(TentError::Shape("support rows must be non-empty and match prototype width".into()));
        }
        rows.push(tape.leaf(s.clone()));
        protos.push(tape.leaf_row(p));
    }
    let (tau, fallback) = temperatures_var(&mut tape, &rows, &protos);
    Ok(TemperatureVector {
        tau: tape.value(tau).iter().copied().collect(),
        fallback,
    })
}

fn check_normalizable(tape: &Tape, v: Var, what: &str) -> Result<()> {
    for (i, row) in tape.value(v).rows().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(TentError::Numeric(format!("{what} row {i} has norm {n}; cannot normalize")));
        }
    }
    Ok(())
}

/// `Q × N` logits `q̂_i · ŝ_j / τ_j` over ℓ2-normalized rows.
pub fn cosine_logits_var(tape: &mut Tape, queries: Var, prototypes: Var, tau: Var) -> Result<Var> {
    check_normalizable(tape, queries, "query embedding")?;
    check_normalizable(tape, prototypes, "prototype")?;
    if tape.shape(queries).1 != tape.shape(prototypes).1 {
        return Err(TentError::Shape("query and prototype widths differ".into()));
    }
    if tape.shape(tau) != (1, tape.shape(prototypes).0) {
        return Err(TentError::Shape("one temperature per prototype required".into()));
    }
    let q = tape.normalize_rows(queries);
    let s = tape.normalize_rows(prototypes);
    let dots = tape.matmul_t(q, s);
    Ok(tape.div_columns(dots, tau))
}

fn check_slots(slots: &[usize], n: usize, rows: usize) -> Result<()> {
    if slots.len() != rows {
        return Err(TentError::Shape(format!("{} slots for {rows} queries", slots.len())));
    }
    if let Some(s) = slots.iter().find(|&&s| s >= n) {
        return Err(TentError::Argument(format!("slot {s} outside 0..{n}")));
    }
    Ok(())
}

/// On-tape `L_N = Σ_i −log softmax_j(q̂_i·ŝ_j/τ_j)[slot_i]`.
pub fn info_loss_var(tape: &mut Tape, queries: Var, prototypes: Var, tau: Var, slots: &[usize]) -> Result<Var> {
    let logits = cosine_logits_var(tape, queries, prototypes, tau)?;
    check_slots(slots, tape.shape(prototypes).0, tape.shape(queries).0)?;
    Ok(tape.softmax_xent(logits, slots))
}

/// Matching loss for raw query embeddings (rows), raw prototypes (rows),
/// temperatures and true slots.
pub fn info_loss(queries: &Array2<f64>, prototypes: &Array2<f64>, tau: &[f64], slots: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let q = tape.leaf(queries.clone());
    let s = tape.leaf(prototypes.clone());
    let t = tape.leaf_row(tau);
    let l = info_loss_var(&mut tape, q, s, t, slots)?;
    Ok(tape.scalar(l))
}

/// Lowest index of the row maximum.
pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// `argmax_j q̂_i · ŝ_j / τ_j`, ties to the lowest slot.
pub fn predict(queries: &Array2<f64>, prototypes: &Array2<f64>, tau: &[f64]) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let q = tape.leaf(queries.clone());
    let s = tape.leaf(prototypes.clone());
    let t = tape.leaf_row(tau);
    let logits = cosine_logits_var(&mut tape, q, s, t)?;
    Ok(argmax_rows(tape.value(logits)))
}

/// Negative squared-Euclidean logits `−‖q_i − s_j‖²` on raw embeddings.
pub fn euclidean_logits_var(tape: &mut Tape, queries: Var, prototypes: Var) -> Result<Var> {
    if tape.shape(queries).1 != tape.shape(prototypes).1 {
        return Err(TentError::Shape("query and prototype widths differ".into()));
    }
    let d = tape.sq_dist(queries, prototypes);
    Ok(tape.scale(d, -1.0))
}

/// Linear classifier over first-step embeddings, one output per base class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub params: ParamVector,
}

impl ClassifierHead {
    pub fn init(input: usize, classes: usize, rng: &mut impl Rng) -> Self {
        ClassifierHead {
            params: xavier_init(Arc::new(ParamLayout::linear(input, classes)), rng, false),
        }
    }

    pub fn classes(&self) -> usize {
        self.params.layout().slot("b").map(|s| s.cols).unwrap_or(0)
    }

    pub fn input_dim(&self) -> usize {
        self.params.layout().slot("w").map(|s| s.rows).unwrap_or(0)
    }
}

/// On-tape `L_CE = Σ_i −log softmax(W h_i + b)[y_i]`.
pub fn base_class_ce_var(tape: &mut Tape, head: Var, layout: &ParamLayout, h_query: Var, labels: &[usize]) -> Result<Var> {
    let classes = layout.slot("b")?.cols;
    check_slots(labels, classes, tape.shape(h_query).0)?;
    let logits = linear_var(tape, head, layout, h_query)?;
    Ok(tape.softmax_xent(logits, labels))
}

pub fn base_class_ce(head: &ClassifierHead, h_query: &Array2<f64>, base_labels: &[usize]) -> Result<f64> {
    if h_query.ncols() != head.input_dim() {
        return Err(TentError::Shape(format!(
            "embedding width {} vs head input {}",
            h_query.ncols(),
            head.input_dim()
        )));
    }
    let mut tape = Tape::new();
    let p = head.params.to_tape(&mut tape);
    let h = tape.leaf(h_query.clone());
    let l = base_class_ce_var(&mut tape, p, head.params.layout(), h, base_labels)?;
    Ok(tape.scalar(l))
}

/// `L = L_N + γ·L_CE`.
pub fn total_loss(l_n: f64, l_ce: f64, gamma: f64) -> f64 {
    l_n + gamma * l_ce
}
