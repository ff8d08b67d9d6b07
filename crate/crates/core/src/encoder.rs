//! Two-layer GIN encoders over flat parameter vectors.
//!
//! Every trainable group (encoder, adapter perceptrons, classifier head) is
//! a [`ParamVector`]: one contiguous `f64` buffer plus a [`ParamLayout`]
//! naming each tensor's slice. FiLM modulation acts on the flat buffer, and
//! the forward pass slices it back into matrices on the tape.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Result, TentError};
use crate::graph::{Csr, Subgraph};

/// Bumped whenever slot order or naming changes.
pub const LAYOUT_VERSION: u32 = 1;

pub const GIN_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GinConfig {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub dropout: f64,
}

impl GinConfig {
    pub fn new(in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        GinConfig {
            in_dim,
            hidden_dim,
            out_dim,
            dropout: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(TentError::Argument("GIN dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TentError::Argument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// `(input, output)` width of GIN layer `l`. Each layer's update
    /// perceptron is `input → hidden_dim → output`.
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        match l {
            0 => (self.in_dim, self.hidden_dim),
            _ => (self.hidden_dim, self.out_dim),
        }
    }
}

/// One named tensor inside a flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_weight(&self) -> bool {
        self.name.rsplit('.').next().is_some_and(|n| n.starts_with('w'))
    }
}

/// Ordered slot schema of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    slots: Vec<ParamSlot>,
    len: usize,
}

impl ParamLayout {
    pub fn from_shapes<S: Into<String>>(shapes: impl IntoIterator<Item = (S, usize, usize)>) -> Self {
        let mut slots = Vec::new();
        let mut offset = 0;
        for (name, rows, cols) in shapes {
            slots.push(ParamSlot {
                name: name.into(),
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        }
        ParamLayout { slots, len: offset }
    }

    /// GIN schema: per layer `eps (1×1)`, `w1`, `b1`, `w2`, `b2`.
    pub fn gin(cfg: &GinConfig) -> Self {
        let mut shapes = Vec::new();
        for l in 0..GIN_LAYERS {
            let (din, dout) = cfg.layer_dims(l);
            let h = cfg.hidden_dim;
            shapes.push((format!("layer{l}.eps"), 1, 1));
            shapes.push((format!("layer{l}.w1"), din, h));
            shapes.push((format!("layer{l}.b1"), 1, h));
            shapes.push((format!("layer{l}.w2"), h, dout));
            shapes.push((format!("layer{l}.b2"), 1, dout));
        }
        ParamLayout::from_shapes(shapes)
    }

    /// Two-layer perceptron `in → hidden (ReLU) → out`.
    pub fn mlp(input: usize, hidden: usize, output: usize) -> Self {
        ParamLayout::from_shapes([
            ("w1", input, hidden),
            ("b1", 1, hidden),
            ("w2", hidden, output),
            ("b2", 1, output),
        ])
    }

    /// Single affine map `in → out`.
    pub fn linear(input: usize, output: usize) -> Self {
        ParamLayout::from_shapes([("w", input, output), ("b", 1, output)])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Result<&ParamSlot> {
        self.slots
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| TentError::Schema(format!("no parameter slot named {name}")))
    }
}

/// Flat parameter buffer tied to its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        ParamVector {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(TentError::Schema(format!(
                "expected {} values for layout, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(ParamVector { values, layout })
    }

    /// Packs named tensors in layout order.
    pub fn flatten(layout: Arc<ParamLayout>, tensors: &[(String, Array2<f64>)]) -> Result<Self> {
        if tensors.len() != layout.slots().len() {
            return Err(TentError::Schema(format!(
                "expected {} tensors, got {}",
                layout.slots().len(),
                tensors.len()
            )));
        }
        let mut values = Vec::with_capacity(layout.len());
        for (slot, (name, t)) in layout.slots().iter().zip(tensors) {
            if &slot.name != name || t.dim() != (slot.rows, slot.cols) {
                return Err(TentError::Schema(format!(
                    "tensor {name} {:?} does not match slot {} ({}x{})",
                    t.dim(),
                    slot.name,
                    slot.rows,
                    slot.cols
                )));
            }
            values.extend(t.iter().copied());
        }
        ParamVector::from_values(layout, values)
    }

    /// Splits the buffer back into named tensors.
    pub fn unflatten(&self) -> Vec<(String, Array2<f64>)> {
        self.layout
            .slots()
            .iter()
            .map(|s| {
                let data = self.values[s.offset..s.offset + s.len()].to_vec();
                (s.name.clone(), Array2::from_shape_vec((s.rows, s.cols), data).unwrap())
            })
            .collect()
    }

    pub fn tensor(&self, name: &str) -> Result<Array2<f64>> {
        let s = self.layout.slot(name)?;
        Ok(Array2::from_shape_vec((s.rows, s.cols), self.values[s.offset..s.offset + s.len()].to_vec()).unwrap())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    /// Writes a leaf `1 × len` row onto the tape.
    pub fn to_tape(&self, tape: &mut Tape) -> Var {
        tape.leaf_row(&self.values)
    }
}

/// Xavier-uniform weights (`±sqrt(6 / (fan_in + fan_out))`), zero biases
/// and zero GIN ε. With `zero_output`, the last weight slot and every slot
/// after it stay zero.
pub fn xavier_init(layout: Arc<ParamLayout>, rng: &mut impl Rng, zero_output: bool) -> ParamVector {
    let mut p = ParamVector::zeros(layout.clone());
    let last_weight = layout.slots().iter().rposition(|s| s.is_weight());
    for (i, slot) in layout.slots().iter().enumerate() {
        if !slot.is_weight() || (zero_output && Some(i) == last_weight) {
            continue;
        }
        let bound = (6.0 / (slot.rows + slot.cols) as f64).sqrt();
        for x in &mut p.values[slot.offset..slot.offset + slot.len()] {
            *x = rng.gen_range(-bound..=bound);
        }
    }
    p
}

/// Seeded GIN initialization.
pub fn init_params(cfg: &GinConfig, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_init(Arc::new(ParamLayout::gin(cfg)), &mut rng, false)
}

/// Train mode applies inverted dropout after hidden ReLUs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Source of dropout masks. `None` rate or eval mode disables dropout.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let (r, c) = tape.shape(x);
        let mask = Array2::from_shape_fn((r, c), |_| {
            if self.rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        tape.mask(x, mask)
    }
}

fn slot_var(tape: &mut Tape, params: Var, layout: &ParamLayout, name: &str) -> Result<Var> {
    let s = layout.slot(name)?;
    Ok(tape.slice(params, s.offset, s.rows, s.cols))
}

/// `relu(x·w1 + b1) · w2 + b2` with weights taken from `params` by slot
/// name prefix.
pub fn mlp_var(
    tape: &mut Tape,
    params: Var,
    layout: &ParamLayout,
    prefix: &str,
    x: Var,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    let w1 = slot_var(tape, params, layout, &format!("{prefix}w1"))?;
    let b1 = slot_var(tape, params, layout, &format!("{prefix}b1"))?;
    let w2 = slot_var(tape, params, layout, &format!("{prefix}w2"))?;
    let b2 = slot_var(tape, params, layout, &format!("{prefix}b2"))?;
    let h = tape.matmul(x, w1);
    let h = tape.add_row(h, b1);
    let mut h = tape.relu(h);
    if let Some(d) = dropout {
        h = d.apply(tape, h);
    }
    let out = tape.matmul(h, w2);
    Ok(tape.add_row(out, b2))
}

/// Affine map `x·w + b`.
pub fn linear_var(tape: &mut Tape, params: Var, layout: &ParamLayout, x: Var) -> Result<Var> {
    let w = slot_var(tape, params, layout, "w")?;
    let b = slot_var(tape, params, layout, "b")?;
    let out = tape.matmul(x, w);
    Ok(tape.add_row(out, b))
}

fn check_finite(tape: &Tape, v: Var, layer: usize) -> Result<()> {
    if tape.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TentError::Numeric(format!("non-finite activation after GIN layer {layer}")))
    }
}

/// Node-feature input of a GIN pass: a tape variable, or a constant matrix
/// that never receives a gradient (raw graph features).
#[derive(Debug, Clone)]
pub enum NodeInput {
    Var(Var),
    Const(Arc<Array2<f64>>),
}

impl NodeInput {
    fn shape(&self, tape: &Tape) -> (usize, usize) {
        match self {
            NodeInput::Var(v) => tape.shape(*v),
            NodeInput::Const(x) => x.dim(),
        }
    }
}

/// Differentiable two-layer GIN. `params` is a `1 × d_θ` row laid out per
/// [`ParamLayout::gin`]; the input holds one row per node of `adj`.
///
/// Each layer computes `MLP((1 + ε)·h_v + Σ_{u ∈ N(v)} h_u)`. The first
/// linear map is applied before aggregation, which is the same function
/// because aggregation is linear, and keeps wide inputs off the tape.
pub fn gin_forward_var(
    tape: &mut Tape,
    params: Var,
    cfg: &GinConfig,
    adj: &Arc<Csr>,
    input: NodeInput,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    let layout = ParamLayout::gin(cfg);
    if tape.shape(params) != (1, layout.len()) {
        return Err(TentError::Shape(format!(
            "parameter row {:?} does not match GIN schema length {}",
            tape.shape(params),
            layout.len()
        )));
    }
    let (rows, cols) = input.shape(tape);
    if cols != cfg.in_dim || rows != adj.node_count() {
        return Err(TentError::Shape(format!(
            "features {rows}x{cols} vs {} nodes of width {}",
            adj.node_count(),
            cfg.in_dim
        )));
    }
    let mut h = input;
    let mut out = None;
    for l in 0..GIN_LAYERS {
        let eps = slot_var(tape, params, &layout, &format!("layer{l}.eps"))?;
        let w1 = slot_var(tape, params, &layout, &format!("layer{l}.w1"))?;
        let b1 = slot_var(tape, params, &layout, &format!("layer{l}.b1"))?;
        let w2 = slot_var(tape, params, &layout, &format!("layer{l}.w2"))?;
        let b2 = slot_var(tape, params, &layout, &format!("layer{l}.b2"))?;
        let hw = match &h {
            NodeInput::Var(v) => tape.matmul(*v, w1),
            NodeInput::Const(x) => tape.const_matmul(Arc::clone(x), w1),
        };
        let z = tape.gin_aggregate(hw, eps, Arc::clone(adj));
        let z = tape.add_row(z, b1);
        let mut hidden = tape.relu(z);
        if let Some(d) = dropout.as_deref_mut() {
            hidden = d.apply(tape, hidden);
        }
        let y = tape.matmul(hidden, w2);
        let mut y = tape.add_row(y, b2);
        if l + 1 < GIN_LAYERS {
            y = tape.relu(y);
            if let Some(d) = dropout.as_deref_mut() {
                y = d.apply(tape, y);
            }
        }
        check_finite(tape, y, l)?;
        h = NodeInput::Var(y);
        out = Some(y);
    }
    Ok(out.expect("at least one layer"))
}

/// Non-differentiating forward pass returning one embedding per node.
pub fn gnn_forward(
    params: &ParamVector,
    cfg: &GinConfig,
    adjacency: &Csr,
    features: &Array2<f64>,
    mode: Mode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Array2<f64>> {
    if params.layout().as_ref() != &ParamLayout::gin(cfg) {
        return Err(TentError::Shape("parameter layout does not match GIN config".into()));
    }
    let mut tape = Tape::new();
    let p = params.to_tape(&mut tape);
    let x = NodeInput::Var(tape.leaf(features.clone()));
    let adj = Arc::new(adjacency.clone());
    let mut dropout = match (mode, rng) {
        (Mode::Train, Some(rng)) => Some(Dropout { rate: cfg.dropout, rng }),
        (Mode::Train, None) => return Err(TentError::Argument("train mode needs a dropout generator".into())),
        (Mode::Eval, _) => None,
    };
    let out = gin_forward_var(&mut tape, p, cfg, &adj, x, dropout.as_mut())?;
    Ok(tape.value(out).clone())
}

/// Row of `emb` at the subgraph's centroid.
pub fn centroid_readout(emb: &Array2<f64>, sg: &Subgraph) -> Result<Vec<f64>> {
    if emb.nrows() != sg.len() {
        return Err(TentError::Shape(format!(
            "{} embedding rows for a {}-node subgraph",
            emb.nrows(),
            sg.len()
        )));
    }
    Ok(emb.row(sg.centroid_index).to_vec())
}
