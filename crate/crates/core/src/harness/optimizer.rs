use serde::{Deserialize, Serialize};

use super::model::ModelParams;
use crate::error::{Result, TentError};

/// Adam moments for every parameter group, in [`ModelParams::groups`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(model: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = model.groups().iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        OptimizerState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam step on a single buffer. Weight decay is coupled: `λ·p` is added to
/// the gradient before the moment updates. `step` is the 1-based index of
/// this update.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    weight_decay: f64,
    (beta1, beta2, eps): (f64, f64, f64),
) {
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i] + weight_decay * params[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam update of every group. `grads` follows [`ModelParams::groups`]
/// order.
pub fn optimizer_step(model: &mut ModelParams, grads: &[Vec<f64>], st: &mut OptimizerState, lr: f64, weight_decay: f64) -> Result<()> {
    let groups = model.groups_mut();
    if grads.len() != groups.len() {
        return Err(TentError::Shape(format!("{} gradient groups for {} parameter groups", grads.len(), groups.len())));
    }
    for ((name, p), g) in groups.iter().zip(grads) {
        if g.len() != p.len() {
            return Err(TentError::Shape(format!("gradient for {name} has length {} (expected {})", g.len(), p.len())));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(TentError::Numeric(format!("non-finite gradient in group {name}")));
        }
    }
    st.step += 1;
    let hyper = (st.beta1, st.beta2, st.eps);
    for (i, ((_, p), g)) in groups.into_iter().zip(grads).enumerate() {
        adam_update(p.values_mut(), g, &mut st.first[i], &mut st.second[i], st.step, lr, weight_decay, hyper);
    }
    Ok(())
}
