//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First/second moment buffers and the number of updates applied.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected AdamW update, in place.
///
/// Decay is applied as `x ← x·(1 − lr·wd)` before the Adam delta. A
/// non-finite gradient leaves both `values` and `state` untouched.
pub fn adamw_update(values: &mut [f64], grad: &[f64], state: &mut AdamState, hp: &AdamHyper) -> Result<()> {
    if grad.len() != values.len() || state.m.len() != values.len() {
        return Err(Error::Dimension {
            op: "adamw_update",
            lhs: vec![values.len()],
            rhs: vec![grad.len()],
        });
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric {
            op: "adamw_update",
            index,
            detail: format!("non-finite gradient {}", grad[index]),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let decay = 1.0 - hp.learning_rate * hp.weight_decay;
    for i in 0..values.len() {
        let g = grad[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        values[i] = values[i] * decay - hp.learning_rate * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}
