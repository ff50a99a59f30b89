//! Adam optimizer over lists of parameter tensors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Per-parameter first/second moment accumulators and a step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Rebuild from serialized moments (checkpoint resume).
    pub fn from_parts(m: Vec<Tensor>, v: Vec<Tensor>, step: u64) -> Self {
        AdamState { m, v, step }
    }
}

/// One Adam update, in place. Bias-corrected, deterministic.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dim(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Dim(format!(
                "adam: param shape {:?} vs grad shape {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - BETA1.powf(t);
    let bc2 = 1.0 - BETA2.powf(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for j in 0..pd.len() {
            let gj = g.data()[j];
            md[j] = BETA1 * md[j] + (1.0 - BETA1) * gj;
            vd[j] = BETA2 * vd[j] + (1.0 - BETA2) * gj * gj;
            let mhat = md[j] / bc1;
            let vhat = vd[j] / bc2;
            pd[j] -= lr * mhat / (vhat.sqrt() + EPS);
        }
        if !p.is_finite() {
            return Err(Error::Divergence("non-finite parameter after adam step".into()));
        }
    }
    Ok(())
}
