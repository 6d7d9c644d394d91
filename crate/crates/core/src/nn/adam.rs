//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::net::{Gradients, Network};
use crate::nn::tensor::Tensor;

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub step: u64,
    m: Vec<(Tensor, Tensor)>,
    v: Vec<(Tensor, Tensor)>,
}

impl OptState {
    pub fn new(net: &Network) -> Self {
        let zeros = |sel: fn(&crate::nn::net::LayerParams) -> &Tensor| {
            net.params()
                .iter()
                .map(|p| {
                    (
                        Tensor::zeros(sel(p).shape()),
                        Tensor::zeros(p.bias.shape()),
                    )
                })
                .collect::<Vec<_>>()
        };
        OptState {
            step: 0,
            m: zeros(|p| &p.weight),
            v: zeros(|p| &p.weight),
        }
    }
}

/// One Adam update in place. Rejects non-finite gradients — the caller treats
/// that as training divergence.
pub fn optimizer_step(
    net: &mut Network,
    grads: &Gradients,
    state: &mut OptState,
    lr: f32,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - (ADAM_BETA1 as f64).powf(t);
    let bc2 = 1.0 - (ADAM_BETA2 as f64).powf(t);

    for (li, p) in net.params_mut().iter_mut().enumerate() {
        let g = &grads.layers[li];
        let (mw, mb) = &mut state.m[li];
        let (vw, vb) = &mut state.v[li];
        adam_update(p.weight.data_mut(), g.weight.data(), mw.data_mut(), vw.data_mut(), lr, bc1, bc2);
        adam_update(p.bias.data_mut(), g.bias.data(), mb.data_mut(), vb.data_mut(), lr, bc1, bc2);
    }
    Ok(())
}

fn adam_update(
    theta: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    lr: f32,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] as f64 / bc1;
        let v_hat = v[i] as f64 / bc2;
        theta[i] -= (lr as f64 * m_hat / (v_hat.sqrt() + ADAM_EPS as f64)) as f32;
    }
}
