//! Naive f64 reference forward pass, independent of the SGEMM/im2col path.
//!
//! The gradient checker differentiates this function numerically: probe
//! deltas are applied in f64 so the finite-difference step is exact, and the
//! returned region signature (rectifier on/off bits, pooling argmaxes) lets
//! the checker reject probes that straddle a kink. It doubles as a
//! forward-correctness oracle for the f32 path.

use crate::nn::net::{Activation, LayerSpec, Network, LEAKY_SLOPE};

/// A single-parameter perturbation applied during the reference pass.
#[derive(Debug, Clone, Copy)]
pub struct ParamDelta {
    pub layer: usize,
    /// true → weight tensor, false → bias tensor.
    pub weight: bool,
    pub index: usize,
    pub delta: f64,
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Linear => z,
        Activation::Relu => z.max(0.0),
        Activation::LeakyRelu => {
            if z > 0.0 {
                z
            } else {
                f64::from(LEAKY_SLOPE) * z
            }
        }
    }
}

struct Sig(u64);

impl Sig {
    fn feed(&mut self, byte: u8) {
        self.0 ^= u64::from(byte);
        self.0 = self.0.wrapping_mul(0x100000001b3);
    }
}

/// Run the f64 reference forward over one sample (no batch dimension) and
/// return (outputs, region signature).
pub fn reference_forward(net: &Network, input: &[f64], delta: Option<ParamDelta>) -> (Vec<f64>, u64) {
    let mut cur = input.to_vec();
    let mut shape = net.input_shape().to_vec();
    let mut sig = Sig(0xcbf29ce484222325);

    for (li, spec) in net.specs().iter().enumerate() {
        let p = &net.params()[li];
        let mut weight: Vec<f64> = p.weight.data().iter().map(|&v| f64::from(v)).collect();
        let mut bias: Vec<f64> = p.bias.data().iter().map(|&v| f64::from(v)).collect();
        if let Some(d) = delta {
            if d.layer == li {
                if d.weight {
                    weight[d.index] += d.delta;
                } else {
                    bias[d.index] += d.delta;
                }
            }
        }
        match *spec {
            LayerSpec::Conv {
                filters,
                kernel,
                activation,
            } => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h - kernel + 1, w - kernel + 1);
                let mut out = vec![0.0f64; filters * oh * ow];
                for f in 0..filters {
                    out[f * oh * ow..(f + 1) * oh * ow].fill(bias[f]);
                    for ci in 0..c {
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let wv = weight[((f * c + ci) * kernel + ky) * kernel + kx];
                                for oy in 0..oh {
                                    let src_base = ci * h * w + (oy + ky) * w + kx;
                                    let src = &cur[src_base..src_base + ow];
                                    let dst = &mut out[f * oh * ow + oy * ow..][..ow];
                                    for i in 0..ow {
                                        dst[i] += wv * src[i];
                                    }
                                }
                            }
                        }
                    }
                }
                for v in &mut out {
                    *v = act(activation, *v);
                }
                if activation != Activation::Linear {
                    for v in &out {
                        sig.feed(u8::from(*v > 0.0));
                    }
                }
                cur = out;
                shape = vec![filters, oh, ow];
            }
            LayerSpec::MaxPool => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                let mut out = vec![0.0f64; c * oh * ow];
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let base = ci * h * w + 2 * oy * w + 2 * ox;
                            let idx = [base, base + 1, base + w, base + w + 1];
                            let mut best = 0usize;
                            for j in 1..4 {
                                if cur[idx[j]] > cur[idx[best]] {
                                    best = j;
                                }
                            }
                            sig.feed(best as u8);
                            out[ci * oh * ow + oy * ow + ox] = cur[idx[best]];
                        }
                    }
                }
                cur = out;
                shape = vec![c, oh, ow];
            }
            LayerSpec::Flatten => {
                shape = vec![shape.iter().product()];
            }
            LayerSpec::Dense { units, activation } => {
                let d_in = shape[0];
                let mut out = vec![0.0f64; units];
                for (u, o) in out.iter_mut().enumerate() {
                    let row = &weight[u * d_in..(u + 1) * d_in];
                    let mut acc = bias[u];
                    for i in 0..d_in {
                        acc += row[i] * cur[i];
                    }
                    *o = act(activation, acc);
                }
                if activation != Activation::Linear {
                    for v in &out {
                        sig.feed(u8::from(*v > 0.0));
                    }
                }
                cur = out;
                shape = vec![units];
            }
        }
    }
    (cur, sig.0)
}
