//! Central finite-difference verification of the analytic gradients.
//!
//! The probe loss is L = Σ gᵢ·yᵢ with fixed random weights gᵢ. The numeric
//! side differentiates the independent f64 reference forward (exact steps,
//! no f32 roundoff), and probes whose ±h interval crosses a rectifier or
//! pooling kink are discarded and resampled — the loss is not differentiable
//! there. A small absolute floor absorbs f32 noise in the analytic side for
//! near-zero gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::nn::net::Network;
use crate::nn::reference::{reference_forward, ParamDelta};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckSettings {
    /// Central-difference step.
    pub h: f64,
    /// Relative-error tolerance.
    pub tolerance: f64,
    /// Absolute discrepancy under which a probe passes regardless (f32
    /// accumulation noise on near-zero gradients).
    pub absolute_floor: f64,
    /// Parameters probed per weight/bias tensor.
    pub samples_per_tensor: usize,
    /// Input entries probed (checks the returned input gradient).
    pub input_samples: usize,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings {
            h: 1e-3,
            tolerance: 1e-3,
            absolute_floor: 1e-4,
            samples_per_tensor: 4,
            input_samples: 4,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    /// Probes discarded because the ±h interval crossed a rectifier or
    /// pooling kink.
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.failures += other.failures;
        self.skipped_kinks += other.skipped_kinks;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
    }
}

fn probe_loss(net: &Network, input: &[f64], loss_w: &[f64], delta: Option<ParamDelta>) -> (f64, u64) {
    let (out, sig) = reference_forward(net, input, delta);
    let loss = out.iter().zip(loss_w).map(|(&y, &g)| y * g).sum();
    (loss, sig)
}

/// Check sampled parameter and input gradients of `net` at a single-sample
/// input (shape `[1, ...]`).
pub fn check_gradients(
    net: &Network,
    input: &Tensor,
    rng: &mut ChaCha8Rng,
    settings: &GradCheckSettings,
) -> Result<GradCheckReport> {
    let out_len: usize = net.output_shape().iter().product();
    let loss_w: Vec<f64> = (0..out_len).map(|_| rng.sample(StandardNormal)).collect();

    let (out, cache) = net.forward(input)?;
    let grad_out = Tensor::from_vec_unchecked(
        out.shape().to_vec(),
        loss_w.iter().map(|&g| g as f32).collect(),
    );
    let (grads, input_grad) = net.backward(&cache, &grad_out)?;
    let input64: Vec<f64> = input.data().iter().map(|&v| f64::from(v)).collect();

    let mut report = GradCheckReport::default();
    let judge = |analytic: f64, numeric: f64, report: &mut GradCheckReport| {
        let err = (analytic - numeric).abs();
        let denom = analytic.abs().max(numeric.abs());
        let rel = if denom > 0.0 { err / denom } else { 0.0 };
        report.checked += 1;
        if err > settings.absolute_floor && rel > settings.tolerance {
            report.failures += 1;
        }
        if denom > settings.absolute_floor {
            report.max_rel_err = report.max_rel_err.max(rel);
        }
    };

    const KINK_RETRIES: usize = 8;
    for li in 0..net.params().len() {
        for weight in [true, false] {
            let len = {
                let p = &net.params()[li];
                if weight { p.weight.len() } else { p.bias.len() }
            };
            if len == 0 {
                continue;
            }
            let budget = settings.samples_per_tensor.min(len);
            let mut done = 0;
            let mut tries = 0;
            while done < budget && tries < budget * KINK_RETRIES {
                tries += 1;
                let index = rng.gen_range(0..len);
                let analytic = {
                    let g = &grads.layers[li];
                    f64::from(if weight {
                        g.weight.data()[index]
                    } else {
                        g.bias.data()[index]
                    })
                };
                let delta = |d: f64| {
                    Some(ParamDelta {
                        layer: li,
                        weight,
                        index,
                        delta: d,
                    })
                };
                let (l_plus, sig_plus) = probe_loss(net, &input64, &loss_w, delta(settings.h));
                let (l_minus, sig_minus) = probe_loss(net, &input64, &loss_w, delta(-settings.h));
                if sig_plus != sig_minus {
                    report.skipped_kinks += 1;
                    continue;
                }
                judge(analytic, (l_plus - l_minus) / (2.0 * settings.h), &mut report);
                done += 1;
            }
        }
    }

    let mut probe_input = input64.clone();
    let budget = settings.input_samples.min(probe_input.len());
    let mut done = 0;
    let mut tries = 0;
    while done < budget && tries < budget * KINK_RETRIES {
        tries += 1;
        let idx = rng.gen_range(0..probe_input.len());
        let analytic = f64::from(input_grad.data()[idx]);
        let original = probe_input[idx];
        probe_input[idx] = original + settings.h;
        let (l_plus, sig_plus) = probe_loss(net, &probe_input, &loss_w, None);
        probe_input[idx] = original - settings.h;
        let (l_minus, sig_minus) = probe_loss(net, &probe_input, &loss_w, None);
        probe_input[idx] = original;
        if sig_plus != sig_minus {
            report.skipped_kinks += 1;
            continue;
        }
        judge(analytic, (l_plus - l_minus) / (2.0 * settings.h), &mut report);
        done += 1;
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::net::{Activation, LayerSpec};
    use crate::rng::{derive_rng, Stream};

    fn random_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = derive_rng(seed, Stream::Other(70));
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Tensor::from_vec_unchecked(shape.to_vec(), data)
    }

    fn run(net: &Network, input_shape: &[usize], seed: u64) -> GradCheckReport {
        let mut shape = vec![1];
        shape.extend_from_slice(input_shape);
        let input = random_input(&shape, seed);
        let mut rng = derive_rng(seed, Stream::Other(71));
        check_gradients(net, &input, &mut rng, &GradCheckSettings::default()).unwrap()
    }

    #[test]
    fn dense_layer_passes() {
        let net = Network::new(
            &[7],
            &[LayerSpec::Dense {
                units: 5,
                activation: Activation::LeakyRelu,
            }],
            3,
        )
        .unwrap();
        for seed in 0..5 {
            let r = run(&net, &[7], seed);
            assert!(r.pass(), "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn conv_layer_passes() {
        let net = Network::new(
            &[2, 7, 7],
            &[
                LayerSpec::Conv {
                    filters: 3,
                    kernel: 3,
                    activation: Activation::LeakyRelu,
                },
                LayerSpec::Flatten,
            ],
            4,
        )
        .unwrap();
        for seed in 0..5 {
            let r = run(&net, &[2, 7, 7], seed);
            assert!(r.pass(), "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn maxpool_input_grads_pass() {
        let net = Network::new(
            &[2, 8, 8],
            &[
                LayerSpec::MaxPool,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 3,
                    activation: Activation::Linear,
                },
            ],
            5,
        )
        .unwrap();
        for seed in 0..5 {
            let r = run(&net, &[2, 8, 8], seed);
            assert!(r.pass(), "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn composed_stack_passes() {
        let net = Network::new(
            &[3, 12, 12],
            &[
                LayerSpec::Conv {
                    filters: 4,
                    kernel: 3,
                    activation: Activation::LeakyRelu,
                },
                LayerSpec::MaxPool,
                LayerSpec::Conv {
                    filters: 6,
                    kernel: 3,
                    activation: Activation::Relu,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 10,
                    activation: Activation::LeakyRelu,
                },
                LayerSpec::Dense {
                    units: 4,
                    activation: Activation::Linear,
                },
            ],
            6,
        )
        .unwrap();
        for seed in 0..5 {
            let r = run(&net, &[3, 12, 12], seed);
            assert!(r.pass(), "seed {seed}: {r:?}");
        }
    }
}
