//! Layer specifications, parameter initialization, and the forward/backward
//! passes. Convolutions are valid-padding stride-1, pooling is 2×2 stride 2,
//! and the heavy lifting runs through one strided SGEMM wrapper.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

pub const LEAKY_SLOPE: f32 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    LeakyRelu,
}

impl Activation {
    fn apply(self, z: f32) -> f32 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    /// Derivative expressed through the post-activation value (all three are
    /// monotone, so the sign of the output determines the branch).
    fn grad_from_output(self, a: f32) -> f32 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if a > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        activation: Activation,
    },
    /// 2×2 max pooling, stride 2, truncating odd edges.
    MaxPool,
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
}

/// Weight/bias pair; empty tensors for parameterless layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    fn empty() -> Self {
        LayerParams {
            weight: Tensor::zeros(&[0]),
            bias: Tensor::zeros(&[0]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Per-parameter gradients, shaped like the network parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .params
                .iter()
                .map(|p| LayerParams {
                    weight: Tensor::zeros(p.weight.shape()),
                    bias: Tensor::zeros(p.bias.shape()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x += y;
            }
            for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f32) {
        for l in &mut self.layers {
            for x in l.weight.data_mut() {
                *x *= s;
            }
            for x in l.bias.data_mut() {
                *x *= s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.all_finite() && l.bias.all_finite())
    }
}

/// Forward-pass activation trace, consumed by `backward`. `activations[0]`
/// is the input batch; the last entry is the output.
pub struct Cache {
    pub(crate) activations: Vec<Tensor>,
    pub(crate) batch: usize,
    pub(crate) digest: u64,
}

impl Cache {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("cache has activations")
    }
}

/// A layered parameter container: specs plus materialized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    /// Batchless output shape of every layer.
    shapes: Vec<Vec<usize>>,
    params: Vec<LayerParams>,
    pub init_seed: u64,
}

fn conv_out(h: usize, k: usize) -> Option<usize> {
    (h >= k).then(|| h - k + 1)
}

impl Network {
    /// Validate that consecutive layer shapes compose and initialize
    /// parameters (He fan-in scaling) from the seed.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec], init_seed: u64) -> Result<Self> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(specs.len());
        let mut cur = input_shape.to_vec();
        let mut params = Vec::with_capacity(specs.len());
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);

        for (li, spec) in specs.iter().enumerate() {
            let mismatch = |expected: &str, found: &Vec<usize>| Error::ShapeMismatch {
                layer: li,
                kind: format!("{spec:?}"),
                expected: expected.into(),
                found: format!("{found:?}"),
            };
            match *spec {
                LayerSpec::Conv {
                    filters, kernel, ..
                } => {
                    if cur.len() != 3 {
                        return Err(mismatch("[channels, height, width]", &cur));
                    }
                    let (c, h, w) = (cur[0], cur[1], cur[2]);
                    let (oh, ow) = match (conv_out(h, kernel), conv_out(w, kernel)) {
                        (Some(a), Some(b)) => (a, b),
                        _ => return Err(mismatch("input at least kernel-sized", &cur)),
                    };
                    let fan_in = c * kernel * kernel;
                    params.push(LayerParams {
                        weight: he_init(&mut rng, &[filters, c, kernel, kernel], fan_in),
                        bias: Tensor::zeros(&[filters]),
                    });
                    cur = vec![filters, oh, ow];
                }
                LayerSpec::MaxPool => {
                    if cur.len() != 3 || cur[1] < 2 || cur[2] < 2 {
                        return Err(mismatch("[channels, ≥2, ≥2]", &cur));
                    }
                    params.push(LayerParams::empty());
                    cur = vec![cur[0], cur[1] / 2, cur[2] / 2];
                }
                LayerSpec::Flatten => {
                    params.push(LayerParams::empty());
                    cur = vec![cur.iter().product()];
                }
                LayerSpec::Dense { units, .. } => {
                    if cur.len() != 1 {
                        return Err(mismatch("[features] (flatten first)", &cur));
                    }
                    let fan_in = cur[0];
                    params.push(LayerParams {
                        weight: he_init(&mut rng, &[units, fan_in], fan_in),
                        bias: Tensor::zeros(&[units]),
                    });
                    cur = vec![units];
                }
            }
            shapes.push(cur.clone());
        }

        Ok(Network {
            input_shape: input_shape.to_vec(),
            specs: specs.to_vec(),
            shapes,
            params,
            init_seed,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(LayerParams::param_count).sum()
    }

    /// Digest of the architecture (not the weights); stored in weight files
    /// to catch loads into a mismatched spec.
    pub fn spec_digest(&self) -> u64 {
        let desc = serde_json::to_string(&(&self.input_shape, &self.specs))
            .expect("specs serialize");
        fnv1a(desc.as_bytes())
    }

    fn batch_of(&self, input: &Tensor) -> Result<usize> {
        let s = input.shape();
        if s.len() != self.input_shape.len() + 1 || s[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch {
                layer: 0,
                kind: "input".into(),
                expected: format!("[batch, {:?}]", self.input_shape),
                found: format!("{s:?}"),
            });
        }
        Ok(s[0])
    }

    /// Forward pass over a batch (`[batch, ...input_shape]`), returning the
    /// output and the activation cache used by `backward`.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Cache)> {
        let n = self.batch_of(input)?;
        let mut activations = Vec::with_capacity(self.specs.len() + 1);
        activations.push(input.clone());
        let mut cur = input.clone();
        for (li, spec) in self.specs.iter().enumerate() {
            cur = self.layer_forward(li, spec, &cur, n);
            activations.push(cur.clone());
        }
        Ok((
            cur,
            Cache {
                activations,
                batch: n,
                digest: self.spec_digest(),
            },
        ))
    }

    /// Forward without keeping the trace (inference-only path).
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let n = self.batch_of(input)?;
        let mut cur = input.clone();
        for (li, spec) in self.specs.iter().enumerate() {
            cur = self.layer_forward(li, spec, &cur, n);
        }
        Ok(cur)
    }

    fn layer_forward(&self, li: usize, spec: &LayerSpec, input: &Tensor, n: usize) -> Tensor {
        let p = &self.params[li];
        let in_shape = if li == 0 {
            &self.input_shape
        } else {
            &self.shapes[li - 1]
        };
        match *spec {
            LayerSpec::Conv {
                filters,
                kernel,
                activation,
            } => conv_forward(input, in_shape, &p.weight, &p.bias, filters, kernel, activation, n),
            LayerSpec::MaxPool => maxpool_forward(input, in_shape, n),
            LayerSpec::Flatten => {
                let flat: usize = in_shape.iter().product();
                input
                    .reshaped(&[n, flat])
                    .expect("flatten preserves element count")
            }
            LayerSpec::Dense { units, activation } => {
                dense_forward(input, &p.weight, &p.bias, units, activation, n)
            }
        }
    }

    /// Reverse-mode gradients for every parameter and the input, given the
    /// gradient of a scalar loss with respect to the output.
    pub fn backward(&self, cache: &Cache, grad_out: &Tensor) -> Result<(Gradients, Tensor)> {
        if cache.digest != self.spec_digest() || cache.activations.len() != self.specs.len() + 1 {
            return Err(Error::ShapeMismatch {
                layer: 0,
                kind: "cache".into(),
                expected: "cache from a matching forward pass".into(),
                found: "stale or foreign cache".into(),
            });
        }
        let n = cache.batch;
        let out = cache.output();
        if grad_out.shape() != out.shape() {
            return Err(Error::ShapeMismatch {
                layer: self.specs.len().saturating_sub(1),
                kind: "grad_out".into(),
                expected: format!("{:?}", out.shape()),
                found: format!("{:?}", grad_out.shape()),
            });
        }

        let mut grads = Gradients::zeros_like(self);
        let mut grad = grad_out.clone();
        for (li, spec) in self.specs.iter().enumerate().rev() {
            let input = &cache.activations[li];
            let output = &cache.activations[li + 1];
            let in_shape = if li == 0 {
                &self.input_shape
            } else {
                &self.shapes[li - 1]
            };
            let p = &self.params[li];
            let g = &mut grads.layers[li];
            grad = match *spec {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    activation,
                } => conv_backward(
                    input, output, &grad, in_shape, &p.weight, filters, kernel, activation, n, g,
                ),
                LayerSpec::MaxPool => maxpool_backward(input, &grad, in_shape, n),
                LayerSpec::Flatten => {
                    let mut shape = vec![n];
                    shape.extend_from_slice(in_shape);
                    grad.reshaped(&shape).expect("flatten grad reshapes")
                }
                LayerSpec::Dense { activation, .. } => {
                    dense_backward(input, output, &grad, &p.weight, activation, n, g)
                }
            };
        }
        Ok((grads, grad))
    }
}

fn he_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (z * std) as f32
        })
        .collect();
    Tensor::from_vec_unchecked(shape.to_vec(), data)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Row-major strided SGEMM: C ← α·A·B + β·C.
#[allow(clippy::too_many_arguments)]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
    rsc: isize,
    csc: isize,
) {
    unsafe {
        // Buffers are sized by the callers to cover every strided index.
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

fn im2col(
    input: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f32],
) {
    // cols[(ci*K*K + ky*K + kx) * (OH*OW) + oy*OW + ox] = input[ci, oy+ky, ox+kx]
    let ohw = oh * ow;
    for ci in 0..c {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ci * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..oh {
                    let src_base = ci * h * w + (oy + ky) * w + kx;
                    let src = &input[src_base..src_base + ow];
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &Tensor,
    in_shape: &[usize],
    weight: &Tensor,
    bias: &Tensor,
    filters: usize,
    kernel: usize,
    activation: Activation,
    n: usize,
) -> Tensor {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (h - kernel + 1, w - kernel + 1);
    let ohw = oh * ow;
    let ckk = c * kernel * kernel;
    let mut out = vec![0.0f32; n * filters * ohw];
    let mut cols = vec![0.0f32; ckk * ohw];
    let in_stride = c * h * w;
    for s in 0..n {
        let sample = &input.data()[s * in_stride..(s + 1) * in_stride];
        im2col(sample, c, h, w, kernel, oh, ow, &mut cols);
        let dst = &mut out[s * filters * ohw..(s + 1) * filters * ohw];
        sgemm(
            filters,
            ckk,
            ohw,
            1.0,
            weight.data(),
            ckk as isize,
            1,
            &cols,
            ohw as isize,
            1,
            0.0,
            dst,
            ohw as isize,
            1,
        );
        for f in 0..filters {
            let b = bias.data()[f];
            for v in &mut dst[f * ohw..(f + 1) * ohw] {
                *v = activation.apply(*v + b);
            }
        }
    }
    Tensor::from_vec_unchecked(vec![n, filters, oh, ow], out)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &Tensor,
    output: &Tensor,
    grad_out: &Tensor,
    in_shape: &[usize],
    weight: &Tensor,
    filters: usize,
    kernel: usize,
    activation: Activation,
    n: usize,
    grads: &mut LayerParams,
) -> Tensor {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (h - kernel + 1, w - kernel + 1);
    let ohw = oh * ow;
    let ckk = c * kernel * kernel;
    let in_stride = c * h * w;
    let out_stride = filters * ohw;

    let mut grad_in = vec![0.0f32; n * in_stride];
    let mut cols = vec![0.0f32; ckk * ohw];
    let mut dcols = vec![0.0f32; ckk * ohw];
    let mut dz = vec![0.0f32; out_stride];

    for s in 0..n {
        let out_s = &output.data()[s * out_stride..(s + 1) * out_stride];
        let gout_s = &grad_out.data()[s * out_stride..(s + 1) * out_stride];
        for i in 0..out_stride {
            dz[i] = gout_s[i] * activation.grad_from_output(out_s[i]);
        }
        // bias grads
        for f in 0..filters {
            let sum: f32 = dz[f * ohw..(f + 1) * ohw].iter().sum();
            grads.bias.data_mut()[f] += sum;
        }
        // weight grads: dW[F,CKK] += dz[F,OHW] · colsᵀ[OHW,CKK]
        let sample = &input.data()[s * in_stride..(s + 1) * in_stride];
        im2col(sample, c, h, w, kernel, oh, ow, &mut cols);
        sgemm(
            filters,
            ohw,
            ckk,
            1.0,
            &dz,
            ohw as isize,
            1,
            &cols,
            1,
            ohw as isize,
            1.0,
            grads.weight.data_mut(),
            ckk as isize,
            1,
        );
        // input grads: dcols[CKK,OHW] = Wᵀ[CKK,F] · dz[F,OHW], then col2im
        sgemm(
            ckk,
            filters,
            ohw,
            1.0,
            weight.data(),
            1,
            ckk as isize,
            &dz,
            ohw as isize,
            1,
            0.0,
            &mut dcols,
            ohw as isize,
            1,
        );
        let gin = &mut grad_in[s * in_stride..(s + 1) * in_stride];
        for ci in 0..c {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let row = (ci * kernel + ky) * kernel + kx;
                    let src = &dcols[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let dst_base = ci * h * w + (oy + ky) * w + kx;
                        let dst = &mut gin[dst_base..dst_base + ow];
                        for (d, s_) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                            *d += s_;
                        }
                    }
                }
            }
        }
    }
    let mut shape = vec![n];
    shape.extend_from_slice(in_shape);
    Tensor::from_vec_unchecked(shape, grad_in)
}

fn maxpool_forward(input: &Tensor, in_shape: &[usize], n: usize) -> Tensor {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; n * c * oh * ow];
    let in_stride = c * h * w;
    for s in 0..n {
        let sample = &input.data()[s * in_stride..(s + 1) * in_stride];
        let dst = &mut out[s * c * oh * ow..(s + 1) * c * oh * ow];
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = ci * h * w + 2 * oy * w + 2 * ox;
                    let m = sample[base]
                        .max(sample[base + 1])
                        .max(sample[base + w])
                        .max(sample[base + w + 1]);
                    dst[ci * oh * ow + oy * ow + ox] = m;
                }
            }
        }
    }
    Tensor::from_vec_unchecked(vec![n, c, oh, ow], out)
}

fn maxpool_backward(input: &Tensor, grad_out: &Tensor, in_shape: &[usize], n: usize) -> Tensor {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    let in_stride = c * h * w;
    let out_stride = c * oh * ow;
    let mut grad_in = vec![0.0f32; n * in_stride];
    for s in 0..n {
        let sample = &input.data()[s * in_stride..(s + 1) * in_stride];
        let gout = &grad_out.data()[s * out_stride..(s + 1) * out_stride];
        let gin = &mut grad_in[s * in_stride..(s + 1) * in_stride];
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = ci * h * w + 2 * oy * w + 2 * ox;
                    // first maximum wins on ties, matching forward scan order
                    let idx = [base, base + 1, base + w, base + w + 1];
                    let mut best = idx[0];
                    for &i in &idx[1..] {
                        if sample[i] > sample[best] {
                            best = i;
                        }
                    }
                    gin[best] += gout[ci * oh * ow + oy * ow + ox];
                }
            }
        }
    }
    let mut shape = vec![n];
    shape.extend_from_slice(in_shape);
    Tensor::from_vec_unchecked(shape, grad_in)
}

fn dense_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    units: usize,
    activation: Activation,
    n: usize,
) -> Tensor {
    let d_in = weight.shape()[1];
    let mut out = vec![0.0f32; n * units];
    // out[N,U] = x[N,D] · Wᵀ[D,U]
    sgemm(
        n,
        d_in,
        units,
        1.0,
        input.data(),
        d_in as isize,
        1,
        weight.data(),
        1,
        d_in as isize,
        0.0,
        &mut out,
        units as isize,
        1,
    );
    for s in 0..n {
        let row = &mut out[s * units..(s + 1) * units];
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v = activation.apply(*v + b);
        }
    }
    Tensor::from_vec_unchecked(vec![n, units], out)
}

fn dense_backward(
    input: &Tensor,
    output: &Tensor,
    grad_out: &Tensor,
    weight: &Tensor,
    activation: Activation,
    n: usize,
    grads: &mut LayerParams,
) -> Tensor {
    let units = weight.shape()[0];
    let d_in = weight.shape()[1];
    let mut dz = vec![0.0f32; n * units];
    for i in 0..n * units {
        dz[i] = grad_out.data()[i] * activation.grad_from_output(output.data()[i]);
    }
    for s in 0..n {
        for (b, g) in grads.bias.data_mut().iter_mut().zip(&dz[s * units..]) {
            *b += g;
        }
    }
    // dW[U,D] += dzᵀ[U,N] · x[N,D]
    sgemm(
        units,
        n,
        d_in,
        1.0,
        &dz,
        1,
        units as isize,
        input.data(),
        d_in as isize,
        1,
        1.0,
        grads.weight.data_mut(),
        d_in as isize,
        1,
    );
    // dx[N,D] = dz[N,U] · W[U,D]
    let mut grad_in = vec![0.0f32; n * d_in];
    sgemm(
        n,
        units,
        d_in,
        1.0,
        &dz,
        units as isize,
        1,
        weight.data(),
        d_in as isize,
        1,
        0.0,
        &mut grad_in,
        d_in as isize,
        1,
    );
    Tensor::from_vec_unchecked(vec![n, d_in], grad_in)
}
