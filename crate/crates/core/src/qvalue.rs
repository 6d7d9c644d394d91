//! The action-value function over abstract images (or Cartesian features for
//! the pose baseline): double-Q TD targets, Huber batch updates with the
//! gradient flowing only through the chosen action, Monte-Carlo returns for
//! demonstration pretraining, and the experience replay ring.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::net::{Activation, LayerSpec};
use crate::nn::{optimizer_step, Gradients, Network, OptState, Tensor};
use crate::physics::{WorldState, ACTION_COUNT};
use crate::render::{encode_caba_features, render_abstract, AbstractImage, ViewConfig, PALETTE_RGB};
use crate::physics::PhysicsConfig;

/// Huber transition point; keeps the −50 boundary reward from dominating
/// gradients.
pub const HUBER_DELTA: f64 = 1.0;

/// Fixed chunk count for data-parallel batch gradients. Constant so the
/// reduction order (and thus every f32 sum) is identical on any machine.
const GRAD_CHUNKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum InputKind {
    Image,
    Cartesian { objects: usize },
}

/// Compact stored state: palette indices for images, raw floats for feature
/// vectors. Expanded to a network tensor on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Encoding {
    Image(Vec<u8>),
    Features(Vec<f32>),
}

/// Network input channels are inverted (1 − rgb/255) so the white background
/// maps to zero and pooling layers see objects, not paper.
fn palette_channels() -> [[f32; 3]; 6] {
    let mut out = [[0.0f32; 3]; 6];
    for (i, rgb) in PALETTE_RGB.iter().enumerate() {
        for c in 0..3 {
            out[i][c] = 1.0 - f32::from(rgb[c]) / 255.0;
        }
    }
    out
}

impl Encoding {
    pub fn from_image(img: &AbstractImage) -> Self {
        Encoding::Image(img.indices().to_vec())
    }

    pub fn len(&self) -> usize {
        match self {
            Encoding::Image(v) => v.len() * 3,
            Encoding::Features(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_into(&self, dst: &mut [f32]) {
        match self {
            Encoding::Image(idx) => {
                let lut = palette_channels();
                let hw = idx.len();
                for (i, &pi) in idx.iter().enumerate() {
                    let ch = lut[pi as usize];
                    dst[i] = ch[0];
                    dst[hw + i] = ch[1];
                    dst[2 * hw + i] = ch[2];
                }
            }
            Encoding::Features(v) => dst.copy_from_slice(v),
        }
    }
}

/// Stack encodings into a `[batch, ...]` network input.
pub fn stack_encodings(items: &[&Encoding], input_shape: &[usize]) -> Result<Tensor> {
    let stride: usize = input_shape.iter().product();
    let mut data = vec![0.0f32; items.len() * stride];
    for (i, enc) in items.iter().enumerate() {
        if enc.len() != stride {
            return Err(Error::ShapeMismatch {
                layer: 0,
                kind: "encoding".into(),
                expected: format!("{stride} values"),
                found: format!("{}", enc.len()),
            });
        }
        enc.write_into(&mut data[i * stride..(i + 1) * stride]);
    }
    let mut shape = vec![items.len()];
    shape.extend_from_slice(input_shape);
    Ok(Tensor::from_vec_unchecked(shape, data))
}

/// Renders or projects a world state into the encoding a value function
/// expects.
#[derive(Debug, Clone)]
pub struct StateEncoder {
    pub kind: InputKind,
    pub view: ViewConfig,
    pub phys: PhysicsConfig,
}

impl StateEncoder {
    pub fn encode(&self, w: &WorldState) -> Result<Encoding> {
        match self.kind {
            InputKind::Image => Ok(Encoding::from_image(&render_abstract(
                w, &self.view, &self.phys,
            ))),
            InputKind::Cartesian { objects } => {
                Ok(Encoding::Features(encode_caba_features(w, objects)?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Demo,
    Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Encoding,
    pub action: usize,
    pub reward: f32,
    pub next_state: Encoding,
    pub terminal: bool,
    pub source: Source,
}

/// Online/target network pair with the discount.
#[derive(Debug, Clone)]
pub struct QFunction {
    pub online: Network,
    pub target: Network,
    pub input_kind: InputKind,
    pub gamma: f64,
}

impl QFunction {
    pub fn new(online: Network, input_kind: InputKind, gamma: f64) -> Result<Self> {
        if online.output_shape() != [ACTION_COUNT] {
            return Err(Error::ShapeMismatch {
                layer: online.specs().len().saturating_sub(1),
                kind: "output".into(),
                expected: format!("[{ACTION_COUNT}]"),
                found: format!("{:?}", online.output_shape()),
            });
        }
        let expected_input: Vec<usize> = match input_kind {
            InputKind::Image => vec![3, 60, 60],
            InputKind::Cartesian { objects } => vec![6 + 3 * objects],
        };
        if online.input_shape() != expected_input.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                kind: "input".into(),
                expected: format!("{expected_input:?}"),
                found: format!("{:?}", online.input_shape()),
            });
        }
        let target = online.clone();
        Ok(QFunction {
            online,
            target,
            input_kind,
            gamma,
        })
    }

    /// Copy online parameters into the target network, bit-exact.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// One action value per action index, from the online network.
    pub fn q_values(&self, s: &Encoding) -> Result<[f32; ACTION_COUNT]> {
        let input = stack_encodings(&[s], self.online.input_shape())?;
        let out = self.online.infer(&input)?;
        let mut q = [0.0f32; ACTION_COUNT];
        q.copy_from_slice(out.data());
        Ok(q)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Double-Q targets for a batch: y = r for terminals, otherwise
/// r + γ · target(s′)[argmax_a online(s′)[a]].
pub fn td_targets(qf: &QFunction, batch: &[&Transition]) -> Result<Vec<f64>> {
    let mut targets: Vec<f64> = batch.iter().map(|t| f64::from(t.reward)).collect();
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].terminal).collect();
    if live.is_empty() {
        return Ok(targets);
    }
    let next: Vec<&Encoding> = live.iter().map(|&i| &batch[i].next_state).collect();
    let input = stack_encodings(&next, qf.online.input_shape())?;
    let online_q = qf.online.infer(&input)?;
    let target_q = qf.target.infer(&input)?;
    for (row, &i) in live.iter().enumerate() {
        let o = &online_q.data()[row * ACTION_COUNT..(row + 1) * ACTION_COUNT];
        let t = &target_q.data()[row * ACTION_COUNT..(row + 1) * ACTION_COUNT];
        let a = argmax(o);
        targets[i] += qf.gamma * f64::from(t[a]);
    }
    Ok(targets)
}

/// Single-transition TD target.
pub fn td_target(qf: &QFunction, t: &Transition) -> Result<f64> {
    Ok(td_targets(qf, &[t])?[0])
}

/// Discounted returns G_t computed backward over a demo trajectory's rewards.
pub fn mc_targets(rewards: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::EmptyInput("mc_targets on empty trajectory".into()));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for i in (0..rewards.len()).rev() {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    Ok(out)
}

fn huber_grad(delta: f64) -> f64 {
    delta.clamp(-HUBER_DELTA, HUBER_DELTA)
}

/// Shared regression core: one Huber step of q̂(s, a) toward y over the batch,
/// gradient flowing only through the chosen-action outputs. Returns the
/// pre-step mean |δ|.
pub fn regress_batch(
    qf: &mut QFunction,
    states: &[&Encoding],
    actions: &[usize],
    targets: &[f64],
    opt: &mut OptState,
    lr: f32,
) -> Result<f64> {
    let n = states.len();
    if n == 0 {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    debug_assert_eq!(actions.len(), n);
    debug_assert_eq!(targets.len(), n);

    // fixed chunking: identical split and reduction order on any machine
    let chunk = n.div_ceil(GRAD_CHUNKS);
    let jobs: Vec<(usize, usize)> = (0..n)
        .step_by(chunk)
        .map(|s| (s, (s + chunk).min(n)))
        .collect();

    let online = &qf.online;
    let input_shape = online.input_shape().to_vec();
    let results: Vec<Result<(Gradients, f64, bool)>> = jobs
        .par_iter()
        .map(|&(lo, hi)| {
            let input = stack_encodings(&states[lo..hi], &input_shape)?;
            let (out, cache) = online.forward(&input)?;
            let m = hi - lo;
            let mut grad = vec![0.0f32; m * ACTION_COUNT];
            let mut abs_delta = 0.0f64;
            let mut finite = true;
            for r in 0..m {
                let q = f64::from(out.data()[r * ACTION_COUNT + actions[lo + r]]);
                let delta = q - targets[lo + r];
                finite &= delta.is_finite();
                abs_delta += delta.abs();
                grad[r * ACTION_COUNT + actions[lo + r]] = (huber_grad(delta) / n as f64) as f32;
            }
            let grad_out = Tensor::from_vec_unchecked(out.shape().to_vec(), grad);
            let (grads, _) = online.backward(&cache, &grad_out)?;
            Ok((grads, abs_delta, finite))
        })
        .collect();

    let mut total = Gradients::zeros_like(online);
    let mut abs_sum = 0.0;
    for r in results {
        let (g, d, finite) = r?;
        if !finite {
            return Err(Error::NonFinite("TD error".into()));
        }
        total.add_assign(&g);
        abs_sum += d;
    }
    optimizer_step(&mut qf.online, &total, opt, lr)?;
    Ok(abs_sum / n as f64)
}

/// One double-Q batch update from replay transitions. Returns pre-step
/// mean |δ|.
pub fn train_batch(
    qf: &mut QFunction,
    batch: &[&Transition],
    opt: &mut OptState,
    lr: f32,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let targets = td_targets(qf, batch)?;
    let states: Vec<&Encoding> = batch.iter().map(|t| &t.state).collect();
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    regress_batch(qf, &states, &actions, &targets, opt, lr)
}

/// FIFO experience replay ring.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
    demo_live: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            cursor: 0,
            demo_live: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Insert, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if t.source == Source::Demo {
            self.demo_live += 1;
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            if self.items[self.cursor].source == Source::Demo {
                self.demo_live -= 1;
            }
            self.items[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Fraction of live entries that came from demonstrations.
    pub fn demo_fraction(&self) -> f64 {
        if self.items.is_empty() {
            0.0
        } else {
            self.demo_live as f64 / self.items.len() as f64
        }
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<&Transition> {
        (0..n)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

/// The §VII.C image stack: two 6×6 convolutions, pooled conv pyramid, then
/// the dense head ending in 8 linear outputs.
pub fn paper_image_spec() -> Vec<LayerSpec> {
    let l = Activation::LeakyRelu;
    vec![
        LayerSpec::Conv { filters: 32, kernel: 6, activation: l },
        LayerSpec::Conv { filters: 32, kernel: 6, activation: l },
        LayerSpec::MaxPool,
        LayerSpec::Conv { filters: 64, kernel: 4, activation: l },
        LayerSpec::MaxPool,
        LayerSpec::Conv { filters: 128, kernel: 3, activation: l },
        LayerSpec::MaxPool,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 256, activation: l },
        LayerSpec::Dense { units: 256, activation: l },
        LayerSpec::Dense { units: 64, activation: l },
        LayerSpec::Dense { units: 8, activation: Activation::Linear },
    ]
}

/// Reduced image stack sized for CPU-budget training runs: same layer kinds
/// and input/output contract as the full stack, ~200× fewer multiplies.
pub fn desk_image_spec() -> Vec<LayerSpec> {
    let l = Activation::LeakyRelu;
    vec![
        LayerSpec::MaxPool,
        LayerSpec::Conv { filters: 8, kernel: 5, activation: l },
        LayerSpec::MaxPool,
        LayerSpec::Conv { filters: 16, kernel: 4, activation: l },
        LayerSpec::MaxPool,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 64, activation: l },
        LayerSpec::Dense { units: 8, activation: Activation::Linear },
    ]
}

/// Dense stack for the Cartesian-pose baseline: 330/180/80/64 ReLU then 8
/// linear outputs.
pub fn caba_spec() -> Vec<LayerSpec> {
    let r = Activation::Relu;
    vec![
        LayerSpec::Dense { units: 330, activation: r },
        LayerSpec::Dense { units: 180, activation: r },
        LayerSpec::Dense { units: 80, activation: r },
        LayerSpec::Dense { units: 64, activation: r },
        LayerSpec::Dense { units: 8, activation: Activation::Linear },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImagePreset {
    Paper,
    Desk,
}

pub fn build_image_net(preset: ImagePreset, seed: u64) -> Network {
    let spec = match preset {
        ImagePreset::Paper => paper_image_spec(),
        ImagePreset::Desk => desk_image_spec(),
    };
    Network::new(&[3, 60, 60], &spec, seed).expect("image spec composes")
}

pub fn build_caba_net(objects: usize, seed: u64) -> Network {
    Network::new(&[6 + 3 * objects], &caba_spec(), seed).expect("caba spec composes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_rng, Stream};

    /// Dense [D]→[8] net whose outputs are a constant vector (zero weights,
    /// bias = outputs). The workhorse for target-math tests.
    fn constant_qnet(outputs: [f32; 8], objects: usize) -> Network {
        let mut net = Network::new(
            &[6 + 3 * objects],
            &[LayerSpec::Dense {
                units: 8,
                activation: Activation::Linear,
            }],
            0,
        )
        .unwrap();
        net.params_mut()[0].weight.data_mut().fill(0.0);
        net.params_mut()[0].bias.data_mut().copy_from_slice(&outputs);
        net
    }

    fn features(objects: usize) -> Encoding {
        Encoding::Features(vec![0.1; 6 + 3 * objects])
    }

    fn transition(reward: f32, terminal: bool) -> Transition {
        Transition {
            state: features(1),
            action: 2,
            reward,
            next_state: features(1),
            terminal,
            source: Source::Policy,
        }
    }

    #[test]
    fn zero_net_gives_zero_q_values() {
        let qf = QFunction::new(constant_qnet([0.0; 8], 1), InputKind::Cartesian { objects: 1 }, 0.99).unwrap();
        assert_eq!(qf.q_values(&features(1)).unwrap(), [0.0; 8]);
    }

    #[test]
    fn identical_encodings_give_identical_q() {
        let net = build_caba_net(1, 9);
        let qf = QFunction::new(net, InputKind::Cartesian { objects: 1 }, 0.99).unwrap();
        let a = qf.q_values(&features(1)).unwrap();
        let b = qf.q_values(&features(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_width_must_be_eight() {
        let net = Network::new(
            &[9],
            &[LayerSpec::Dense {
                units: 7,
                activation: Activation::Linear,
            }],
            0,
        )
        .unwrap();
        assert!(QFunction::new(net, InputKind::Cartesian { objects: 1 }, 0.99).is_err());
    }

    #[test]
    fn terminal_target_is_reward() {
        let qf = QFunction::new(constant_qnet([10.0; 8], 1), InputKind::Cartesian { objects: 1 }, 0.99).unwrap();
        let t = transition(0.0, true);
        assert_eq!(td_target(&qf, &t).unwrap(), 0.0);
        let t = transition(-50.0, true);
        assert_eq!(td_target(&qf, &t).unwrap(), -50.0);
    }

    #[test]
    fn td_target_matches_hand_arithmetic() {
        // online picks action 3; target values that action at 10
        let mut online_out = [0.0f32; 8];
        online_out[3] = 5.0;
        let mut target_out = [-100.0f32; 8];
        target_out[3] = 10.0;
        let mut qf =
            QFunction::new(constant_qnet(online_out, 1), InputKind::Cartesian { objects: 1 }, 0.99)
                .unwrap();
        qf.target = constant_qnet(target_out, 1);
        let t = transition(-1.0, false);
        let y = td_target(&qf, &t).unwrap();
        assert!((y - 8.9).abs() < 1e-6, "y = {y}");
    }

    #[test]
    fn gamma_zero_reduces_to_reward() {
        let qf = QFunction::new(constant_qnet([3.0; 8], 1), InputKind::Cartesian { objects: 1 }, 0.0).unwrap();
        for (r, term) in [(-1.0, false), (0.0, true), (-50.0, false)] {
            let y = td_target(&qf, &transition(r, term)).unwrap();
            assert_eq!(y, f64::from(r));
        }
    }

    #[test]
    fn double_q_argmax_comes_from_online_net() {
        let mut online_out = [0.0f32; 8];
        online_out[5] = 1.0; // online argmax fixed at 5
        let qf_make = |target_vals: [f32; 8]| {
            let mut qf = QFunction::new(
                constant_qnet(online_out, 1),
                InputKind::Cartesian { objects: 1 },
                1.0,
            )
            .unwrap();
            qf.target = constant_qnet(target_vals, 1);
            qf
        };
        let mut a_vals = [0.0f32; 8];
        a_vals[5] = 7.0;
        a_vals[0] = 100.0; // huge value elsewhere must not matter
        let qf = qf_make(a_vals);
        let y = td_target(&qf, &transition(0.0, false)).unwrap();
        assert!((y - 7.0).abs() < 1e-6);
    }

    #[test]
    fn sync_target_is_bit_exact_and_idempotent() {
        let net = build_caba_net(1, 4);
        let mut qf = QFunction::new(net, InputKind::Cartesian { objects: 1 }, 0.99).unwrap();
        // drift the online net
        qf.online.params_mut()[0].weight.data_mut()[0] += 1.0;
        assert_ne!(qf.online, qf.target);
        qf.sync_target();
        assert_eq!(qf.online, qf.target);
        let snapshot = qf.target.clone();
        qf.sync_target();
        assert_eq!(qf.target, snapshot);
    }

    #[test]
    fn target_frozen_between_syncs() {
        let net = build_caba_net(1, 4);
        let mut qf = QFunction::new(net, InputKind::Cartesian { objects: 1 }, 0.99).unwrap();
        let frozen = qf.target.clone();
        let t = transition(-1.0, false);
        let mut opt = OptState::new(&qf.online);
        for _ in 0..10 {
            train_batch(&mut qf, &[&t], &mut opt, 1e-3).unwrap();
        }
        // training moves the online net only
        assert_eq!(qf.target, frozen);
        assert_ne!(qf.online, frozen);
        // and with a fixed-argmax construction, td_target is constant until sync
        let mut online_out = [0.0f32; 8];
        online_out[5] = 1.0;
        qf.online = constant_qnet(online_out, 1);
        let y_a = td_target(&qf, &t).unwrap();
        let y_b = td_target(&qf, &t).unwrap();
        assert_eq!(y_a, y_b);
        qf.sync_target();
        assert_eq!(qf.target, qf.online);
    }

    #[test]
    fn mc_targets_match_hand_discounting() {
        let g = mc_targets(&[-1.0, -1.0, 0.0], 0.9).unwrap();
        assert!((g[0] - (-1.9)).abs() < 1e-12);
        assert!((g[1] - (-1.0)).abs() < 1e-12);
        assert!((g[2]).abs() < 1e-12);

        let l = 6;
        let mut rewards = vec![-1.0; l - 1];
        rewards.push(0.0);
        let g = mc_targets(&rewards, 1.0).unwrap();
        assert_eq!(g[0], -(l as f64 - 1.0));

        assert!(matches!(mc_targets(&[], 0.9), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn perfect_predictions_leave_parameters_unchanged() {
        let mut qf = QFunction::new(constant_qnet([2.0; 8], 1), InputKind::Cartesian { objects: 1 }, 0.0).unwrap();
        let mut t = transition(2.0, true); // y = r = 2.0 = q
        t.action = 4;
        let before = qf.online.clone();
        let mut opt = OptState::new(&qf.online);
        let loss = train_batch(&mut qf, &[&t], &mut opt, 1e-3).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(qf.online, before);
    }

    #[test]
    fn single_transition_regression_converges() {
        let net = build_caba_net(1, 12);
        let mut qf = QFunction::new(net, InputKind::Cartesian { objects: 1 }, 0.0).unwrap();
        let t = transition(-5.0, true);
        let mut opt = OptState::new(&qf.online);
        let mut losses = Vec::new();
        for _ in 0..400 {
            losses.push(train_batch(&mut qf, &[&t], &mut opt, 1e-3).unwrap());
        }
        let initial = losses[0];
        let last = *losses.last().unwrap();
        assert!(last < 0.02 * initial.max(1e-9), "initial {initial}, last {last}");
        // monotone after burn-in, sampled at coarse checkpoints
        for k in (150..400).step_by(50) {
            assert!(
                losses[k] <= losses[k - 50] + 1e-9,
                "|δ| rose between {} and {k}",
                k - 50
            );
        }
    }

    #[test]
    fn batch_loss_gradient_matches_finite_differences() {
        // tiny net, f64 FD over the full Huber objective
        let mut net = Network::new(
            &[9],
            &[
                LayerSpec::Dense { units: 6, activation: Activation::LeakyRelu },
                LayerSpec::Dense { units: 8, activation: Activation::Linear },
            ],
            21,
        )
        .unwrap();
        let mut rng = derive_rng(3, Stream::Other(50));
        let states: Vec<Encoding> = (0..4)
            .map(|_| Encoding::Features((0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let actions = [1usize, 3, 5, 0];
        let targets = [0.4f64, -0.7, 0.2, -0.1];

        let loss_of = |net: &Network| -> f64 {
            let refs: Vec<&Encoding> = states.iter().collect();
            let input = stack_encodings(&refs, &[9]).unwrap();
            let out = net.infer(&input).unwrap();
            let mut acc = 0.0;
            for r in 0..4 {
                let q = f64::from(out.data()[r * 8 + actions[r]]);
                let d = q - targets[r];
                acc += if d.abs() <= HUBER_DELTA {
                    0.5 * d * d
                } else {
                    HUBER_DELTA * (d.abs() - 0.5 * HUBER_DELTA)
                };
            }
            acc / 4.0
        };

        // analytic gradient via the training path (recompute grads directly)
        let refs: Vec<&Encoding> = states.iter().collect();
        let input = stack_encodings(&refs, &[9]).unwrap();
        let (out, cache) = net.forward(&input).unwrap();
        let mut grad = vec![0.0f32; 4 * 8];
        for r in 0..4 {
            let q = f64::from(out.data()[r * 8 + actions[r]]);
            let d = q - targets[r];
            grad[r * 8 + actions[r]] = (huber_grad(d) / 4.0) as f32;
        }
        let gt = Tensor::from_vec_unchecked(out.shape().to_vec(), grad);
        let (grads, _) = net.backward(&cache, &gt).unwrap();

        let h = 1e-3f32;
        let mut checked = 0;
        for li in 0..net.params().len() {
            for k in 0..net.params()[li].weight.len().min(10) {
                let analytic = f64::from(grads.layers[li].weight.data()[k]);
                let orig = net.params()[li].weight.data()[k];
                net.params_mut()[li].weight.data_mut()[k] = orig + h;
                let lp = loss_of(&net);
                net.params_mut()[li].weight.data_mut()[k] = orig - h;
                let lm = loss_of(&net);
                net.params_mut()[li].weight.data_mut()[k] = orig;
                let fd = (lp - lm) / (2.0 * f64::from(h));
                let err = (analytic - fd).abs();
                let denom = analytic.abs().max(fd.abs());
                if denom > 1e-3 {
                    assert!(err / denom < 1e-3, "layer {li} idx {k}: {analytic} vs {fd}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 5);
    }

    #[test]
    fn near_zero_lr_is_effectively_identity() {
        let net = build_caba_net(1, 33);
        let mut qf = QFunction::new(net, InputKind::Cartesian { objects: 1 }, 0.99).unwrap();
        let before = qf.online.clone();
        let t = transition(-1.0, false);
        let mut opt = OptState::new(&qf.online);
        for _ in 0..5 {
            train_batch(&mut qf, &[&t], &mut opt, 1e-12).unwrap();
        }
        let mut max_delta = 0.0f32;
        for (a, b) in qf.online.params().iter().zip(before.params()) {
            for (x, y) in a.weight.data().iter().zip(b.weight.data()) {
                max_delta = max_delta.max((x - y).abs());
            }
        }
        assert!(max_delta < 1e-9, "max parameter delta {max_delta}");
    }

    #[test]
    fn replay_overwrites_oldest_first() {
        let mut buf = ReplayBuffer::new(5);
        for i in 0..5 {
            let mut t = transition(i as f32, false);
            t.source = Source::Demo;
            buf.push(t);
        }
        assert_eq!(buf.demo_fraction(), 1.0);
        for i in 5..8 {
            buf.push(transition(i as f32, false));
        }
        let rewards: Vec<f32> = buf.iter().map(|t| t.reward).collect();
        // oldest three demo entries (0,1,2) replaced by 5,6,7
        assert_eq!(rewards, vec![5.0, 6.0, 7.0, 3.0, 4.0]);
        assert!((buf.demo_fraction() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn replay_sampling_is_seeded() {
        let mut buf = ReplayBuffer::new(16);
        for i in 0..16 {
            buf.push(transition(i as f32, false));
        }
        let mut r1 = derive_rng(5, Stream::Replay);
        let mut r2 = derive_rng(5, Stream::Replay);
        let a: Vec<f32> = buf.sample(&mut r1, 8).iter().map(|t| t.reward).collect();
        let b: Vec<f32> = buf.sample(&mut r2, 8).iter().map(|t| t.reward).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn image_encoding_roundtrip_shape() {
        use crate::geom::Pose2;
        use crate::physics::{Bounds, GripperState, TargetRegion};
        let w = WorldState {
            objects: vec![],
            gripper: GripperState {
                pose: Pose2::new(0.0, 0.0, 0.0),
                aperture: 1.0,
                held_object: None,
            },
            target: TargetRegion {
                center: crate::geom::Vec2::new(0.1, 0.1),
                radius: 0.05,
            },
            bounds: Bounds::desk(),
            step_count: 0,
        };
        let enc = StateEncoder {
            kind: InputKind::Image,
            view: ViewConfig::default(),
            phys: PhysicsConfig::default(),
        }
        .encode(&w)
        .unwrap();
        let t = stack_encodings(&[&enc], &[3, 60, 60]).unwrap();
        assert_eq!(t.shape(), &[1, 3, 60, 60]);
        // background inverts to zero on every channel
        let first_bg = t.data()[0];
        assert_eq!(first_bg, 0.0);
    }
}
