//! Receding-horizon planning: Boltzmann-guided rollouts through the physics
//! model scored by discounted reward plus a value-function bootstrap at the
//! horizon, with the first action of the best rollout executed. Also the
//! greedy and handcrafted-heuristic baselines.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};
use crate::physics::{step, Action, PhysicsConfig, WorldState, ACTION_COUNT, ALL_ACTIONS};
use crate::qvalue::{argmax, QFunction, StateEncoder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RhpConfig {
    /// Rollout count K.
    pub rollouts: usize,
    /// Horizon depth H.
    pub horizon: usize,
    /// Softmax temperature τ.
    pub tau: f64,
    /// Discount γ.
    pub gamma: f64,
    /// Exploration rate ε (training only).
    pub epsilon: f64,
}

impl Default for RhpConfig {
    fn default() -> Self {
        RhpConfig {
            rollouts: 4,
            horizon: 4,
            tau: 0.1,
            gamma: 0.99,
            epsilon: 0.0,
        }
    }
}

impl RhpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts < 1
            || self.horizon < 1
            || self.tau <= 0.0
            || !(0.0..=1.0).contains(&self.epsilon)
            || !(0.0..=1.0).contains(&self.gamma)
        {
            return Err(Error::Config(format!("invalid RHP config {self:?}")));
        }
        Ok(())
    }
}

/// One simulated look-ahead: the sampled actions, per-step rewards, horizon
/// state, bootstrap value, and the combined return R₀:H.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub horizon_state: WorldState,
    /// max_a q̂(s_H, a); zero when the rollout ended on a terminal state.
    pub bootstrap: f64,
    pub return_value: f64,
    pub terminal: bool,
}

/// Everything a rollout needs besides the start state.
#[derive(Clone, Copy)]
pub struct PlanContext<'a> {
    pub qf: &'a QFunction,
    pub encoder: &'a StateEncoder,
    pub phys: &'a PhysicsConfig,
}

/// Softmax probabilities with max-subtraction for overflow safety.
pub fn boltzmann_probs(q: &[f32], tau: f64) -> Result<Vec<f64>> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("action values".into()));
    }
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let max = q.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = q
        .iter()
        .map(|&v| (f64::from(v - max) / tau).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Draw an action index with probability ∝ exp(q/τ).
pub fn boltzmann_sample(q: &[f32], tau: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    let probs = boltzmann_probs(q, tau)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(probs.len() - 1)
}

/// Simulate one Boltzmann-guided rollout of up to H steps.
///
/// R₀:H = r₁ + γr₂ + … + γ^{H−1}r_H + γ^H·max_a q̂(s_H, a); a rollout that
/// hits a terminal state truncates there with no bootstrap term.
pub fn rollout(
    ctx: &PlanContext,
    w: &WorldState,
    cfg: &RhpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutResult> {
    let mut state = w.clone();
    let mut actions = Vec::with_capacity(cfg.horizon);
    let mut rewards = Vec::with_capacity(cfg.horizon);
    let mut ret = 0.0f64;
    let mut discount = 1.0f64;
    let mut terminal = false;

    for _ in 0..cfg.horizon {
        let enc = ctx.encoder.encode(&state)?;
        let q = ctx.qf.q_values(&enc)?;
        let a = ALL_ACTIONS[boltzmann_sample(&q, cfg.tau, rng)?];
        let out = step(&state, a, ctx.phys);
        actions.push(a);
        rewards.push(out.reward);
        ret += discount * out.reward;
        discount *= cfg.gamma;
        state = out.next_state;
        if out.terminal {
            terminal = true;
            break;
        }
    }

    let bootstrap = if terminal {
        0.0
    } else {
        let enc = ctx.encoder.encode(&state)?;
        let q = ctx.qf.q_values(&enc)?;
        f64::from(q.iter().cloned().fold(f32::NEG_INFINITY, f32::max))
    };
    ret += discount * bootstrap * if terminal { 0.0 } else { 1.0 };

    Ok(RolloutResult {
        actions,
        rewards,
        horizon_state: state,
        bootstrap,
        return_value: ret,
        terminal,
    })
}

/// Run K independent rollouts from copies of `w` and return the first action
/// of the highest-return rollout (lowest index on ties), along with all
/// rollout results. Rollouts execute in parallel on fixed per-rollout seed
/// streams and reduce in index order, so parallelism never changes the
/// selection.
pub fn rhp_select_detailed(
    ctx: &PlanContext,
    w: &WorldState,
    cfg: &RhpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Action, Vec<RolloutResult>)> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.rollouts).map(|_| rng.gen()).collect();
    let results: Vec<Result<RolloutResult>> = seeds
        .par_iter()
        .map(|&s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            rollout(ctx, w, cfg, &mut r)
        })
        .collect();
    let mut rollouts = Vec::with_capacity(results.len());
    for r in results {
        rollouts.push(r?);
    }
    let mut best = 0;
    for (i, r) in rollouts.iter().enumerate().skip(1) {
        if r.return_value > rollouts[best].return_value {
            best = i;
        }
    }
    Ok((rollouts[best].actions[0], rollouts))
}

pub fn rhp_select(
    ctx: &PlanContext,
    w: &WorldState,
    cfg: &RhpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Action> {
    rhp_select_detailed(ctx, w, cfg, rng).map(|(a, _)| a)
}

/// ε-RHP behavior policy: a uniform random action with probability ε,
/// otherwise the RHP selection. The flag reports which branch ran.
pub fn epsilon_rhp_traced(
    ctx: &PlanContext,
    w: &WorldState,
    cfg: &RhpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Action, bool)> {
    if rng.gen::<f64>() < cfg.epsilon {
        let a = ALL_ACTIONS[rng.gen_range(0..ACTION_COUNT)];
        Ok((a, true))
    } else {
        Ok((rhp_select(ctx, w, cfg, rng)?, false))
    }
}

pub fn epsilon_rhp(
    ctx: &PlanContext,
    w: &WorldState,
    cfg: &RhpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Action> {
    epsilon_rhp_traced(ctx, w, cfg, rng).map(|(a, _)| a)
}

/// Greedy baseline: argmax of the value function on the current state, no
/// look-ahead.
pub fn greedy_select(ctx: &PlanContext, w: &WorldState) -> Result<Action> {
    let enc = ctx.encoder.encode(w)?;
    let q = ctx.qf.q_values(&enc)?;
    Ok(ALL_ACTIONS[argmax(&q)])
}

/// Handcrafted cost-to-go weights for the heuristic baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicWeights {
    pub target_dist: f64,
    pub face_object: f64,
    pub face_target: f64,
    pub boundary: f64,
    /// Objects closer than this to the edge activate the boundary term.
    pub boundary_margin: f64,
}

impl Default for HeuristicWeights {
    fn default() -> Self {
        HeuristicWeights {
            target_dist: 1.0,
            face_object: 0.3,
            face_target: 0.3,
            boundary: 0.5,
            boundary_margin: 0.05,
        }
    }
}

fn heading_error(w: &WorldState, to: Vec2) -> f64 {
    let d = to - w.gripper.pose.position;
    if d.norm() < 1e-9 {
        return 0.0;
    }
    wrap_angle(d.y.atan2(d.x) - w.gripper.pose.angle).abs()
}

/// Weighted cost-to-go: distance from the desired object to the target,
/// heading alignment toward the object and the target, and a penalty for any
/// object near the surface edge. Lower is better.
pub fn handcrafted_heuristic(w: &WorldState, weights: &HeuristicWeights) -> f64 {
    let desired = &w.objects[w.desired_index()];
    let dist = (desired.pose.position - w.target.center).norm();
    let e_obj = heading_error(w, desired.pose.position);
    let e_tgt = heading_error(w, w.target.center);
    let b = w.bounds;
    let boundary: f64 = w
        .objects
        .iter()
        .map(|o| {
            let p = o.pose.position;
            let edge = (p.x - b.x_min)
                .min(b.x_max - p.x)
                .min(p.y - b.y_min)
                .min(b.y_max - p.y);
            (weights.boundary_margin - edge).max(0.0)
        })
        .sum();
    weights.target_dist * dist
        + weights.face_object * e_obj
        + weights.face_target * e_tgt
        + weights.boundary * boundary
}

/// The heuristic baseline: K uniform-random rollouts of depth H, scored by
/// accumulated step cost (−reward) plus the handcrafted cost at the horizon;
/// first action of the cheapest rollout wins, lowest index on ties.
pub fn haba_select(
    w: &WorldState,
    phys: &PhysicsConfig,
    weights: &HeuristicWeights,
    rollouts: usize,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Action> {
    if rollouts < 1 || horizon < 1 {
        return Err(Error::Config("haba needs K ≥ 1, H ≥ 1".into()));
    }
    let seeds: Vec<u64> = (0..rollouts).map(|_| rng.gen()).collect();
    let costs: Vec<(Action, f64)> = seeds
        .par_iter()
        .map(|&s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            let mut state = w.clone();
            let mut first = None;
            let mut cost = 0.0f64;
            let mut terminal = false;
            for _ in 0..horizon {
                let a = ALL_ACTIONS[r.gen_range(0..ACTION_COUNT)];
                first.get_or_insert(a);
                let out = step(&state, a, phys);
                cost -= out.reward;
                state = out.next_state;
                if out.terminal {
                    terminal = true;
                    break;
                }
            }
            if !terminal {
                cost += handcrafted_heuristic(&state, weights);
            }
            (first.expect("horizon ≥ 1"), cost)
        })
        .collect();
    let mut best = 0;
    for (i, c) in costs.iter().enumerate().skip(1) {
        if c.1 < costs[best].1 {
            best = i;
        }
    }
    Ok(costs[best].0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Polygon, Pose2};
    use crate::nn::net::{Activation, LayerSpec};
    use crate::nn::Network;
    use crate::physics::{Bounds, GripperState, ObjectRole, ObjectState, TargetRegion};
    use crate::qvalue::{Encoding, InputKind};
    use crate::render::ViewConfig;
    use crate::rng::{derive_rng, Stream};

    fn constant_image_qnet(outputs: [f32; 8]) -> QFunction {
        let mut net = Network::new(
            &[3, 60, 60],
            &[
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 8,
                    activation: Activation::Linear,
                },
            ],
            0,
        )
        .unwrap();
        net.params_mut()[1].weight.data_mut().fill(0.0);
        net.params_mut()[1].bias.data_mut().copy_from_slice(&outputs);
        QFunction::new(net, InputKind::Image, 0.99).unwrap()
    }

    fn simple_world() -> WorldState {
        WorldState {
            objects: vec![ObjectState {
                shape: Polygon::rectangle(0.04, 0.04).unwrap(),
                pose: Pose2::new(0.15, 0.15, 0.0),
                role: ObjectRole::Desired,
            }],
            gripper: GripperState {
                pose: Pose2::new(-0.15, -0.15, 0.0),
                aperture: 1.0,
                held_object: None,
            },
            target: TargetRegion {
                center: Vec2::new(0.2, -0.2),
                radius: 0.05,
            },
            bounds: Bounds::desk(),
            step_count: 0,
        }
    }

    fn ctx_parts(outputs: [f32; 8]) -> (QFunction, StateEncoder, PhysicsConfig) {
        let qf = constant_image_qnet(outputs);
        let encoder = StateEncoder {
            kind: InputKind::Image,
            view: ViewConfig::default(),
            phys: PhysicsConfig::default(),
        };
        (qf, encoder, PhysicsConfig::default())
    }

    #[test]
    fn equal_values_sample_uniformly() {
        let q = [0.5f32; 8];
        let mut rng = derive_rng(1, Stream::Other(10));
        let n = 10_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            counts[boltzmann_sample(&q, 1.0, &mut rng).unwrap()] += 1;
        }
        // χ² against uniform, df = 7, critical value 18.48 at p = 0.01
        let expected = n as f64 / 8.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 18.48, "χ² = {chi2}, counts {counts:?}");
    }

    #[test]
    fn two_action_softmax_matches_direct_evaluation() {
        let p = boltzmann_probs(&[1.0, 0.0], 1.0).unwrap();
        assert!((p[0] - 0.7310585786).abs() < 1e-9);
        assert!((p[1] - 0.2689414214).abs() < 1e-9);
    }

    #[test]
    fn low_temperature_selects_argmax() {
        let mut q = [0.0f32; 8];
        q[6] = 1.0;
        let mut rng = derive_rng(2, Stream::Other(11));
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| boltzmann_sample(&q, 1e-6, &mut rng).unwrap() == 6)
            .count();
        assert!(hits as f64 / n as f64 > 0.999);
    }

    #[test]
    fn probabilities_sum_to_one_and_shift_invariant() {
        // quarter-based values stay exactly representable under a +2.0 shift,
        // so invariance holds to the last bit
        let q = [0.25f32, -2.0, 1.75, 0.0, 5.0, -0.5, 2.25, 1.0];
        let p = boltzmann_probs(&q, 0.7).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let shifted: Vec<f32> = q.iter().map(|v| v + 2.0).collect();
        let ps = boltzmann_probs(&shifted, 0.7).unwrap();
        for (a, b) in p.iter().zip(&ps) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_invariant_under_joint_rescaling() {
        let q = [0.3f32, -2.0, 1.7, 0.0, 5.0, -0.4, 2.2, 1.0];
        let c = 3.7f32;
        let scaled: Vec<f32> = q.iter().map(|v| v / c).collect();
        let mut r1 = derive_rng(3, Stream::Other(12));
        let mut r2 = derive_rng(3, Stream::Other(12));
        for _ in 0..200 {
            let a = boltzmann_sample(&q, 1.0, &mut r1).unwrap();
            let b = boltzmann_sample(&scaled, 1.0 / f64::from(c), &mut r2).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn non_finite_q_is_an_error() {
        assert!(boltzmann_sample(
            &[f32::NAN, 0.0],
            1.0,
            &mut derive_rng(0, Stream::Other(13))
        )
        .is_err());
    }

    #[test]
    fn single_step_rollout_with_zero_net_returns_first_reward() {
        let (qf, encoder, phys) = ctx_parts([0.0; 8]);
        let ctx = PlanContext { qf: &qf, encoder: &encoder, phys: &phys };
        let cfg = RhpConfig { rollouts: 1, horizon: 1, tau: 1.0, gamma: 0.9, epsilon: 0.0 };
        let w = simple_world();
        let r = rollout(&ctx, &w, &cfg, &mut derive_rng(4, Stream::Rollout(0))).unwrap();
        assert_eq!(r.rewards.len(), 1);
        assert_eq!(r.return_value, r.rewards[0]);
        assert_eq!(r.bootstrap, 0.0);
    }

    #[test]
    fn return_matches_hand_formula_with_bootstrap() {
        let (qf, encoder, phys) = ctx_parts([10.0; 8]);
        let ctx = PlanContext { qf: &qf, encoder: &encoder, phys: &phys };
        let cfg = RhpConfig { rollouts: 1, horizon: 4, tau: 1.0, gamma: 0.9, epsilon: 0.0 };
        let w = simple_world(); // all four steps reward −1, far from goal/bounds
        let r = rollout(&ctx, &w, &cfg, &mut derive_rng(5, Stream::Rollout(1))).unwrap();
        assert_eq!(r.rewards, vec![-1.0; 4]);
        assert!((r.bootstrap - 10.0).abs() < 1e-9);
        let expected = -1.0 - 0.9 - 0.81 - 0.729 + 0.6561 * 10.0;
        assert!((r.return_value - expected).abs() < 1e-6, "{}", r.return_value);
        assert!((r.return_value - 3.1220).abs() < 1e-3);
    }

    #[test]
    fn terminal_truncation_drops_bootstrap() {
        // Gripper directly behind the desired object, facing it; the object
        // needs two 3 cm pushes to enter the target: rewards (−1, 0).
        let mut w = simple_world();
        w.target.center = Vec2::new(0.15, 0.0);
        w.target.radius = 0.05;
        w.objects[0].pose = Pose2::new(0.06, 0.0, 0.0);
        w.gripper.pose = Pose2::new(-0.01, 0.0, 0.0);
        w.gripper.aperture = 0.0;
        // argmax forces MoveForward at low temperature
        let mut outs = [0.0f32; 8];
        outs[0] = 5.0;
        let (qf, encoder, phys) = ctx_parts(outs);
        let ctx = PlanContext { qf: &qf, encoder: &encoder, phys: &phys };
        let cfg = RhpConfig { rollouts: 1, horizon: 4, tau: 1e-6, gamma: 0.9, epsilon: 0.0 };
        let r = rollout(&ctx, &w, &cfg, &mut derive_rng(6, Stream::Rollout(2))).unwrap();
        assert!(r.terminal, "rewards {:?}", r.rewards);
        assert_eq!(r.rewards.last().copied(), Some(0.0));
        assert_eq!(r.bootstrap, 0.0);
        let hand: f64 = r
            .rewards
            .iter()
            .enumerate()
            .map(|(k, &rew)| 0.9f64.powi(k as i32) * rew)
            .sum();
        assert!((r.return_value - hand).abs() < 1e-9);
    }

    #[test]
    fn stored_return_recomputes_from_parts() {
        let (qf, encoder, phys) = ctx_parts([2.0; 8]);
        let ctx = PlanContext { qf: &qf, encoder: &encoder, phys: &phys };
        let cfg = RhpConfig { rollouts: 3, horizon: 4, tau: 1.0, gamma: 0.95, epsilon: 0.0 };
        let w = simple_world();
        let (_, rollouts) =
            rhp_select_detailed(&ctx, &w, &cfg, &mut derive_rng(7, Stream::Rollout(3))).unwrap();
        for r in rollouts {
            let mut acc = 0.0;
            let mut disc = 1.0;
            for &rew in &r.rewards {
                acc += disc * rew;
                disc *= cfg.gamma;
            }
            if !r.terminal {
                acc += disc * r.bootstrap;
            }
            assert!((acc - r.return_value).abs() < 1e-6);
        }
    }

    #[test]
    fn rhp_picks_highest_return_lowest_index_on_ties() {
        let (qf, encoder, phys) = ctx_parts([1.0; 8]);
        let ctx = PlanContext { qf: &qf, encoder: &encoder, phys: &phys };
        let cfg = RhpConfig { rollouts: 4, horizon: 2, tau: 1.0, gamma: 0.9, epsilon: 0.0 };
        let w = simple_world();
        let (a, rollouts) =
            rhp_select_detailed(&ctx, &w, &cfg, &mut derive_rng(8, Stream::Rollout(4))).unwrap();
        let mut best = 0;
        for (i, r) in rollouts.iter().enumerate().skip(1) {
            if r.return_value > rollouts[best].return_value {
                best = i;
            }
        }
        assert_eq!(a, rollouts[best].actions[0]);
        // K = 1 returns the single rollout's first action
        let cfg1 = RhpConfig { rollouts: 1, ..cfg };
        let (a1, r1) =
            rhp_select_detailed(&ctx, &w, &cfg1, &mut derive_rng(9, Stream::Rollout(5))).unwrap();
        assert_eq!(a1, r1[0].actions[0]);
    }

    #[test]
    fn rhp_is_seed_deterministic_and_does_not_mutate_input() {
        let (qf, encoder, phys) = ctx_parts([1.0; 8]);
        let ctx = PlanContext { qf: &qf, encoder: &encoder, phys: &phys };
        let cfg = RhpConfig::default();
        let w = simple_world();
        let w_before = w.clone();
        let a = rhp_select(&ctx, &w, &cfg, &mut derive_rng(10, Stream::Rollout(6))).unwrap();
        let b = rhp_select(&ctx, &w, &cfg, &mut derive_rng(10, Stream::Rollout(6))).unwrap();
        assert_eq!(a, b);
        assert_eq!(w, w_before);
    }

    #[test]
    fn epsilon_one_is_uniform_and_epsilon_zero_is_rhp() {
        let (qf, encoder, phys) = ctx_parts([0.0; 8]);
        let ctx = PlanContext { qf: &qf, encoder: &encoder, phys: &phys };
        let w = simple_world();
        let mut cfg = RhpConfig { rollouts: 2, horizon: 1, tau: 1.0, gamma: 0.9, epsilon: 1.0 };
        let mut rng = derive_rng(11, Stream::Policy(0));
        let n = 10_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let (a, explored) = epsilon_rhp_traced(&ctx, &w, &cfg, &mut rng).unwrap();
            assert!(explored);
            counts[a.index()] += 1;
        }
        let expected = n as f64 / 8.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 18.48, "χ² = {chi2}");

        cfg.epsilon = 0.0;
        let mut r1 = derive_rng(12, Stream::Policy(1));
        let mut r2 = derive_rng(12, Stream::Policy(1));
        let (a, explored) = epsilon_rhp_traced(&ctx, &w, &cfg, &mut r1).unwrap();
        assert!(!explored);
        // ε = 0 consumes the branch draw then delegates to rhp_select
        let _: f64 = r2.gen();
        let b = rhp_select(&ctx, &w, &cfg, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exploration_frequency_tracks_epsilon() {
        let (qf, encoder, phys) = ctx_parts([0.0; 8]);
        let ctx = PlanContext { qf: &qf, encoder: &encoder, phys: &phys };
        let w = simple_world();
        let cfg = RhpConfig { rollouts: 1, horizon: 1, tau: 1.0, gamma: 0.9, epsilon: 0.3 };
        let mut rng = derive_rng(13, Stream::Policy(2));
        let n = 10_000;
        let explored = (0..n)
            .filter(|_| epsilon_rhp_traced(&ctx, &w, &cfg, &mut rng).unwrap().1)
            .count();
        let freq = explored as f64 / n as f64;
        assert!((freq - 0.3).abs() <= 0.02, "freq {freq}");
    }

    #[test]
    fn greedy_takes_argmax_with_low_index_ties() {
        let mut outs = [0.0f32; 8];
        outs[5] = 3.0;
        let (qf, encoder, phys) = ctx_parts(outs);
        let ctx = PlanContext { qf: &qf, encoder: &encoder, phys: &phys };
        let w = simple_world();
        assert_eq!(greedy_select(&ctx, &w).unwrap(), ALL_ACTIONS[5]);

        let mut tie = [0.0f32; 8];
        tie[2] = 1.0;
        tie[6] = 1.0;
        let (qf, encoder, phys) = ctx_parts(tie);
        let ctx = PlanContext { qf: &qf, encoder: &encoder, phys: &phys };
        assert_eq!(greedy_select(&ctx, &w).unwrap(), ALL_ACTIONS[2]);
    }

    #[test]
    fn greedy_agrees_with_degenerate_rhp_when_bootstrap_dominates() {
        // constant per-action biases: every horizon state scores the same
        // bootstrap, so RHP ties on returns and keeps rollout 0, whose first
        // action at τ→0 is the argmax — exactly the greedy pick
        let mut outs = [0.0f32; 8];
        outs[3] = 2.0;
        let (qf, encoder, phys) = ctx_parts(outs);
        let ctx = PlanContext { qf: &qf, encoder: &encoder, phys: &phys };
        let w = simple_world();
        let cfg = RhpConfig { rollouts: 4, horizon: 1, tau: 1e-6, gamma: 1.0, epsilon: 0.0 };
        let rhp = rhp_select(&ctx, &w, &cfg, &mut derive_rng(14, Stream::Rollout(7))).unwrap();
        assert_eq!(rhp, greedy_select(&ctx, &w).unwrap());
    }

    #[test]
    fn heuristic_zero_at_solved_aligned_world() {
        let mut w = simple_world();
        w.objects[0].pose = Pose2::new(0.1, 0.0, 0.0);
        w.target.center = Vec2::new(0.1, 0.0);
        w.gripper.pose = Pose2::new(0.0, 0.0, 0.0); // facing +x toward both
        let cost = handcrafted_heuristic(&w, &HeuristicWeights::default());
        assert!(cost.abs() < 1e-12, "cost {cost}");
    }

    #[test]
    fn heuristic_distance_term_is_linear() {
        let weights = HeuristicWeights {
            face_object: 0.0,
            face_target: 0.0,
            boundary: 0.0,
            ..HeuristicWeights::default()
        };
        let mut w = simple_world();
        w.gripper.pose = Pose2::new(0.0, 0.0, 0.0);
        w.target.center = Vec2::new(0.0, 0.0);
        w.objects[0].pose = Pose2::new(0.05, 0.0, 0.0);
        let c1 = handcrafted_heuristic(&w, &weights);
        w.objects[0].pose = Pose2::new(0.1, 0.0, 0.0);
        let c2 = handcrafted_heuristic(&w, &weights);
        assert!((c2 - 2.0 * c1).abs() < 1e-12);
    }

    #[test]
    fn heuristic_boundary_term_activates_near_edge() {
        let weights = HeuristicWeights::default();
        let mut w = simple_world();
        let base = handcrafted_heuristic(&w, &weights);
        w.objects[0].pose.position = Vec2::new(0.23, 0.15); // 2 cm from the edge
        let near = handcrafted_heuristic(&w, &weights);
        // moving toward the corner also changes distance/heading terms, so
        // compare against the same pose with the boundary weight off
        let mut no_boundary = weights;
        no_boundary.boundary = 0.0;
        let near_no_b = handcrafted_heuristic(&w, &no_boundary);
        assert!((near - near_no_b - 0.5 * 0.03).abs() < 1e-12);
        let _ = base;
    }

    #[test]
    fn haba_is_seed_deterministic() {
        let w = simple_world();
        let phys = PhysicsConfig::default();
        let weights = HeuristicWeights::default();
        let a = haba_select(&w, &phys, &weights, 15, 4, &mut derive_rng(15, Stream::Rollout(8)))
            .unwrap();
        let b = haba_select(&w, &phys, &weights, 15, 4, &mut derive_rng(15, Stream::Rollout(8)))
            .unwrap();
        assert_eq!(a, b);
    }
}
