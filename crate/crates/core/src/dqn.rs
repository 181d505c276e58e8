//! Q-learning agent with an adaptive-pressure input encoder, plus the
//! auxiliary reward-prediction network and the replay store.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{blend, clip_grad_norm, Mlp};
use crate::pressure::{
    ap_backward, ap_values, attention_weights, AttentionParams, LaneMatrix, RUNNING, WAITING,
};
use crate::simcore::RawObservation;

pub const NUM_ACTIONS: usize = 8;

/// Scale for lane counts fed to networks.
pub const COUNT_SCALE: f64 = 0.1;
/// Scale for neighbor queue totals (sums over 12 lanes).
pub const NEIGHBOR_SCALE: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum DqnError {
    #[error("non-finite activation in forward pass")]
    NonFiniteActivation,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("parameter shapes differ: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
}

pub type Result<T> = std::result::Result<T, DqnError>;

/// What the agent sees at one intersection at a decision point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub q: LaneMatrix,
    pub k: LaneMatrix,
    pub phase: u8,
    pub neighbor_queues: [f64; 4],
}

impl Observation {
    pub fn from_raw(raw: &RawObservation) -> Self {
        let (q, k) = crate::pressure::lane_matrices(raw);
        Observation {
            q,
            k,
            phase: raw.phase,
            neighbor_queues: raw.neighbor_queues,
        }
    }

    fn column(m: &LaneMatrix, col: usize) -> [f64; 12] {
        std::array::from_fn(|i| m[i / 3][i % 3][col])
    }

    pub fn upstream_queues(&self) -> [f64; 12] {
        Self::column(&self.q, WAITING)
    }

    pub fn upstream_running(&self) -> [f64; 12] {
        Self::column(&self.q, RUNNING)
    }

    pub fn total_queue(&self) -> f64 {
        self.upstream_queues().iter().sum()
    }

    fn phase_one_hot(&self) -> [f64; NUM_ACTIONS] {
        let mut v = [0.0; NUM_ACTIONS];
        if (1..=NUM_ACTIONS as u8).contains(&self.phase) {
            v[usize::from(self.phase) - 1] = 1.0;
        }
        v
    }
}

/// First 12 inputs of the Q network: adaptive pressure, or raw queue lengths
/// for the plain baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Encoding {
    AdaptivePressure,
    QueueLength,
}

pub const QNET_INPUT: usize = 12 + NUM_ACTIONS + 12 + 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNet {
    pub encoding: Encoding,
    pub attention: Option<AttentionParams>,
    pub mlp: Mlp,
}

impl QNet {
    pub fn new<R: Rng + ?Sized>(encoding: Encoding, cfg: &TrainConfig, rng: &mut R) -> Self {
        let attention = match encoding {
            Encoding::AdaptivePressure => Some(AttentionParams::random(
                cfg.heads,
                cfg.d_k,
                cfg.feature_scale,
                rng,
            )),
            Encoding::QueueLength => None,
        };
        let mut sizes = vec![QNET_INPUT];
        sizes.extend(&cfg.hidden);
        sizes.push(NUM_ACTIONS);
        QNet {
            encoding,
            attention,
            mlp: Mlp::glorot(&sizes, rng),
        }
    }

    fn attn_len(&self) -> usize {
        self.attention.as_ref().map_or(0, |a| a.params.len())
    }

    pub fn param_count(&self) -> usize {
        self.attn_len() + self.mlp.params.len()
    }

    /// Attention parameters followed by MLP parameters.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        if let Some(a) = &self.attention {
            v.extend_from_slice(&a.params);
        }
        v.extend_from_slice(&self.mlp.params);
        v
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(DqnError::ShapeMismatch(flat.len(), self.param_count()));
        }
        let n = self.attn_len();
        if let Some(a) = &mut self.attention {
            a.params.copy_from_slice(&flat[..n]);
        }
        self.mlp.params.copy_from_slice(&flat[n..]);
        Ok(())
    }

    /// Network input vector (after scaling).
    pub fn encode(&self, obs: &Observation) -> Vec<f64> {
        let first: [f64; 12] = match (&self.encoding, &self.attention) {
            (Encoding::AdaptivePressure, Some(a)) => {
                let w = attention_weights(a, &obs.q, &obs.k).unwrap_or_else(|_| {
                    // Non-finite params fall back to uniform weights; the
                    // finiteness check on the output reports the problem.
                    [[[1.0 / 3.0; 3]; 3]; 4]
                });
                ap_values(&w, &obs.q, &obs.k)
            }
            _ => obs.upstream_queues(),
        };
        let mut x = Vec::with_capacity(QNET_INPUT);
        x.extend(first.iter().map(|v| v * COUNT_SCALE));
        x.extend(obs.phase_one_hot());
        x.extend(obs.upstream_running().iter().map(|v| v * COUNT_SCALE));
        x.extend(obs.neighbor_queues.iter().map(|v| v * NEIGHBOR_SCALE));
        x
    }

    pub fn q_values(&self, obs: &Observation) -> Result<[f64; NUM_ACTIONS]> {
        let out = self.mlp.forward(&self.encode(obs));
        if out.iter().any(|v| !v.is_finite()) {
            return Err(DqnError::NonFiniteActivation);
        }
        Ok(std::array::from_fn(|i| out[i]))
    }

    /// Accumulate d(q . grad_q)/d(params) into `grad` (flat layout of
    /// [`QNet::params`]) and return the Q values.
    pub fn backward(&self, obs: &Observation, grad_q: &[f64; NUM_ACTIONS], grad: &mut [f64]) -> [f64; NUM_ACTIONS] {
        let n = self.attn_len();
        let cache = self.mlp.forward_cached(&self.encode(obs));
        let gx = self.mlp.backward(&cache, grad_q, &mut grad[n..]);
        if let Some(a) = &self.attention {
            let g_ap: [f64; 12] = std::array::from_fn(|i| gx[i] * COUNT_SCALE);
            ap_backward(a, &obs.q, &obs.k, &g_ap, &mut grad[..n]);
        }
        let out = cache.output();
        std::array::from_fn(|i| out[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub queue: f64,
    pub throughput: f64,
    pub switch: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            queue: 0.25,
            throughput: 0.1,
            switch: 0.5,
        }
    }
}

/// `-w_q * queue + w_p * throughput - w_s * [switched]`.
pub fn reward(queue: f64, throughput: f64, switched: bool, w: &RewardWeights) -> f64 {
    -w.queue * queue + w.throughput * throughput - if switched { w.switch } else { 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub epsilon_floor: f64,
    pub epsilon_power: f64,
    pub grad_clip: f64,
    pub heads: usize,
    pub d_k: usize,
    pub feature_scale: f64,
    /// TD updates per decision step.
    pub updates_per_step: usize,
    /// Transitions required before TD updates start.
    pub warmup_transitions: usize,
    pub reward: RewardWeights,
    pub pred_hidden: Vec<usize>,
    pub pred_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.8,
            lr: 0.01,
            tau: 0.05,
            batch_size: 32,
            hidden: vec![64, 64],
            buffer_capacity: 20_000,
            epsilon_floor: 0.2,
            epsilon_power: 0.45,
            grad_clip: 10.0,
            heads: 4,
            d_k: 8,
            feature_scale: 0.1,
            updates_per_step: 1,
            warmup_transitions: 64,
            reward: RewardWeights::default(),
            pred_hidden: vec![64, 32],
            pred_lr: 0.005,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(format!("gamma must be in (0,1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("tau must be in (0,1], got {}", self.tau));
        }
        if !(self.lr > 0.0 && self.pred_lr > 0.0) {
            return Err("learning rates must be positive".into());
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err("batch_size and buffer_capacity must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon_floor) {
            return Err("epsilon_floor must be in [0,1]".into());
        }
        if self.heads == 0 || self.d_k == 0 || self.hidden.contains(&0) || self.pred_hidden.contains(&0) {
            return Err("layer sizes must be positive".into());
        }
        Ok(())
    }

    /// `max(floor, e^-power)` for 1-based episode index `e`.
    pub fn epsilon(&self, episode: usize) -> f64 {
        let e = episode.max(1) as f64;
        e.powf(-self.epsilon_power).clamp(self.epsilon_floor, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    /// 1..=8.
    pub phase: u8,
    pub switched: bool,
}

/// Lowest index among the maxima.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice. Always consumes one uniform draw, plus one more
/// when exploring.
pub fn select_action<R: Rng + ?Sized>(q: &[f64; NUM_ACTIONS], epsilon: f64, current: u8, rng: &mut R) -> Action {
    let u: f64 = rng.random();
    let idx = if u < epsilon {
        rng.random_range(0..NUM_ACTIONS)
    } else {
        argmax(q)
    };
    let phase = idx as u8 + 1;
    Action {
        phase,
        switched: phase != current,
    }
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut QNet, online: &QNet, tau: f64) -> Result<()> {
    if target.param_count() != online.param_count() || target.mlp.sizes != online.mlp.sizes {
        return Err(DqnError::ShapeMismatch(target.param_count(), online.param_count()));
    }
    if let (Some(t), Some(o)) = (&mut target.attention, &online.attention) {
        blend(&mut t.params, &o.params, tau);
    }
    blend(&mut target.mlp.params, &online.mlp.params, tau);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Observation,
    /// 1..=8.
    pub action: u8,
    pub reward: f64,
    pub next: Observation,
}

/// Gradient of half the mean squared TD error over `batch`, plus the mean
/// squared TD error itself.
pub fn td_gradient(online: &QNet, target: &QNet, batch: &[&Transition], gamma: f64) -> Result<(Vec<f64>, f64)> {
    if batch.is_empty() {
        return Err(DqnError::EmptyBatch);
    }
    let mut grad = vec![0.0; online.param_count()];
    let mut sq = 0.0;
    let n = batch.len() as f64;
    for t in batch {
        let next_q = target.q_values(&t.next)?;
        let y = t.reward + gamma * next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let a = usize::from(t.action) - 1;
        let q = online.q_values(&t.state)?;
        let eta = y - q[a];
        sq += eta * eta;
        let mut g = [0.0; NUM_ACTIONS];
        g[a] = -eta / n;
        online.backward(&t.state, &g, &mut grad);
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(DqnError::NonFiniteGradient);
    }
    Ok((grad, sq / n))
}

/// One clipped SGD step on the TD loss. Returns the mean squared TD error
/// before the step.
pub fn td_update(online: &mut QNet, target: &QNet, batch: &[&Transition], cfg: &TrainConfig) -> Result<f64> {
    let (mut grad, loss) = td_gradient(online, target, batch, cfg.gamma)?;
    clip_grad_norm(&mut grad, cfg.grad_clip);
    let mut p = online.params();
    for (w, g) in p.iter_mut().zip(&grad) {
        *w -= cfg.lr * g;
    }
    online.set_params(&p)?;
    Ok(loss)
}

/// Predicts the reward of the next control interval from raw lane counts,
/// the current phase and the current Q vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionNet {
    pub mlp: Mlp,
    pub q_scale: f64,
    pub output_scale: f64,
}

pub const PRED_INPUT: usize = 48 + NUM_ACTIONS + NUM_ACTIONS;

impl PredictionNet {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![PRED_INPUT];
        sizes.extend(hidden);
        sizes.push(1);
        PredictionNet {
            mlp: Mlp::glorot(&sizes, rng),
            q_scale: 0.01,
            output_scale: 10.0,
        }
    }

    pub fn encode(&self, obs: &Observation, q_cur: &[f64; NUM_ACTIONS]) -> Vec<f64> {
        let mut x = Vec::with_capacity(PRED_INPUT);
        for m in [&obs.q, &obs.k] {
            for col in [WAITING, RUNNING] {
                x.extend(Observation::column(m, col).iter().map(|v| v * COUNT_SCALE));
            }
        }
        x.extend(obs.phase_one_hot());
        x.extend(q_cur.iter().map(|v| v * self.q_scale));
        x
    }

    pub fn predict(&self, obs: &Observation, q_cur: &[f64; NUM_ACTIONS]) -> Result<f64> {
        let y = self.mlp.forward(&self.encode(obs, q_cur))[0] * self.output_scale;
        if y.is_finite() {
            Ok(y)
        } else {
            Err(DqnError::NonFiniteActivation)
        }
    }

    /// Accumulate d(prediction)/d(params) scaled by `g` into `grad`; returns
    /// the prediction.
    pub fn backward(&self, obs: &Observation, q_cur: &[f64; NUM_ACTIONS], g: f64, grad: &mut [f64]) -> f64 {
        let cache = self.mlp.forward_cached(&self.encode(obs, q_cur));
        self.mlp.backward(&cache, &[g * self.output_scale], grad);
        cache.output()[0] * self.output_scale
    }

    /// One SGD step on `(pred - target)^2 / 2`. Returns the squared error
    /// before the step.
    pub fn train_step(&mut self, obs: &Observation, q_cur: &[f64; NUM_ACTIONS], target: f64, lr: f64, clip: f64) -> Result<f64> {
        let pred = self.predict(obs, q_cur)?;
        let err = pred - target;
        let mut grad = vec![0.0; self.mlp.params.len()];
        self.backward(obs, q_cur, err, &mut grad);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(DqnError::NonFiniteGradient);
        }
        clip_grad_norm(&mut grad, clip);
        for (w, g) in self.mlp.params.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        Ok(err * err)
    }
}

/// FIFO transition store plus the per-intersection reward history and
/// per-phase Q history consumed by the critique and tune layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    pub capacity: usize,
    pub history_cap: usize,
    pub transitions: VecDeque<Transition>,
    /// `rewards[intersection]`, oldest first.
    pub rewards: Vec<VecDeque<f64>>,
    /// `q_history[intersection][phase - 1]`, oldest first.
    pub q_history: Vec<Vec<VecDeque<f64>>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, history_cap: usize, intersections: usize) -> Self {
        ReplayBuffer {
            capacity,
            history_cap,
            transitions: VecDeque::with_capacity(capacity.min(1 << 16)),
            rewards: vec![VecDeque::new(); intersections],
            q_history: vec![vec![VecDeque::new(); NUM_ACTIONS]; intersections],
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.transitions.len() == self.capacity {
            self.transitions.pop_front();
        }
        self.transitions.push_back(t);
    }

    pub fn record_reward(&mut self, intersection: usize, r: f64) {
        let h = &mut self.rewards[intersection];
        if h.len() == self.history_cap {
            h.pop_front();
        }
        h.push_back(r);
    }

    pub fn record_q(&mut self, intersection: usize, q: &[f64; NUM_ACTIONS], cap: usize) {
        for (hist, v) in self.q_history[intersection].iter_mut().zip(q) {
            while hist.len() >= cap.max(1) {
                hist.pop_front();
            }
            hist.push_back(*v);
        }
    }

    /// Uniform sample without replacement (whole buffer if smaller).
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        let n = self.transitions.len();
        let k = batch.min(n);
        rand::seq::index::sample(rng, n, k)
            .into_iter()
            .map(|i| &self.transitions[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_obs(rng: &mut ChaCha8Rng) -> Observation {
        let mut q = [[[0.0; 3]; 3]; 4];
        let mut k = [[[0.0; 3]; 3]; 4];
        for m in [&mut q, &mut k] {
            for row in m.iter_mut().flatten() {
                let w = rng.random_range(0..15) as f64;
                let r = rng.random_range(0..15) as f64;
                *row = [w, r, w + r];
            }
        }
        Observation {
            q,
            k,
            phase: rng.random_range(1..=8),
            neighbor_queues: std::array::from_fn(|_| rng.random_range(0..60) as f64),
        }
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = TrainConfig::default();
        let mut net = QNet::new(Encoding::QueueLength, &cfg, &mut rng);
        net.mlp.params.iter_mut().for_each(|p| *p = 0.0);
        let off = net.mlp.bias_offset(net.mlp.sizes.len() - 2);
        for i in 0..8 {
            net.mlp.params[off + i] = i as f64 * 0.5;
        }
        let q = net.q_values(&random_obs(&mut rng)).unwrap();
        assert_eq!(q, std::array::from_fn(|i| i as f64 * 0.5));
    }

    #[test]
    fn shared_net_same_obs_same_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = QNet::new(Encoding::AdaptivePressure, &TrainConfig::default(), &mut rng);
        let obs = random_obs(&mut rng);
        assert_eq!(net.q_values(&obs).unwrap(), net.q_values(&obs.clone()).unwrap());
    }

    #[test]
    fn greedy_action_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = [1.0, 9.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(select_action(&q, 0.0, 1, &mut rng).phase, 2);
        let q = [0.0, 0.0, 5.0, 0.0, 5.0, 0.0, 0.0, 0.0];
        let a = select_action(&q, 0.0, 3, &mut rng);
        assert_eq!(a.phase, 3);
        assert!(!a.switched);
        let shifted: [f64; 8] = std::array::from_fn(|i| q[i] + 100.0);
        assert_eq!(select_action(&shifted, 0.0, 1, &mut rng).phase, 3);
    }

    #[test]
    fn exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = [0.0; 8];
        let n = 10_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            counts[usize::from(select_action(&q, 1.0, 1, &mut rng).phase) - 1] += 1;
        }
        let e = n as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - e).powi(2) / e).sum();
        // 99.9% quantile of chi-square with 7 dof.
        assert!(chi2 < 24.32, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn reward_examples() {
        let w = RewardWeights::default();
        assert_eq!(reward(0.0, 0.0, false, &w), 0.0);
        assert_eq!(reward(8.0, 0.0, true, &w), -2.5);
        assert!(reward(3.0, 2.0, false, &w) > reward(3.0, 2.0, true, &w));
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.epsilon(1), 1.0);
        assert!((cfg.epsilon(2) - 2f64.powf(-0.45)).abs() < 1e-15);
        assert_eq!(cfg.epsilon(200), 0.2);
    }

    #[test]
    fn soft_update_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = TrainConfig::default();
        let online = QNet::new(Encoding::AdaptivePressure, &cfg, &mut rng);
        let mut target = QNet::new(Encoding::AdaptivePressure, &cfg, &mut rng);
        let before = target.clone();
        soft_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target, before);
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target.params(), online.params());
        let plain = QNet::new(Encoding::QueueLength, &cfg, &mut rng);
        assert!(matches!(soft_update(&mut target, &plain, 0.5), Err(DqnError::ShapeMismatch(..))));
    }

    #[test]
    fn td_fixed_point_is_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cfg = TrainConfig::default();
        cfg.gamma = 1e-300;
        let mut net = QNet::new(Encoding::AdaptivePressure, &cfg, &mut rng);
        let s = random_obs(&mut rng);
        let q = net.q_values(&s).unwrap();
        let t = Transition {
            state: s.clone(),
            action: 4,
            reward: q[3],
            next: random_obs(&mut rng),
        };
        let target = net.clone();
        let before = net.params();
        let loss = td_update(&mut net, &target, &[&t], &cfg).unwrap();
        assert!(loss < 1e-20);
        let moved: f64 = net.params().iter().zip(&before).map(|(a, b)| (a - b).abs()).sum();
        assert!(moved < 1e-12);
    }

    #[test]
    fn bandit_converges_to_expected_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut cfg = TrainConfig::default();
        cfg.gamma = 1e-12;
        cfg.lr = 0.05;
        cfg.hidden = vec![8];
        let mut net = QNet::new(Encoding::QueueLength, &cfg, &mut rng);
        let s = random_obs(&mut rng);
        let batch: Vec<Transition> = (0..2u8)
            .map(|a| Transition {
                state: s.clone(),
                action: a + 1,
                reward: if a == 0 { 1.5 } else { -0.5 },
                next: s.clone(),
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let target = net.clone();
        for _ in 0..3000 {
            td_update(&mut net, &target, &refs, &cfg).unwrap();
        }
        let q = net.q_values(&s).unwrap();
        assert!((q[0] - 1.5).abs() < 1e-2 && (q[1] + 0.5).abs() < 1e-2, "{q:?}");
    }

    #[test]
    fn qnet_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut cfg = TrainConfig::default();
        cfg.hidden = vec![16, 16];
        cfg.heads = 2;
        cfg.d_k = 4;
        let net = QNet::new(Encoding::AdaptivePressure, &cfg, &mut rng);
        let obs = random_obs(&mut rng);
        let c: [f64; 8] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let mut grad = vec![0.0; net.param_count()];
        net.backward(&obs, &c, &mut grad);
        let base = net.params();
        let f = |p: &[f64]| {
            let mut n = net.clone();
            n.set_params(p).unwrap();
            n.q_values(&obs).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
        };
        for i in (0..base.len()).step_by(7) {
            let h = 1e-6;
            let mut a = base.clone();
            a[i] += h;
            let mut b = base.clone();
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-5);
            assert!(rel < 1e-4, "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn prediction_regresses_to_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = PredictionNet::new(&[64, 32], &mut rng);
        let data: Vec<(Observation, [f64; 8])> = (0..20)
            .map(|_| (random_obs(&mut rng), std::array::from_fn(|_| rng.random_range(-50.0..0.0))))
            .collect();
        for _ in 0..1500 {
            for (o, q) in &data {
                p.train_step(o, q, -3.0, 0.005, 10.0).unwrap();
            }
        }
        for (o, q) in &data {
            let y = p.predict(o, q).unwrap();
            assert!((y + 3.0).abs() < 1e-2, "{y}");
        }
    }

    #[test]
    fn replay_is_fifo() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut buf = ReplayBuffer::new(3, 2, 1);
        for i in 0..5 {
            let s = random_obs(&mut rng);
            buf.push(Transition {
                state: s.clone(),
                action: 1,
                reward: i as f64,
                next: s,
            });
            buf.record_reward(0, i as f64);
        }
        let r: Vec<f64> = buf.transitions.iter().map(|t| t.reward).collect();
        assert_eq!(r, vec![2.0, 3.0, 4.0]);
        assert_eq!(buf.rewards[0], VecDeque::from(vec![3.0, 4.0]));
        assert_eq!(buf.sample(10, &mut rng).len(), 3);
    }
}
