//! Efficient pressure and attention-weighted adaptive pressure.
//!
//! Lane matrices have one 3x3 layer per exit side `d`. Row `k` of the
//! downstream layer is lane `k` of the road leaving toward `d`; row `k` of the
//! upstream layer is the upstream lane of kind `k` whose turn leads to `d`.
//! Columns are (waiting, running, total).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{feeder, Direction, LaneKind};
use crate::simcore::RawObservation;

#[derive(Debug, Error, PartialEq)]
pub enum PressureError {
    #[error("empty lane set")]
    EmptyLaneSet,
    #[error("attention parameters are not finite")]
    NonFiniteParams,
    #[error("weight row sums to {0}, expected 1")]
    WeightRowNotStochastic(f64),
    #[error("length mismatch: {0} values vs {1} weights")]
    LengthMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, PressureError>;

/// `[layer][row][column]` with layers indexed by [`Direction::index`].
pub type LaneMatrix = [[[f64; 3]; 3]; 4];

/// Row-stochastic `[layer][upstream row][downstream column]` weights.
pub type AttentionWeights = [[[f64; 3]; 3]; 4];

pub const WAITING: usize = 0;
pub const RUNNING: usize = 1;
pub const TOTAL: usize = 2;

/// Upstream lane of each (layer, row) slot as (approach, kind).
pub fn upstream_slot(layer: Direction, row: usize) -> (Direction, LaneKind) {
    let kind = LaneKind::from_index(row).expect("row < 3");
    (feeder(layer, kind), kind)
}

/// Build the upstream (Q) and downstream (K) lane matrices.
pub fn lane_matrices(obs: &RawObservation) -> (LaneMatrix, LaneMatrix) {
    let mut q = [[[0.0; 3]; 3]; 4];
    let mut k = [[[0.0; 3]; 3]; 4];
    for d in Direction::ALL {
        for row in 0..3 {
            let (approach, kind) = upstream_slot(d, row);
            let up = obs.upstream[approach.index()][kind.index()];
            q[d.index()][row] = [up.waiting as f64, up.running as f64, up.total() as f64];
            let down = obs.downstream[d.index()][row];
            k[d.index()][row] = [
                down.waiting as f64,
                down.running as f64,
                down.total() as f64,
            ];
        }
    }
    (q, k)
}

/// Mean upstream queue minus mean downstream queue.
pub fn efficient_pressure(up: &[f64], down: &[f64]) -> Result<f64> {
    if up.is_empty() || down.is_empty() {
        return Err(PressureError::EmptyLaneSet);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(up) - mean(down))
}

/// `x_up - sum_j w_j x_down[j]`. Equal weights take the plain mean so the
/// uniform case agrees bit for bit with [`efficient_pressure`].
pub fn adaptive_pressure(x_up: f64, x_down: &[f64], weights: &[f64]) -> Result<f64> {
    if x_down.is_empty() {
        return Err(PressureError::EmptyLaneSet);
    }
    if x_down.len() != weights.len() {
        return Err(PressureError::LengthMismatch(x_down.len(), weights.len()));
    }
    let sum: f64 = weights.iter().sum();
    if !((sum - 1.0).abs() <= 1e-9) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(PressureError::WeightRowNotStochastic(sum));
    }
    if weights.iter().all(|w| *w == weights[0]) {
        return Ok(x_up - x_down.iter().sum::<f64>() / x_down.len() as f64);
    }
    Ok(x_up - weights.iter().zip(x_down).map(|(w, x)| w * x).sum::<f64>())
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Multi-head scaled dot-product attention parameters, stored flat.
///
/// Per head: `wq` (d_k x 3), `bq` (d_k), `wk` (d_k x 3), `bk` (d_k). Then one
/// mixing logit per head; head outputs are combined with softmax(mix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub heads: usize,
    pub d_k: usize,
    /// Multiplier applied to raw lane counts before projection.
    pub feature_scale: f64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct HeadLayout {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
}

impl AttentionParams {
    pub fn param_count(heads: usize, d_k: usize) -> usize {
        heads * (2 * (3 * d_k + d_k)) + heads
    }

    pub fn zeros(heads: usize, d_k: usize, feature_scale: f64) -> Self {
        assert!(heads >= 1 && d_k >= 1, "heads and d_k must be positive");
        AttentionParams {
            heads,
            d_k,
            feature_scale,
            params: vec![0.0; Self::param_count(heads, d_k)],
        }
    }

    /// Projections drawn from N(0, 1/3), biases and mixing logits zero.
    pub fn random<R: Rng + ?Sized>(heads: usize, d_k: usize, feature_scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(heads, d_k, feature_scale);
        let normal = Normal::new(0.0, (1.0f64 / 3.0).sqrt()).expect("valid normal");
        for h in 0..heads {
            let l = p.layout(h);
            for i in 0..3 * d_k {
                p.params[l.wq + i] = normal.sample(rng);
                p.params[l.wk + i] = normal.sample(rng);
            }
        }
        p
    }

    fn layout(&self, h: usize) -> HeadLayout {
        let per = 2 * (3 * self.d_k + self.d_k);
        let base = h * per;
        HeadLayout {
            wq: base,
            bq: base + 3 * self.d_k,
            wk: base + 4 * self.d_k,
            bk: base + 7 * self.d_k,
        }
    }

    fn mix_offset(&self) -> usize {
        self.heads * 2 * (3 * self.d_k + self.d_k)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite()) && self.feature_scale.is_finite()
    }

    fn head_mix(&self) -> Vec<f64> {
        let off = self.mix_offset();
        let mut pi = self.params[off..off + self.heads].to_vec();
        softmax_in_place(&mut pi);
        pi
    }

    fn project(&self, w: usize, b: usize, row: &[f64; 3]) -> Vec<f64> {
        let s = self.feature_scale;
        (0..self.d_k)
            .map(|r| {
                let p = &self.params;
                p[b + r]
                    + p[w + 3 * r] * s * row[0]
                    + p[w + 3 * r + 1] * s * row[1]
                    + p[w + 3 * r + 2] * s * row[2]
            })
            .collect()
    }
}

/// Forward intermediates for one layer, kept for the backward pass.
struct LayerCache {
    queries: Vec<[Vec<f64>; 3]>,
    keys: Vec<[Vec<f64>; 3]>,
    /// Per head row-softmax scores.
    attn: Vec<[[f64; 3]; 3]>,
}

fn layer_forward(p: &AttentionParams, q: &[[f64; 3]; 3], k: &[[f64; 3]; 3], pi: &[f64]) -> ([[f64; 3]; 3], LayerCache) {
    let inv = 1.0 / (p.d_k as f64).sqrt();
    let mut omega = [[0.0; 3]; 3];
    let mut cache = LayerCache {
        queries: Vec::with_capacity(p.heads),
        keys: Vec::with_capacity(p.heads),
        attn: Vec::with_capacity(p.heads),
    };
    for h in 0..p.heads {
        let l = p.layout(h);
        let qs: [Vec<f64>; 3] = std::array::from_fn(|r| p.project(l.wq, l.bq, &q[r]));
        let ks: [Vec<f64>; 3] = std::array::from_fn(|r| p.project(l.wk, l.bk, &k[r]));
        let mut a = [[0.0; 3]; 3];
        for row in 0..3 {
            for col in 0..3 {
                a[row][col] = qs[row].iter().zip(&ks[col]).map(|(x, y)| x * y).sum::<f64>() * inv;
            }
            softmax_in_place(&mut a[row]);
            for col in 0..3 {
                omega[row][col] += pi[h] * a[row][col];
            }
        }
        cache.queries.push(qs);
        cache.keys.push(ks);
        cache.attn.push(a);
    }
    (omega, cache)
}

pub fn attention_weights(p: &AttentionParams, q: &LaneMatrix, k: &LaneMatrix) -> Result<AttentionWeights> {
    if !p.is_finite() {
        return Err(PressureError::NonFiniteParams);
    }
    let pi = p.head_mix();
    let mut w = [[[0.0; 3]; 3]; 4];
    for d in 0..4 {
        w[d] = layer_forward(p, &q[d], &k[d], &pi).0;
    }
    Ok(w)
}

/// Adaptive pressure for all 12 upstream lanes, ordered `[layer][row]`.
pub fn ap_values(w: &AttentionWeights, q: &LaneMatrix, k: &LaneMatrix) -> [f64; 12] {
    let mut out = [0.0; 12];
    for d in 0..4 {
        let down = [k[d][0][WAITING], k[d][1][WAITING], k[d][2][WAITING]];
        for row in 0..3 {
            out[3 * d + row] = adaptive_pressure(q[d][row][WAITING], &down, &w[d][row])
                .expect("attention rows are stochastic");
        }
    }
    out
}

/// Per-lane pressure with uniform downstream weights.
pub fn ep_values(q: &LaneMatrix, k: &LaneMatrix) -> [f64; 12] {
    let mut out = [0.0; 12];
    for d in 0..4 {
        let down = [k[d][0][WAITING], k[d][1][WAITING], k[d][2][WAITING]];
        for row in 0..3 {
            out[3 * d + row] = efficient_pressure(&[q[d][row][WAITING]], &down).expect("nonempty");
        }
    }
    out
}

/// AP values plus the gradient of `sum_i grad_ap[i] * ap[i]` with respect to
/// the flat attention parameters, accumulated into `grad`.
pub fn ap_backward(p: &AttentionParams, q: &LaneMatrix, k: &LaneMatrix, grad_ap: &[f64; 12], grad: &mut [f64]) {
    assert_eq!(grad.len(), p.params.len());
    let pi = p.head_mix();
    let inv = 1.0 / (p.d_k as f64).sqrt();
    let s = p.feature_scale;
    let mut d_pi = vec![0.0; p.heads];
    for d in 0..4 {
        let (_, cache) = layer_forward(p, &q[d], &k[d], &pi);
        let y = [k[d][0][WAITING], k[d][1][WAITING], k[d][2][WAITING]];
        let mut d_omega = [[0.0; 3]; 3];
        for row in 0..3 {
            for col in 0..3 {
                d_omega[row][col] = -grad_ap[3 * d + row] * y[col];
            }
        }
        for h in 0..p.heads {
            let l = p.layout(h);
            let a = &cache.attn[h];
            let mut d_score = [[0.0; 3]; 3];
            for row in 0..3 {
                let mut dot = 0.0;
                for col in 0..3 {
                    d_pi[h] += d_omega[row][col] * a[row][col];
                    dot += a[row][col] * pi[h] * d_omega[row][col];
                }
                for col in 0..3 {
                    d_score[row][col] = a[row][col] * (pi[h] * d_omega[row][col] - dot) * inv;
                }
            }
            let qs = &cache.queries[h];
            let ks = &cache.keys[h];
            for row in 0..3 {
                for r in 0..p.d_k {
                    let mut dq = 0.0;
                    let mut dk = 0.0;
                    for col in 0..3 {
                        dq += d_score[row][col] * ks[col][r];
                        // Key row `row` collects from every query row.
                        dk += d_score[col][row] * qs[col][r];
                    }
                    grad[l.bq + r] += dq;
                    grad[l.bk + r] += dk;
                    for c in 0..3 {
                        grad[l.wq + 3 * r + c] += dq * s * q[d][row][c];
                        grad[l.wk + 3 * r + c] += dk * s * k[d][row][c];
                    }
                }
            }
        }
    }
    let dot: f64 = pi.iter().zip(&d_pi).map(|(a, b)| a * b).sum();
    let off = p.mix_offset();
    for h in 0..p.heads {
        grad[off + h] += pi[h] * (d_pi[h] - dot);
    }
}
