//! Minimum-posterior-risk phase selection.
//!
//! For each phase, a Gaussian KDE of its Q-value history is the prior, the
//! likelihood combines the current Q estimate with the history, and the
//! chosen phase is the one whose squared-loss posterior risk at its current
//! Q is smallest. Densities live on a per-phase uniform grid; products are
//! taken in log space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dqn::NUM_ACTIONS;

pub const MIN_GRID: usize = 256;
pub const MIN_BANDWIDTH: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TuneError {
    #[error("empty history")]
    EmptyHistory,
    #[error("bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("grids differ")]
    GridMismatch,
    #[error("likelihood is zero everywhere on the grid")]
    NumericalUnderflow,
    #[error("posterior has zero mass; prior used instead")]
    ZeroMass,
    #[error("invalid tune config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TuneError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// `1.06 * sd * T^(-1/5)`, floored at `MIN_BANDWIDTH`.
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub bandwidth: Bandwidth,
    /// Variance of the current-Q likelihood term.
    pub sigma2_cur: f64,
    pub grid_size: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            bandwidth: Bandwidth::Silverman,
            sigma2_cur: 0.25,
            grid_size: 2048,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(b) = self.bandwidth {
            if !(b > 0.0) {
                return Err(TuneError::NonPositiveBandwidth(b));
            }
        }
        if !(self.sigma2_cur > 0.0) || !self.sigma2_cur.is_finite() {
            return Err(TuneError::Config(format!("sigma2_cur must be positive, got {}", self.sigma2_cur)));
        }
        if self.grid_size < MIN_GRID {
            return Err(TuneError::Config(format!("grid_size must be >= {MIN_GRID}")));
        }
        Ok(())
    }

    pub fn bandwidth_for(&self, history: &[f64]) -> f64 {
        match self.bandwidth {
            Bandwidth::Silverman => silverman_bandwidth(history),
            Bandwidth::Fixed(b) => b,
        }
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
}

/// Silverman's rule with the sample standard deviation.
pub fn silverman_bandwidth(history: &[f64]) -> f64 {
    let n = history.len();
    if n < 2 {
        return MIN_BANDWIDTH;
    }
    let (_, v) = mean_var(history);
    let sd = (v * n as f64 / (n - 1) as f64).sqrt();
    (1.06 * sd * (n as f64).powf(-0.2)).max(MIN_BANDWIDTH)
}

/// Uniform grid `lo + i*dx`, `i < n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub dx: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        Grid {
            lo,
            dx: (hi - lo) / (n - 1) as f64,
            n,
        }
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.dx
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.point(i))
    }

    /// Grid spanning the history padded by three bandwidths.
    pub fn for_history(history: &[f64], bw: f64, n: usize) -> Self {
        let min = history.iter().copied().fold(f64::INFINITY, f64::min);
        let max = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Grid::new(min - 3.0 * bw, max + 3.0 * bw, n)
    }

    /// Trapezoid rule over values sampled on the grid.
    pub fn integrate(&self, f: impl Fn(usize) -> f64) -> f64 {
        let inner: f64 = (1..self.n - 1).map(&f).sum();
        self.dx * (inner + 0.5 * (f(0) + f(self.n - 1)))
    }
}

/// A density sampled on a grid; values integrate to 1 by trapezoid rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridDensity {
    fn normalized(grid: Grid, mut values: Vec<f64>) -> Option<Self> {
        let mass = grid.integrate(|i| values[i]);
        if !(mass > 0.0) || !mass.is_finite() {
            return None;
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Some(GridDensity { grid, values })
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(|i| self.values[i])
    }

    pub fn mean(&self) -> f64 {
        self.grid.integrate(|i| self.grid.point(i) * self.values[i])
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.grid.integrate(|i| (self.grid.point(i) - m).powi(2) * self.values[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeDensity {
    pub density: GridDensity,
    pub bandwidth: f64,
}

fn gauss(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Unnormalized-by-grid KDE value `(1/(T bw)) sum_t K((q - q_t)/bw)`.
pub fn kde_eval(history: &[f64], bw: f64, q: f64) -> f64 {
    let s: f64 = history.iter().map(|h| gauss((q - h) / bw)).sum();
    s / (history.len() as f64 * bw)
}

pub fn kde_prior(history: &[f64], bw: f64, grid_size: usize) -> Result<KdeDensity> {
    if history.is_empty() {
        return Err(TuneError::EmptyHistory);
    }
    if !(bw > 0.0) {
        return Err(TuneError::NonPositiveBandwidth(bw));
    }
    let grid = Grid::for_history(history, bw, grid_size.max(2));
    let values = grid.points().map(|q| kde_eval(history, bw, q)).collect();
    let density = GridDensity::normalized(grid, values).ok_or(TuneError::NumericalUnderflow)?;
    Ok(KdeDensity {
        density,
        bandwidth: bw,
    })
}

/// Log of `N(q; q_cur, s2_cur) * prod_t N(q; q_t, bw^2)` up to a constant in
/// `q`, on every grid point.
///
/// The product is evaluated through centered sufficient statistics:
/// `sum_t (q - q_t)^2 = T (q - mean)^2 + sum_t (q_t - mean)^2`.
pub fn log_likelihood(grid: &Grid, q_cur: f64, history: &[f64], bw: f64, sigma2_cur: f64) -> Vec<f64> {
    let t = history.len() as f64;
    let (m, _) = if history.is_empty() {
        (0.0, 0.0)
    } else {
        mean_var(history)
    };
    grid.points()
        .map(|q| {
            let cur = -0.5 * (q - q_cur).powi(2) / sigma2_cur;
            let hist = if history.is_empty() {
                0.0
            } else {
                -0.5 * t * (q - m).powi(2) / (bw * bw)
            };
            cur + hist
        })
        .collect()
}

/// Likelihood exponentiated after shifting its maximum to zero.
pub fn likelihood(grid: &Grid, q_cur: f64, history: &[f64], bw: f64, sigma2_cur: f64) -> Result<Vec<f64>> {
    shift_exp(log_likelihood(grid, q_cur, history, bw, sigma2_cur))
}

fn shift_exp(mut logs: Vec<f64>) -> Result<Vec<f64>> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(TuneError::NumericalUnderflow);
    }
    logs.iter_mut().for_each(|v| *v = (*v - max).exp());
    Ok(logs)
}

/// Posterior from a prior and log-likelihood on the same grid. Falls back to
/// the prior (flagged) when the product has no mass.
pub fn posterior(prior: &GridDensity, log_lik: &[f64]) -> Result<(GridDensity, bool)> {
    if log_lik.len() != prior.values.len() {
        return Err(TuneError::GridMismatch);
    }
    let logs: Vec<f64> = prior.values.iter().zip(log_lik).map(|(p, l)| p.ln() + l).collect();
    let post = shift_exp(logs)
        .ok()
        .and_then(|v| GridDensity::normalized(prior.grid, v));
    Ok(match post {
        Some(p) => (p, false),
        None => (prior.clone(), true),
    })
}

/// Squared-loss posterior risk of acting on `q_cur`.
pub fn posterior_risk(post: &GridDensity, q_cur: f64) -> f64 {
    post.grid.integrate(|i| (q_cur - post.grid.point(i)).powi(2) * post.values[i])
}

/// Grid point with the smallest posterior risk (lowest index on ties).
pub fn bayes_action(post: &GridDensity) -> f64 {
    let mut best = (f64::INFINITY, post.grid.point(0));
    for q in post.grid.points() {
        let r = posterior_risk(post, q);
        if r < best.0 {
            best = (r, q);
        }
    }
    best.1
}

/// Full pipeline for one phase: KDE prior, likelihood, posterior, risk.
pub fn phase_risk(q_cur: f64, history: &[f64], cfg: &TuneConfig) -> Result<(f64, bool)> {
    let bw = cfg.bandwidth_for(history);
    let prior = kde_prior(history, bw, cfg.grid_size)?;
    let ll = log_likelihood(&prior.density.grid, q_cur, history, bw, cfg.sigma2_cur);
    let (post, fell_back) = posterior(&prior.density, &ll)?;
    Ok((posterior_risk(&post, q_cur), fell_back))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneDecision {
    pub risks: [f64; NUM_ACTIONS],
    /// Phase number 1..=8.
    pub chosen: u8,
    /// Phases whose posterior fell back to the prior.
    pub zero_mass: Vec<u8>,
    /// Phases scored from pooled history because their own was empty.
    pub pooled: Vec<u8>,
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Choose the minimum-risk phase. Returns `None` when every history is empty.
pub fn tune<H: AsRef<[f64]>>(q_cur: &[f64; NUM_ACTIONS], history: &[H], cfg: &TuneConfig) -> Result<Option<TuneDecision>> {
    cfg.validate()?;
    if history.len() != NUM_ACTIONS {
        return Err(TuneError::Config(format!("need {NUM_ACTIONS} histories, got {}", history.len())));
    }
    let pooled: Vec<f64> = history.iter().flat_map(|h| h.as_ref().iter().copied()).collect();
    if pooled.is_empty() {
        return Ok(None);
    }
    let (pm, pv) = mean_var(&pooled);
    let mut risks = [0.0; NUM_ACTIONS];
    let mut zero_mass = Vec::new();
    let mut pooled_phases = Vec::new();
    for j in 0..NUM_ACTIONS {
        let h = history[j].as_ref();
        risks[j] = if h.is_empty() {
            pooled_phases.push(j as u8 + 1);
            (q_cur[j] - pm).powi(2) + pv
        } else {
            let (r, fell_back) = phase_risk(q_cur[j], h, cfg)?;
            if fell_back {
                zero_mass.push(j as u8 + 1);
            }
            r
        };
    }
    Ok(Some(TuneDecision {
        chosen: argmin(&risks) as u8 + 1,
        risks,
        zero_mass,
        pooled: pooled_phases,
    }))
}
