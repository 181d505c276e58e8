//! Bayesian time-series critic for predicted rewards.
//!
//! The critic fits a SARIMA model to a window of realized rewards, samples
//! its posterior and rejects a predicted reward that falls outside the 95%
//! posterior-predictive interval.

pub mod adf;
pub mod diff;
pub mod interval;
pub mod prior;
pub mod sampler;
pub mod sarima;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use interval::{critique, CredibleInterval, Verdict};
use prior::PriorSpec;
use sampler::{sample_posterior, OnlineForecaster, SamplerConfig};
use sarima::{select_order, OrderSearch, SarimaOrder};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CritiqueError {
    #[error("series too short: need {needed}, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("fit failed: {0}")]
    FitFailure(String),
    #[error("every candidate order failed to fit")]
    AllCandidatesFailed,
    #[error("sampler acceptance rates out of range: {0:?}")]
    NonConvergence(Vec<f64>),
    #[error("too few forecast samples: {0}")]
    TooFewSamples(usize),
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, CritiqueError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CritiqueConfig {
    /// Rewards needed before the critic is fitted.
    pub min_history: usize,
    /// Most recent rewards used in a fit.
    pub window: usize,
    /// Seasonal period; 0 or 1 disables the seasonal part.
    pub season: usize,
    pub search: OrderSearch,
    pub sampler: SamplerConfig,
    pub horizon: usize,
    /// Laplace scale of every AR/MA coefficient prior.
    pub coef_prior_scale: f64,
    /// Inverse-gamma shape of the innovation-variance prior; its scale is
    /// the CSS residual variance.
    pub sigma2_prior_shape: f64,
}

impl Default for CritiqueConfig {
    fn default() -> Self {
        CritiqueConfig {
            min_history: 60,
            window: 240,
            season: 0,
            search: OrderSearch::default(),
            sampler: SamplerConfig::default(),
            horizon: 1,
            coef_prior_scale: 0.5,
            sigma2_prior_shape: 2.0,
        }
    }
}

impl CritiqueConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_history < adf::MIN_LENGTH || self.window < self.min_history {
            return Err(CritiqueError::Argument(format!(
                "need {} <= min_history <= window, got {} and {}",
                adf::MIN_LENGTH,
                self.min_history,
                self.window
            )));
        }
        if !(self.coef_prior_scale > 0.0 && self.sigma2_prior_shape > 0.0) {
            return Err(CritiqueError::Argument("prior scale and shape must be positive".into()));
        }
        if self.sampler.draws < interval::MIN_SAMPLES || self.horizon == 0 {
            return Err(CritiqueError::Argument("draws or horizon too small".into()));
        }
        Ok(())
    }
}

/// Diagnostics from one critic fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub history: usize,
    pub order: Option<SarimaOrder>,
    pub bic: Option<f64>,
    pub acceptance: Vec<f64>,
    pub warning: Option<String>,
    pub state: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CriticState {
    /// Not enough history yet; everything is accepted.
    WarmUp,
    /// History cannot be modeled (constant or no order fits); everything is
    /// accepted.
    Degenerate,
    Ready(Box<OnlineForecaster>),
}

impl CriticState {
    /// Fit on the trailing `cfg.window` values of `history`.
    pub fn fit<R: Rng + ?Sized>(history: &[f64], cfg: &CritiqueConfig, rng: &mut R) -> (Self, FitReport) {
        let mut report = FitReport {
            history: history.len(),
            order: None,
            bic: None,
            acceptance: Vec::new(),
            warning: None,
            state: "warmup".into(),
        };
        if history.len() < cfg.min_history {
            return (CriticState::WarmUp, report);
        }
        let series = &history[history.len().saturating_sub(cfg.window)..];
        match fit_ready(series, cfg, rng, &mut report) {
            Ok(f) => {
                report.state = "ready".into();
                (CriticState::Ready(Box::new(f)), report)
            }
            Err(e) => {
                log::debug!("critic degenerate: {e}");
                report.warning = Some(e.to_string());
                match e {
                    CritiqueError::SeriesTooShort { .. } => (CriticState::WarmUp, report),
                    _ => {
                        report.state = "degenerate".into();
                        (CriticState::Degenerate, report)
                    }
                }
            }
        }
    }

    pub fn is_ready(&self) -> bool {
        matches!(self, CriticState::Ready(_))
    }

    /// Feed a realized reward into the forecaster.
    pub fn observe(&mut self, value: f64) {
        if let CriticState::Ready(f) = self {
            f.observe(value);
        }
    }

    pub fn interval<R: Rng + ?Sized>(&self, h: usize, rng: &mut R) -> Option<CredibleInterval> {
        match self {
            CriticState::Ready(f) => f.interval(h, rng).ok(),
            _ => None,
        }
    }

    /// Accept or reject a predicted reward `h` steps ahead.
    pub fn assess<R: Rng + ?Sized>(&self, prediction: f64, h: usize, rng: &mut R) -> Verdict {
        match self.interval(h, rng) {
            Some(ci) => critique(prediction, &ci),
            None => Verdict::Accept,
        }
    }
}

fn fit_ready<R: Rng + ?Sized>(
    series: &[f64],
    cfg: &CritiqueConfig,
    rng: &mut R,
    report: &mut FitReport,
) -> Result<OnlineForecaster> {
    let sel = select_order(series, cfg.season, &cfg.search)?;
    report.order = Some(sel.fit.order);
    report.bic = Some(sel.fit.bic);
    let mut priors = PriorSpec::default_for(&sel.w, sel.fit.params.sigma2);
    let coef = prior::Laplace {
        loc: 0.0,
        scale: cfg.coef_prior_scale,
    };
    priors.ar = coef;
    priors.ma = coef;
    priors.seasonal_ar = coef;
    priors.seasonal_ma = coef;
    priors.sigma2.shape = cfg.sigma2_prior_shape;
    let post = sample_posterior(
        &sel.w,
        &sel.fit.order,
        sel.fit.start,
        &priors,
        &sel.fit.params,
        &cfg.sampler,
        rng,
    )?;
    report.acceptance = post.acceptance.clone();
    if let Some(w) = post.convergence_warning() {
        log::warn!("{w}");
        report.warning = Some(w.to_string());
    }
    OnlineForecaster::new(series, &post, sel.fit.start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn quick() -> CritiqueConfig {
        CritiqueConfig {
            search: OrderSearch {
                max_p: 1,
                max_q: 1,
                ..Default::default()
            },
            sampler: SamplerConfig {
                draws: 500,
                burn_in: 300,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn warm_up_and_constant_accept_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, _) = CriticState::fit(&[1.0; 10], &quick(), &mut rng);
        assert_eq!(s, CriticState::WarmUp);
        assert_eq!(s.assess(1e9, 1, &mut rng), Verdict::Accept);
        let (s, r) = CriticState::fit(&[3.0; 100], &quick(), &mut rng);
        assert_eq!(s, CriticState::Degenerate);
        assert_eq!(r.state, "degenerate");
        assert_eq!(s.assess(-1e9, 1, &mut rng), Verdict::Accept);
    }

    #[test]
    fn ready_critic_rejects_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..150)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                e - 5.0
            })
            .collect();
        let (mut s, r) = CriticState::fit(&x, &quick(), &mut rng);
        assert!(s.is_ready(), "{r:?}");
        assert_eq!(s.assess(-5.0, 1, &mut rng), Verdict::Accept);
        assert_eq!(s.assess(10.0, 1, &mut rng), Verdict::Reject);
        s.observe(-4.0);
        assert_eq!(s.assess(-30.0, 1, &mut rng), Verdict::Reject);
    }

    #[test]
    fn config_validation() {
        assert!(CritiqueConfig::default().validate().is_ok());
        let bad = CritiqueConfig {
            window: 10,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
