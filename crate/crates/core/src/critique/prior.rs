//! Priors on the SARIMA parameters.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use super::sarima::SarimaParams;
use super::{CritiqueError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncatedNormal {
    /// Log density up to the truncation normalizer; `-inf` outside `[lo, hi]`.
    pub fn log_pdf(&self, x: f64) -> f64 {
        if !(self.lo..=self.hi).contains(&x) {
            return f64::NEG_INFINITY;
        }
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z - self.sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n = Normal::new(self.mean, self.sd).expect("sd > 0");
        let (a, b) = (n.cdf(self.lo), n.cdf(self.hi));
        let u = a + (b - a) * rng.random::<f64>();
        n.inverse_cdf(u.clamp(1e-300, 1.0 - 1e-16)).clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Laplace {
    pub loc: f64,
    pub scale: f64,
}

impl Laplace {
    pub fn log_pdf(&self, x: f64) -> f64 {
        -(2.0 * self.scale).ln() - (x - self.loc).abs() / self.scale
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>() - 0.5;
        self.loc - self.scale * u.signum() * (1.0 - 2.0 * u.abs()).max(1e-300).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGamma {
    pub fn log_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.scale.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln() - self.scale / x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.shape, 1.0).expect("shape > 0").sample(rng);
        self.scale / g.max(1e-300)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Prior on the level of the differenced series.
    pub level: TruncatedNormal,
    pub ar: Laplace,
    pub ma: Laplace,
    pub seasonal_ar: Laplace,
    pub seasonal_ma: Laplace,
    pub sigma2: InverseGamma,
}

impl PriorSpec {
    /// Weakly informative defaults scaled to the differenced series `w`.
    pub fn default_for(w: &[f64], residual_variance: f64) -> Self {
        let n = w.len().max(1) as f64;
        let mean = w.iter().sum::<f64>() / n;
        let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-6);
        let min = w.iter().copied().fold(f64::INFINITY, f64::min);
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let coef = Laplace {
            loc: 0.0,
            scale: 0.5,
        };
        PriorSpec {
            level: TruncatedNormal {
                mean,
                sd: 2.0 * sd,
                lo: min - 3.0 * sd,
                hi: max + 3.0 * sd,
            },
            ar: coef,
            ma: coef,
            seasonal_ar: coef,
            seasonal_ma: coef,
            sigma2: InverseGamma {
                shape: 2.0,
                scale: residual_variance.max(1e-12),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.level;
        let ok = l.sd > 0.0
            && l.lo < l.hi
            && [self.ar, self.ma, self.seasonal_ar, self.seasonal_ma]
                .iter()
                .all(|p| p.scale > 0.0)
            && self.sigma2.shape > 0.0
            && self.sigma2.scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CritiqueError::Argument(format!("invalid prior {self:?}")))
        }
    }

    /// Log prior of level and coefficients. The support is restricted to the
    /// stationary and invertible region.
    pub fn log_density_coefs(&self, p: &SarimaParams) -> f64 {
        if !p.admissible() {
            return f64::NEG_INFINITY;
        }
        self.level.log_pdf(p.mu)
            + p.phi.iter().map(|v| self.ar.log_pdf(*v)).sum::<f64>()
            + p.theta.iter().map(|v| self.ma.log_pdf(*v)).sum::<f64>()
            + p.sphi.iter().map(|v| self.seasonal_ar.log_pdf(*v)).sum::<f64>()
            + p.stheta.iter().map(|v| self.seasonal_ma.log_pdf(*v)).sum::<f64>()
    }
}
