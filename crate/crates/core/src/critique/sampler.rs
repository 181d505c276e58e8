//! Posterior sampling for SARIMA parameters and posterior-predictive
//! forecasting.
//!
//! Level and coefficients are updated one at a time by random-walk
//! Metropolis with proposal scales tuned during burn-in; the innovation
//! variance has a conjugate inverse-gamma full conditional and is drawn
//! exactly.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::diff::{difference, difference_polynomial, integrate_next};
use super::interval::{credible_interval, CredibleInterval};
use super::prior::{InverseGamma, PriorSpec};
use super::sarima::{expand, fit_css, residuals, LagPolys, SarimaOrder, SarimaParams};
use super::{CritiqueError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Kept draws.
    pub draws: usize,
    pub burn_in: usize,
    pub target_accept: f64,
    /// Iterations between proposal-scale adjustments during burn-in.
    pub adapt_interval: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            draws: 2000,
            burn_in: 1000,
            target_accept: 0.44,
            adapt_interval: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub order: SarimaOrder,
    pub draws: Vec<SarimaParams>,
    /// Post-burn-in acceptance rate per Metropolis coordinate.
    pub acceptance: Vec<f64>,
}

impl Posterior {
    /// Acceptance rates outside [0.1, 0.6] after adaptation.
    pub fn convergence_warning(&self) -> Option<CritiqueError> {
        if self.acceptance.iter().all(|r| (0.1..=0.6).contains(r)) {
            None
        } else {
            Some(CritiqueError::NonConvergence(self.acceptance.clone()))
        }
    }

    pub fn mean_coefficients(&self) -> Vec<f64> {
        let n = self.draws.len() as f64;
        let dim = self.draws.first().map_or(0, |d| d.to_vec().len());
        let mut m = vec![0.0; dim];
        for d in &self.draws {
            for (a, b) in m.iter_mut().zip(d.to_vec()) {
                *a += b / n;
            }
        }
        m
    }
}

/// Draw from the posterior of `order` on the differenced series `w`, with
/// residuals conditioned from index `start`.
pub fn sample_posterior<R: Rng + ?Sized>(
    w: &[f64],
    order: &SarimaOrder,
    start: usize,
    priors: &PriorSpec,
    init: &SarimaParams,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Posterior> {
    priors.validate()?;
    let start = start.max(order.max_ar_lag());
    if w.len() <= start + 1 {
        return Err(CritiqueError::SeriesTooShort {
            needed: start + 2,
            got: w.len(),
        });
    }
    let n_eff = (w.len() - start) as f64;
    let mut x = init.to_vec();
    let mut cur = SarimaParams::from_vec(order, &x, init.sigma2.max(1e-12));
    if !priors.log_density_coefs(&cur).is_finite() {
        // Start from the prior center if the point estimate is outside support.
        x.iter_mut().skip(1).for_each(|v| *v = 0.0);
        x[0] = priors.level.mean.clamp(priors.level.lo, priors.level.hi);
        cur = SarimaParams::from_vec(order, &x, cur.sigma2);
    }
    let mut sigma2 = cur.sigma2;
    let mut ss = residuals(w, cur.mu, &expand(order, &cur), start).1;
    let mut log_prior = priors.log_density_coefs(&cur);

    let dim = x.len();
    let scale0 = (sigma2 / n_eff).sqrt();
    let mut step: Vec<f64> = (0..dim)
        .map(|i| if i == 0 { 2.0 * scale0 } else { 2.0 / n_eff.sqrt() })
        .collect();
    let mut accepted = vec![0usize; dim];
    let mut window_acc = vec![0usize; dim];
    let mut draws = Vec::with_capacity(cfg.draws);
    let total = cfg.burn_in + cfg.draws;
    let post_ig = |ss: f64| InverseGamma {
        shape: priors.sigma2.shape + 0.5 * n_eff,
        scale: priors.sigma2.scale + 0.5 * ss,
    };

    for it in 0..total {
        for i in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            let old = x[i];
            x[i] = old + step[i] * z;
            let prop = SarimaParams::from_vec(order, &x, sigma2);
            let lp = priors.log_density_coefs(&prop);
            let mut ok = false;
            if lp.is_finite() {
                let ss_new = residuals(w, prop.mu, &expand(order, &prop), start).1;
                let log_ratio = (lp - log_prior) - (ss_new - ss) / (2.0 * sigma2);
                if ss_new.is_finite() && rng.random::<f64>().ln() < log_ratio {
                    ss = ss_new;
                    log_prior = lp;
                    ok = true;
                }
            }
            if ok {
                window_acc[i] += 1;
                if it >= cfg.burn_in {
                    accepted[i] += 1;
                }
            } else {
                x[i] = old;
            }
        }
        sigma2 = post_ig(ss).sample(rng).max(1e-300);

        if it < cfg.burn_in && (it + 1) % cfg.adapt_interval.max(1) == 0 {
            for i in 0..dim {
                let rate = window_acc[i] as f64 / cfg.adapt_interval as f64;
                step[i] *= ((rate - cfg.target_accept) * 2.0).exp();
                window_acc[i] = 0;
            }
        }
        if it >= cfg.burn_in {
            draws.push(SarimaParams::from_vec(order, &x, sigma2));
        }
    }
    let acceptance = accepted
        .iter()
        .map(|a| *a as f64 / cfg.draws.max(1) as f64)
        .collect();
    Ok(Posterior {
        order: *order,
        draws,
        acceptance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DrawState {
    mu: f64,
    sigma: f64,
    ar: Vec<(usize, f64)>,
    ma: Vec<(usize, f64)>,
    /// Recent residuals, oldest first.
    e: Vec<f64>,
}

/// Posterior-predictive forecaster that advances every draw's residual
/// recursion one observation at a time, so forecasts stay current without
/// refitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineForecaster {
    pub order: SarimaOrder,
    diff_poly: Vec<f64>,
    /// Recent original observations, oldest first.
    r: Vec<f64>,
    /// Recent differenced observations, oldest first.
    w: Vec<f64>,
    draws: Vec<DrawState>,
    keep_r: usize,
    keep_w: usize,
    keep_e: usize,
}

fn trim(v: &mut Vec<f64>, keep: usize) {
    if v.len() > 2 * keep.max(1) {
        let cut = v.len() - keep;
        v.drain(..cut);
    }
}

impl OnlineForecaster {
    /// `series` is the original (undifferenced) history the posterior was
    /// fitted on; its differenced form must have at least `start` points.
    pub fn new(series: &[f64], posterior: &Posterior, start: usize) -> Result<Self> {
        let order = posterior.order;
        let w = difference(series, order.d, order.s, order.sd)?;
        let start = start.max(order.max_ar_lag());
        if w.len() <= start {
            return Err(CritiqueError::SeriesTooShort {
                needed: start + 1,
                got: w.len(),
            });
        }
        let keep_e = order.max_ma_lag();
        let draws = posterior
            .draws
            .iter()
            .map(|p| {
                let polys: LagPolys = expand(&order, p);
                let (e, _) = residuals(&w, p.mu, &polys, start);
                let tail = e[e.len().saturating_sub(keep_e)..].to_vec();
                DrawState {
                    mu: p.mu,
                    sigma: p.sigma2.sqrt(),
                    ar: polys.ar,
                    ma: polys.ma,
                    e: tail,
                }
            })
            .collect();
        let keep_r = order.d + order.sd * order.s;
        let keep_w = order.max_ar_lag();
        Ok(OnlineForecaster {
            order,
            diff_poly: difference_polynomial(order.d, order.s, order.sd),
            r: series[series.len() - keep_r..].to_vec(),
            w: w[w.len() - keep_w..].to_vec(),
            draws,
            keep_r,
            keep_w,
            keep_e,
        })
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    /// Advance all draws with a newly observed value.
    pub fn observe(&mut self, value: f64) {
        // Differenced value: r_t minus the polynomial terms on past r.
        let w_t = value - (integrate_next(0.0, &self.r, &self.diff_poly));
        for d in &mut self.draws {
            let mut v = w_t - d.mu;
            for &(l, a) in &d.ar {
                v -= a * (self.w[self.w.len() - l] - d.mu);
            }
            for &(l, m) in &d.ma {
                v -= m * d.e[d.e.len() - l];
            }
            if self.keep_e > 0 {
                d.e.push(v);
                trim(&mut d.e, self.keep_e);
            }
        }
        if self.keep_r > 0 {
            self.r.push(value);
            trim(&mut self.r, self.keep_r);
        }
        if self.keep_w > 0 {
            self.w.push(w_t);
            trim(&mut self.w, self.keep_w);
        }
    }

    /// One simulated `h`-step-ahead value per posterior draw.
    pub fn forecast_samples<R: Rng + ?Sized>(&self, h: usize, rng: &mut R) -> Vec<f64> {
        let h = h.max(1);
        let mut out = Vec::with_capacity(self.draws.len());
        let mut r = Vec::new();
        let mut w = Vec::new();
        let mut e = Vec::new();
        for d in &self.draws {
            r.clear();
            r.extend_from_slice(&self.r);
            w.clear();
            w.extend_from_slice(&self.w);
            e.clear();
            e.extend_from_slice(&d.e);
            let noise = Normal::new(0.0, d.sigma).expect("finite sigma");
            let mut last = 0.0;
            for _ in 0..h {
                let eps: f64 = noise.sample(rng);
                let mut v = d.mu + eps;
                for &(l, a) in &d.ar {
                    v += a * (w[w.len() - l] - d.mu);
                }
                for &(l, m) in &d.ma {
                    v += m * e[e.len() - l];
                }
                let next_r = integrate_next(v, &r, &self.diff_poly);
                w.push(v);
                e.push(eps);
                r.push(next_r);
                last = next_r;
            }
            out.push(last);
        }
        out
    }

    pub fn interval<R: Rng + ?Sized>(&self, h: usize, rng: &mut R) -> Result<CredibleInterval> {
        credible_interval(&self.forecast_samples(h, rng))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub posterior: Posterior,
    pub forecasts: Vec<f64>,
}

/// Fit `order` on `series` (CSS start point, default priors unless given),
/// sample the posterior and simulate `h`-step-ahead forecasts per draw.
pub fn sample_posterior_forecasts<R: Rng + ?Sized>(
    series: &[f64],
    order: &SarimaOrder,
    priors: Option<&PriorSpec>,
    cfg: &SamplerConfig,
    h: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    let w = difference(series, order.d, order.s, order.sd)?;
    let start = order.max_ar_lag();
    let fit = fit_css(&w, order, start)?;
    let default;
    let priors = match priors {
        Some(p) => p,
        None => {
            default = PriorSpec::default_for(&w, fit.params.sigma2);
            &default
        }
    };
    let posterior = sample_posterior(&w, order, start, priors, &fit.params, cfg, rng)?;
    let forecaster = OnlineForecaster::new(series, &posterior, start)?;
    let forecasts = forecaster.forecast_samples(h, rng);
    Ok(SampleSet {
        posterior,
        forecasts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critique::prior::Laplace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut prev = 0.0;
        for t in 0..n + 100 {
            let e: f64 = StandardNormal.sample(&mut rng);
            prev = phi * prev + e;
            if t >= 100 {
                x.push(prev);
            }
        }
        x
    }

    #[test]
    fn ar1_posterior_mean_near_truth() {
        let x = ar1(0.6, 300, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = SamplerConfig {
            draws: 1000,
            ..Default::default()
        };
        let set = sample_posterior_forecasts(&x, &SarimaOrder::arma(1, 0), None, &cfg, 1, &mut rng).unwrap();
        let m = set.posterior.mean_coefficients();
        assert!((m[1] - 0.6).abs() < 0.15, "{m:?}");
        assert!(set.posterior.draws.iter().all(|d| d.sigma2 > 0.0));
        assert!(set.posterior.convergence_warning().is_none(), "{:?}", set.posterior.acceptance);
        assert_eq!(set.forecasts.len(), 1000);
    }

    #[test]
    fn tight_prior_concentrates_draws() {
        let x = ar1(0.6, 200, 12);
        let w = x.clone();
        let order = SarimaOrder::arma(1, 0);
        let fit = fit_css(&w, &order, 1).unwrap();
        let cfg = SamplerConfig {
            draws: 600,
            burn_in: 400,
            ..Default::default()
        };
        let mut spreads = Vec::new();
        for b in [0.5, 0.05, 0.005] {
            let mut pri = PriorSpec::default_for(&w, fit.params.sigma2);
            pri.ar = Laplace { loc: 0.0, scale: b };
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let post = sample_posterior(&w, &order, 1, &pri, &fit.params, &cfg, &mut rng).unwrap();
            let phis: Vec<f64> = post.draws.iter().map(|d| d.phi[0]).collect();
            let spread = phis.iter().map(|p| p.abs()).sum::<f64>() / phis.len() as f64;
            spreads.push(spread);
        }
        assert!(spreads[0] > spreads[1] && spreads[1] > spreads[2], "{spreads:?}");
        assert!(spreads[2] < 0.02);
    }

    #[test]
    fn online_matches_batch_residuals() {
        let x = ar1(0.5, 150, 14);
        let order = SarimaOrder {
            p: 1,
            d: 1,
            q: 1,
            sp: 0,
            sd: 1,
            sq: 0,
            s: 7,
        };
        let w = difference(&x, 1, 7, 1).unwrap();
        let fit = fit_css(&w[..100], &order, order.max_ar_lag()).unwrap();
        let post = Posterior {
            order,
            draws: vec![fit.params.clone()],
            acceptance: vec![],
        };
        let cut = 100 + 8;
        let mut online = OnlineForecaster::new(&x[..cut], &post, order.max_ar_lag()).unwrap();
        for v in &x[cut..] {
            online.observe(*v);
        }
        let full = OnlineForecaster::new(&x, &post, order.max_ar_lag()).unwrap();
        assert_eq!(online.r[online.r.len() - full.r.len()..], full.r[..]);
        let a = online.draws[0].e.last().unwrap();
        let b = full.draws[0].e.last().unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn interval_widens_with_horizon() {
        let x = ar1(0.7, 300, 15);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let cfg = SamplerConfig {
            draws: 2000,
            burn_in: 500,
            ..Default::default()
        };
        let set = sample_posterior_forecasts(&x, &SarimaOrder::arma(1, 0), None, &cfg, 1, &mut rng).unwrap();
        let f = OnlineForecaster::new(&x, &set.posterior, 1).unwrap();
        let widths: Vec<f64> = (1..=4).map(|h| f.interval(h, &mut rng).unwrap().width()).collect();
        for w in widths.windows(2) {
            assert!(w[1] >= w[0] * 0.97, "{widths:?}");
        }
    }
}
