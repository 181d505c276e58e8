//! Seasonal ARIMA model: residual recursion, conditional sum-of-squares
//! fitting and BIC order selection.
//!
//! On the differenced series `w` the model is
//!
//! ```text
//! (1 - sum phi_i B^i)(1 - Phi B^s)(w_t - mu) = (1 + sum theta_j B^j)(1 + Theta B^s) e_t
//! ```
//!
//! Residuals are computed from a fixed conditioning start with pre-sample
//! residuals set to zero.

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use super::adf::{adf_test, Stationarity};
use super::diff::difference;
use super::{CritiqueError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SarimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub sp: usize,
    pub sd: usize,
    pub sq: usize,
    pub s: usize,
}

impl SarimaOrder {
    pub fn arma(p: usize, q: usize) -> Self {
        SarimaOrder {
            p,
            d: 0,
            q,
            sp: 0,
            sd: 0,
            sq: 0,
            s: 0,
        }
    }

    /// Number of ARMA coefficients, seasonal included.
    pub fn n_coef(&self) -> usize {
        self.p + self.q + self.sp + self.sq
    }

    /// Free parameters counted by BIC: level, coefficients and variance.
    pub fn k(&self) -> usize {
        self.n_coef() + 2
    }

    pub fn max_ar_lag(&self) -> usize {
        self.p + self.sp * self.s
    }

    pub fn max_ma_lag(&self) -> usize {
        self.q + self.sq * self.s
    }
}

impl std::fmt::Display for SarimaOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({},{},{})({},{},{})[{}]",
            self.p, self.d, self.q, self.sp, self.sd, self.sq, self.s
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarimaParams {
    pub mu: f64,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub sphi: Vec<f64>,
    pub stheta: Vec<f64>,
    pub sigma2: f64,
}

impl SarimaParams {
    pub fn zeros(order: &SarimaOrder) -> Self {
        SarimaParams {
            mu: 0.0,
            phi: vec![0.0; order.p],
            theta: vec![0.0; order.q],
            sphi: vec![0.0; order.sp],
            stheta: vec![0.0; order.sq],
            sigma2: 1.0,
        }
    }

    /// `[mu, phi.., theta.., sphi.., stheta..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.mu];
        v.extend(&self.phi);
        v.extend(&self.theta);
        v.extend(&self.sphi);
        v.extend(&self.stheta);
        v
    }

    pub fn from_vec(order: &SarimaOrder, v: &[f64], sigma2: f64) -> Self {
        let mut i = 1;
        let mut take = |n: usize| {
            let out = v[i..i + n].to_vec();
            i += n;
            out
        };
        let phi = take(order.p);
        let theta = take(order.q);
        let sphi = take(order.sp);
        let stheta = take(order.sq);
        SarimaParams {
            mu: v[0],
            phi,
            theta,
            sphi,
            stheta,
            sigma2,
        }
    }

    /// Stationary AR part and invertible MA part.
    pub fn admissible(&self) -> bool {
        ar_stationary(&self.phi)
            && ar_stationary(&self.sphi)
            && ma_invertible(&self.theta)
            && ma_invertible(&self.stheta)
    }
}

/// Whether `1 - sum a_i z^i` has all roots outside the unit circle, via the
/// step-down recursion on partial autocorrelations.
pub fn ar_stationary(a: &[f64]) -> bool {
    if a.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let mut cur = a.to_vec();
    while let Some(&kappa) = cur.last() {
        if kappa.abs() >= 1.0 {
            return false;
        }
        let k = cur.len();
        let denom = 1.0 - kappa * kappa;
        let next: Vec<f64> = (0..k - 1)
            .map(|i| (cur[i] + kappa * cur[k - 2 - i]) / denom)
            .collect();
        cur = next;
    }
    true
}

/// Whether `1 + sum t_j z^j` has all roots outside the unit circle.
pub fn ma_invertible(t: &[f64]) -> bool {
    let neg: Vec<f64> = t.iter().map(|v| -v).collect();
    ar_stationary(&neg)
}

/// Sparse lag coefficients of the expanded AR and MA polynomials.
#[derive(Debug, Clone, Default)]
pub struct LagPolys {
    /// `(lag, a)` with `w_t - mu = sum a (w_{t-lag} - mu) + ...`.
    pub ar: Vec<(usize, f64)>,
    /// `(lag, m)` with `... + sum m e_{t-lag} + e_t`.
    pub ma: Vec<(usize, f64)>,
}

fn push_lag(v: &mut Vec<(usize, f64)>, lag: usize, c: f64) {
    if let Some(e) = v.iter_mut().find(|(l, _)| *l == lag) {
        e.1 += c;
    } else {
        v.push((lag, c));
    }
}

pub fn expand(order: &SarimaOrder, p: &SarimaParams) -> LagPolys {
    let mut ar = Vec::new();
    for (i, phi) in p.phi.iter().enumerate() {
        push_lag(&mut ar, i + 1, *phi);
    }
    for (k, sphi) in p.sphi.iter().enumerate() {
        let sl = (k + 1) * order.s;
        push_lag(&mut ar, sl, *sphi);
        for (i, phi) in p.phi.iter().enumerate() {
            push_lag(&mut ar, sl + i + 1, -phi * sphi);
        }
    }
    let mut ma = Vec::new();
    for (j, theta) in p.theta.iter().enumerate() {
        push_lag(&mut ma, j + 1, *theta);
    }
    for (k, st) in p.stheta.iter().enumerate() {
        let sl = (k + 1) * order.s;
        push_lag(&mut ma, sl, *st);
        for (j, theta) in p.theta.iter().enumerate() {
            push_lag(&mut ma, sl + j + 1, theta * st);
        }
    }
    LagPolys { ar, ma }
}

/// Residuals for `t >= start` (zero before) and their sum of squares.
pub fn residuals(w: &[f64], mu: f64, polys: &LagPolys, start: usize) -> (Vec<f64>, f64) {
    let mut e = vec![0.0; w.len()];
    let mut css = 0.0;
    for t in start..w.len() {
        let mut v = w[t] - mu;
        for &(l, a) in &polys.ar {
            v -= a * (w[t - l] - mu);
        }
        for &(l, m) in &polys.ma {
            if t >= start + l {
                v -= m * e[t - l];
            }
        }
        e[t] = v;
        css += v * v;
    }
    (e, css)
}

/// Sum of squared residuals only.
pub fn css(w: &[f64], order: &SarimaOrder, p: &SarimaParams, start: usize) -> f64 {
    residuals(w, p.mu, &expand(order, p), start).1
}

/// `-2 ln L + k ln n`.
pub fn bic(log_lik: f64, k: usize, n: usize) -> f64 {
    -2.0 * log_lik + k as f64 * (n as f64).ln()
}

/// Gaussian log-likelihood with the variance profiled out.
pub fn profile_log_lik(css: f64, n: usize) -> f64 {
    let n = n as f64;
    let s2 = css / n;
    -0.5 * n * ((2.0 * std::f64::consts::PI * s2).ln() + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CssFit {
    pub order: SarimaOrder,
    pub params: SarimaParams,
    pub css: f64,
    pub n_eff: usize,
    pub start: usize,
    pub log_lik: f64,
    pub bic: f64,
}

const PENALTY: f64 = 1e250;

struct CssProblem<'a> {
    w: &'a [f64],
    order: SarimaOrder,
    start: usize,
}

impl CostFunction for CssProblem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, ArgminError> {
        let p = SarimaParams::from_vec(&self.order, x, 1.0);
        if !p.mu.is_finite() || !p.admissible() {
            return Ok(PENALTY);
        }
        let c = css(self.w, &self.order, &p, self.start);
        Ok(if c.is_finite() { c } else { PENALTY })
    }
}

fn nelder_mead(problem: CssProblem<'_>, x0: Vec<f64>, steps: &[f64], tol: f64, max_iters: u64) -> std::result::Result<(Vec<f64>, f64), ArgminError> {
    let mut simplex = vec![x0.clone()];
    for (i, s) in steps.iter().enumerate() {
        let mut v = x0.clone();
        v[i] += s;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(tol)?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(max_iters))
        .run()?;
    let state = res.state();
    let best = state.get_best_param().cloned().unwrap_or(x0);
    Ok((best, state.get_best_cost()))
}

/// Conditional least-squares fit from conditioning index `start`.
///
/// The search starts at the sample mean with zero coefficients; simplex steps
/// scale with the series spread, so shifting the series by a constant shifts
/// only the fitted level.
pub fn fit_css(w: &[f64], order: &SarimaOrder, start: usize) -> Result<CssFit> {
    let start = start.max(order.max_ar_lag());
    let k = order.k();
    if w.len() < start + k + 2 {
        return Err(CritiqueError::SeriesTooShort {
            needed: start + k + 2,
            got: w.len(),
        });
    }
    let n_eff = w.len() - start;
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
    let mut x = vec![mean];
    x.extend(std::iter::repeat_n(0.0, order.n_coef()));
    let dim = x.len();
    let mut steps = vec![0.1 * sd.max(1e-8)];
    steps.extend(std::iter::repeat_n(0.1, order.n_coef()));
    let base = css(w, order, &SarimaParams::from_vec(order, &x, 1.0), start);
    let mut best = base;
    for round in 0..4 {
        let tol = 1e-15 * base.max(1e-300);
        let problem = CssProblem { w, order: *order, start };
        let (cand, cost) = nelder_mead(problem, x.clone(), &steps, tol, 400 * dim as u64)
            .map_err(|e| CritiqueError::FitFailure(e.to_string()))?;
        let improved = cost < best - 1e-13 * best.abs();
        if cost <= best {
            x = cand;
            best = cost;
        }
        if round > 0 && !improved {
            break;
        }
        for s in steps.iter_mut() {
            *s *= 0.1;
        }
    }
    if best >= PENALTY || !best.is_finite() {
        return Err(CritiqueError::FitFailure(format!("no admissible fit for {order}")));
    }
    let sigma2 = (best / n_eff as f64).max(1e-300);
    let params = SarimaParams::from_vec(order, &x, sigma2);
    let log_lik = profile_log_lik(best.max(1e-300), n_eff);
    Ok(CssFit {
        order: *order,
        params,
        css: best,
        n_eff,
        start,
        log_lik,
        bic: bic(log_lik, k, n_eff),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSearch {
    pub max_p: usize,
    pub max_q: usize,
    pub max_sp: usize,
    pub max_sq: usize,
    pub significance: f64,
}

impl Default for OrderSearch {
    fn default() -> Self {
        OrderSearch {
            max_p: 3,
            max_q: 3,
            max_sp: 1,
            max_sq: 1,
            significance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSelection {
    pub fit: CssFit,
    /// Differenced series the model was fitted on.
    pub w: Vec<f64>,
    pub bic_table: Vec<(SarimaOrder, f64)>,
}

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

/// Choose d by ADF (at most 1), D by comparing variances after seasonal
/// differencing, then (p,q,P,Q) by BIC over a common conditioning start.
pub fn select_order(series: &[f64], s: usize, search: &OrderSearch) -> Result<OrderSelection> {
    let adf = adf_test(series, search.significance)?;
    let d = usize::from(adf.verdict == Stationarity::NonStationary);
    let wd = difference(series, d, 0, 0)?;
    let seasonal = s >= 2;
    let sd = if seasonal && wd.len() >= 3 * s {
        let ws = difference(&wd, 0, s, 1)?;
        usize::from(variance(&ws) < variance(&wd))
    } else {
        0
    };
    let w = difference(series, d, s, sd)?;
    if variance(&w) <= 1e-12 * (1.0 + w[0] * w[0]) {
        return Err(CritiqueError::ZeroVariance);
    }
    let (max_sp, max_sq) = if seasonal {
        (search.max_sp, search.max_sq)
    } else {
        (0, 0)
    };
    let start = search.max_p + max_sp * s;
    let mut table = Vec::new();
    let mut best: Option<CssFit> = None;
    for p in 0..=search.max_p {
        for q in 0..=search.max_q {
            for sp in 0..=max_sp {
                for sq in 0..=max_sq {
                    let order = SarimaOrder {
                        p,
                        d,
                        q,
                        sp,
                        sd,
                        sq,
                        s: if seasonal { s } else { 0 },
                    };
                    let fit = match fit_css(&w, &order, start) {
                        Ok(f) => f,
                        Err(e) => {
                            log::debug!("skipping {order}: {e}");
                            continue;
                        }
                    };
                    table.push((order, fit.bic));
                    // Strictly better BIC wins; ties go to fewer parameters.
                    // Enumeration is lexicographic, so the first of equals stays.
                    let better = match &best {
                        None => true,
                        Some(b) => fit.bic < b.bic || (fit.bic == b.bic && order.k() < b.order.k()),
                    };
                    if better {
                        best = Some(fit);
                    }
                }
            }
        }
    }
    let fit = best.ok_or(CritiqueError::AllCandidatesFailed)?;
    Ok(OrderSelection {
        fit,
        w,
        bic_table: table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn arma_series(phi: f64, theta: f64, mu: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut prev = 0.0;
        let mut prev_e = 0.0;
        for t in 0..n + 200 {
            let e: f64 = StandardNormal.sample(&mut rng);
            let v = phi * prev + theta * prev_e + e;
            prev = v;
            prev_e = e;
            if t >= 200 {
                x.push(mu + v);
            }
        }
        x
    }

    #[test]
    fn bic_arithmetic() {
        assert!((bic(-100.0, 3, 360) - 217.658312).abs() < 1e-5);
    }

    #[test]
    fn stationarity_region() {
        assert!(ar_stationary(&[0.5]));
        assert!(!ar_stationary(&[1.0]));
        assert!(!ar_stationary(&[-1.2]));
        // 1 - 1.5z + 0.56z^2 = (1-0.7z)(1-0.8z).
        assert!(ar_stationary(&[1.5, -0.56]));
        // (1-0.5z)(1-1.25z): one root inside.
        assert!(!ar_stationary(&[1.75, -0.625]));
        assert!(ma_invertible(&[0.9]));
        assert!(!ma_invertible(&[-1.1]));
        assert!(ar_stationary(&[]));
    }

    #[test]
    fn seasonal_expansion() {
        let order = SarimaOrder {
            p: 1,
            d: 0,
            q: 1,
            sp: 1,
            sd: 0,
            sq: 1,
            s: 4,
        };
        let p = SarimaParams {
            mu: 0.0,
            phi: vec![0.5],
            theta: vec![0.3],
            sphi: vec![0.2],
            stheta: vec![-0.4],
            sigma2: 1.0,
        };
        let polys = expand(&order, &p);
        let mut ar = polys.ar.clone();
        ar.sort_by_key(|x| x.0);
        assert_eq!(ar, vec![(1, 0.5), (4, 0.2), (5, -0.1)]);
        let mut ma = polys.ma.clone();
        ma.sort_by_key(|x| x.0);
        assert_eq!(ma[0], (1, 0.3));
        assert_eq!(ma[1], (4, -0.4));
        assert!((ma[2].1 + 0.12).abs() < 1e-15);
    }

    #[test]
    fn recovers_ar1() {
        let x = arma_series(0.6, 0.0, 2.0, 500, 1);
        let fit = fit_css(&x, &SarimaOrder::arma(1, 0), 1).unwrap();
        assert!((fit.params.phi[0] - 0.6).abs() < 0.1, "{:?}", fit.params);
        assert!((fit.params.mu - 2.0).abs() < 0.3);
        assert!((fit.params.sigma2 - 1.0).abs() < 0.2);
    }

    #[test]
    fn recovers_arma11() {
        let x = arma_series(0.5, 0.4, 0.0, 800, 2);
        let fit = fit_css(&x, &SarimaOrder::arma(1, 1), 1).unwrap();
        assert!((fit.params.phi[0] - 0.5).abs() < 0.12, "{:?}", fit.params);
        assert!((fit.params.theta[0] - 0.4).abs() < 0.12, "{:?}", fit.params);
    }

    #[test]
    fn ar1_order_selected() {
        let mut hits = 0;
        for seed in 0..20 {
            let x = arma_series(0.6, 0.0, 0.0, 500, 100 + seed);
            let sel = select_order(&x, 0, &OrderSearch::default()).unwrap();
            if sel.fit.order.p == 1 && sel.fit.order.q == 0 {
                hits += 1;
            }
        }
        assert!(hits >= 16, "{hits}/20");
    }

    #[test]
    fn white_noise_order_selected() {
        let mut hits = 0;
        for seed in 0..20 {
            let x = arma_series(0.0, 0.0, 1.0, 300, 200 + seed);
            let sel = select_order(&x, 0, &OrderSearch::default()).unwrap();
            if sel.fit.order.p == 0 && sel.fit.order.q == 0 {
                hits += 1;
            }
        }
        assert!(hits >= 16, "{hits}/20");
    }

    #[test]
    fn centering_leaves_coefficients() {
        let x = arma_series(0.4, 0.3, 5.0, 300, 3);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
        let order = SarimaOrder::arma(1, 1);
        let a = fit_css(&x, &order, 1).unwrap();
        let b = fit_css(&centered, &order, 1).unwrap();
        assert!((a.params.phi[0] - b.params.phi[0]).abs() < 1e-6);
        assert!((a.params.theta[0] - b.params.theta[0]).abs() < 1e-6);
        assert!((a.params.mu - mean - b.params.mu).abs() < 1e-6);
    }

    #[test]
    fn constant_series_is_zero_variance() {
        assert_eq!(
            select_order(&[3.0; 100], 10, &OrderSearch::default()).unwrap_err(),
            CritiqueError::ZeroVariance
        );
    }
}
