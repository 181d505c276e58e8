//! Augmented Dickey-Fuller unit-root test, constant-only regression.

use nalgebra::{DMatrix, DVector};

use super::{CritiqueError, Result};

/// MacKinnon (2010) response-surface coefficients for the constant-only
/// case: critical value = b0 + b1/n + b2/n^2 + b3/n^3.
const CRIT_1PCT: [f64; 4] = [-3.43035, -6.5393, -16.786, -79.433];
const CRIT_5PCT: [f64; 4] = [-2.86154, -2.8903, -4.234, -40.040];
const CRIT_10PCT: [f64; 4] = [-2.56677, -1.5384, -2.809, 0.0];

pub const MIN_LENGTH: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stationarity {
    Stationary,
    NonStationary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdfResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub lags: usize,
    pub nobs: usize,
    pub verdict: Stationarity,
}

pub fn critical_value(significance: f64, nobs: usize) -> Result<f64> {
    let b = if (significance - 0.01).abs() < 1e-12 {
        CRIT_1PCT
    } else if (significance - 0.05).abs() < 1e-12 {
        CRIT_5PCT
    } else if (significance - 0.10).abs() < 1e-12 {
        CRIT_10PCT
    } else {
        return Err(CritiqueError::Argument(format!(
            "significance must be 0.01, 0.05 or 0.10, got {significance}"
        )));
    };
    let n = nobs as f64;
    Ok(b[0] + b[1] / n + b[2] / (n * n) + b[3] / (n * n * n))
}

/// Regress `dy_t` on a constant, `y_{t-1}` and `lags` lagged differences with
/// `lags = floor((n-1)^(1/3))`; stationary when the t statistic on `y_{t-1}`
/// is below the critical value.
pub fn adf_test(series: &[f64], significance: f64) -> Result<AdfResult> {
    let n = series.len();
    if n < MIN_LENGTH {
        return Err(CritiqueError::SeriesTooShort {
            needed: MIN_LENGTH,
            got: n,
        });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if !(var > 1e-12 * (1.0 + mean * mean)) {
        return Err(CritiqueError::ZeroVariance);
    }
    let lags = ((n - 1) as f64).cbrt().floor() as usize;
    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    // Rows t = lags+1 .. n-1 (index into series); dy index t-1.
    let rows = n - 1 - lags;
    let cols = 2 + lags;
    let mut x = DMatrix::<f64>::zeros(rows, cols);
    let mut y = DVector::<f64>::zeros(rows);
    for r in 0..rows {
        let t = r + lags + 1;
        y[r] = dy[t - 1];
        x[(r, 0)] = 1.0;
        x[(r, 1)] = series[t - 1];
        for j in 1..=lags {
            x[(r, 1 + j)] = dy[t - 1 - j];
        }
    }
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| CritiqueError::FitFailure("singular ADF regression".into()))?;
    let beta = chol.solve(&xty);
    let resid = &y - &x * &beta;
    let dof = rows as f64 - cols as f64;
    if dof <= 0.0 {
        return Err(CritiqueError::SeriesTooShort {
            needed: cols + lags + 2,
            got: n,
        });
    }
    let s2 = resid.dot(&resid) / dof;
    let inv = chol.inverse();
    let se = (s2 * inv[(1, 1)]).sqrt();
    if !(se > 0.0) {
        // Perfect fit: the lagged level explains the differences exactly.
        return Err(CritiqueError::ZeroVariance);
    }
    let statistic = beta[1] / se;
    let critical_value = critical_value(significance, rows)?;
    Ok(AdfResult {
        statistic,
        critical_value,
        lags,
        nobs: rows,
        verdict: if statistic < critical_value {
            Stationarity::Stationary
        } else {
            Stationarity::NonStationary
        },
    })
}
