//! Ordinary and seasonal differencing and its inverse.

use super::{CritiqueError, Result};

/// Coefficients `c` of `(1-B)^d (1-B^s)^D = 1 - sum_i c[i] B^i`; `c[0]` is
/// unused and zero.
pub fn difference_polynomial(d: usize, s: usize, seasonal_d: usize) -> Vec<f64> {
    let mut poly = vec![1.0];
    let mut mul = |lag: usize| {
        let mut next = vec![0.0; poly.len() + lag];
        for (i, c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + lag] -= c;
        }
        poly = next;
    };
    for _ in 0..d {
        mul(1);
    }
    for _ in 0..seasonal_d {
        mul(s);
    }
    poly.iter().enumerate().map(|(i, c)| if i == 0 { 0.0 } else { -c }).collect()
}

/// Apply `(1-B)^d (1-B^s)^D`. Output length is `n - d - D*s`.
pub fn difference(series: &[f64], d: usize, s: usize, seasonal_d: usize) -> Result<Vec<f64>> {
    let lost = d + seasonal_d * s;
    if series.len() <= lost {
        return Err(CritiqueError::SeriesTooShort {
            needed: lost + 1,
            got: series.len(),
        });
    }
    let mut w = series.to_vec();
    for _ in 0..seasonal_d {
        w = w.windows(s + 1).map(|v| v[s] - v[0]).collect();
    }
    for _ in 0..d {
        w = w.windows(2).map(|v| v[1] - v[0]).collect();
    }
    Ok(w)
}

/// Next undifferenced value given the differenced value `w` and the most
/// recent original values (`history`, oldest first).
pub fn integrate_next(w: f64, history: &[f64], poly: &[f64]) -> f64 {
    let n = history.len();
    w + poly
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, c)| **c != 0.0)
        .map(|(i, c)| c * history[n - i])
        .sum::<f64>()
}

/// Rebuild the original series from its first `d + D*s` values and the
/// differenced series.
pub fn undifference(initial: &[f64], w: &[f64], d: usize, s: usize, seasonal_d: usize) -> Result<Vec<f64>> {
    let lost = d + seasonal_d * s;
    if initial.len() != lost {
        return Err(CritiqueError::Argument(format!(
            "need {lost} initial values, got {}",
            initial.len()
        )));
    }
    let poly = difference_polynomial(d, s, seasonal_d);
    let mut out = initial.to_vec();
    out.reserve(w.len());
    for &v in w {
        let next = integrate_next(v, &out, &poly);
        out.push(next);
    }
    Ok(out)
}
