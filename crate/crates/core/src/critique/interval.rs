//! Percentile credible intervals and the accept/reject rule.

use serde::{Deserialize, Serialize};

use super::{CritiqueError, Result};

pub const MIN_SAMPLES: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredibleInterval {
    pub lower: f64,
    pub upper: f64,
}

impl CredibleInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accept,
    Reject,
}

/// Linear-interpolation percentile of sorted data, `p` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 2.5th and 97.5th percentiles.
pub fn credible_interval(samples: &[f64]) -> Result<CredibleInterval> {
    if samples.len() < MIN_SAMPLES {
        return Err(CritiqueError::TooFewSamples(samples.len()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(CritiqueError::FitFailure("non-finite forecast sample".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(CredibleInterval {
        lower: percentile_sorted(&s, 0.025),
        upper: percentile_sorted(&s, 0.975),
    })
}

/// Accept iff the prediction lies in the closed interval.
pub fn critique(prediction: f64, ci: &CredibleInterval) -> Verdict {
    if ci.contains(prediction) {
        Verdict::Accept
    } else {
        Verdict::Reject
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn normal_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ci = credible_interval(&xs).unwrap();
        assert!((ci.lower + 1.96).abs() < 0.08, "{ci:?}");
        assert!((ci.upper - 1.96).abs() < 0.08, "{ci:?}");
        let mut s = xs.clone();
        s.sort_by(f64::total_cmp);
        assert!(ci.contains(percentile_sorted(&s, 0.5)));
    }

    #[test]
    fn constant_samples() {
        let ci = credible_interval(&[2.5; 100]).unwrap();
        assert_eq!((ci.lower, ci.upper), (2.5, 2.5));
    }

    #[test]
    fn too_few() {
        assert_eq!(credible_interval(&[1.0; 39]), Err(CritiqueError::TooFewSamples(39)));
    }

    #[test]
    fn verdicts() {
        let ci = CredibleInterval { lower: -1.96, upper: 1.96 };
        assert_eq!(critique(0.0, &ci), Verdict::Accept);
        assert_eq!(critique(5.0, &ci), Verdict::Reject);
        assert_eq!(critique(1.96, &ci), Verdict::Accept);
    }

    #[test]
    fn interpolation() {
        let s: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(percentile_sorted(&s, 0.025), 2.5);
        assert_eq!(percentile_sorted(&s, 0.975), 97.5);
    }
}
