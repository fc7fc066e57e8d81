//! Quantile helpers shared by the static and dynamic estimators.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{CalError, Result};

/// Upper quantile of the standard normal, `z` with `P(Z <= z) = p`.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Quantile of Student's t with `df` degrees of freedom.
pub fn student_t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(CalError::Config(format!("t quantile needs df > 0, got {df}")));
    }
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| CalError::Config(format!("invalid t distribution: {e}")))?;
    Ok(dist.inverse_cdf(p))
}

/// Two-sided critical value for a central interval at `level` (e.g. 0.95 -> p = 0.975).
pub fn upper_tail_prob(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(CalError::Config(format!("interval level must lie in (0,1), got {level}")));
    }
    Ok(0.5 + level / 2.0)
}

/// Type-7 sample quantile (linear interpolation between order statistics).
///
/// `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the `n - 1` divisor.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}
