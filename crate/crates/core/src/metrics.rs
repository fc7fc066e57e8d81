//! Accuracy, coverage and width of calibrated series.

use serde::{Deserialize, Serialize};

use crate::error::{CalError, Result};

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(CalError::Dimension {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// Mean squared error `(1/T) Σ (x̂_t - x_t)²`.
pub fn mse(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    check_len("mse truth", estimates.len(), truth.len())?;
    if estimates.is_empty() {
        return Err(CalError::InsufficientData { needed: 1, found: 0 });
    }
    let ss: f64 = estimates.iter().zip(truth).map(|(e, x)| (e - x).powi(2)).sum();
    Ok(ss / estimates.len() as f64)
}

/// Fraction of times with `lower < truth < upper`.
pub fn coverage(lower: &[f64], upper: &[f64], truth: &[f64]) -> Result<f64> {
    check_len("coverage upper", lower.len(), upper.len())?;
    check_len("coverage truth", lower.len(), truth.len())?;
    if lower.is_empty() {
        return Err(CalError::InsufficientData { needed: 1, found: 0 });
    }
    if let Some(t) = lower.iter().zip(upper).position(|(l, u)| !(l <= u)) {
        return Err(CalError::Config(format!(
            "interval bounds inverted at index {t}: {} > {}",
            lower[t], upper[t]
        )));
    }
    let hits = lower
        .iter()
        .zip(upper)
        .zip(truth)
        .filter(|((l, u), x)| *l < *x && *x < *u)
        .count();
    Ok(hits as f64 / lower.len() as f64)
}

/// Mean of `upper - lower`.
pub fn interval_width(lower: &[f64], upper: &[f64]) -> Result<f64> {
    check_len("interval upper", lower.len(), upper.len())?;
    if lower.is_empty() {
        return Err(CalError::InsufficientData { needed: 1, found: 0 });
    }
    Ok(lower.iter().zip(upper).map(|(l, u)| u - l).sum::<f64>() / lower.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetrics {
    pub mse: f64,
    pub cp: f64,
    pub iw: f64,
    pub t_used: usize,
}

impl SeriesMetrics {
    pub fn compute(point: &[f64], lower: &[f64], upper: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            mse: mse(point, truth)?,
            cp: coverage(lower, upper, truth)?,
            iw: interval_width(lower, upper)?,
            t_used: point.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub av_mse: f64,
    pub av_cp: f64,
    pub av_iw: f64,
    pub replicates: usize,
}

pub fn aggregate(per_replicate: &[SeriesMetrics]) -> Result<AggregateMetrics> {
    if per_replicate.is_empty() {
        return Err(CalError::InsufficientData { needed: 1, found: 0 });
    }
    let n = per_replicate.len() as f64;
    let sum = |f: fn(&SeriesMetrics) -> f64| per_replicate.iter().map(f).sum::<f64>() / n;
    Ok(AggregateMetrics {
        av_mse: sum(|m| m.mse),
        av_cp: sum(|m| m.cp),
        av_iw: sum(|m| m.iw),
        replicates: per_replicate.len(),
    })
}
