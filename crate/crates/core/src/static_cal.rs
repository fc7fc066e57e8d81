//! Static calibration baselines fitted once on first-stage `(x_i, y_i)` pairs.
//!
//! * classical (Eisenhart) inversion of the forward line, with Brown's interval;
//! * inverse (Krutchkoff) regression of `x` on `y`;
//! * Hoadley's posterior, a Student-t centred on the inverse estimate;
//! * Hunter–Lamboy's normal approximation centred on the classical estimate.

use serde::{Deserialize, Serialize};

use crate::error::{CalError, Result};
use crate::stats::{normal_quantile, student_t_quantile, upper_tail_prob};

/// Relative factor in the near-zero slope guard `eps = factor * sqrt(Syy / Sxx)`.
pub const SLOPE_EPS_FACTOR: f64 = 1e-8;

/// Forward (`y` on `x`) and inverse (`x` on `y`) least-squares summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub b0: f64,
    pub b1: f64,
    /// Residual standard deviation of the forward fit, `n - 2` divisor.
    pub sigma_hat: f64,
    pub sxx: f64,
    pub syy: f64,
    pub sxy: f64,
    pub x_mean: f64,
    pub y_mean: f64,
    pub n: usize,
    /// Intercept of the inverse regression `x = phi + delta * y`.
    pub phi: f64,
    pub delta: f64,
    /// Residual standard deviation of the inverse regression, `n - 2` divisor.
    pub inv_sigma_hat: f64,
}

impl RegressionFit {
    /// Scale-aware guard below which `|b1|` is treated as zero.
    pub fn slope_eps(&self) -> f64 {
        SLOPE_EPS_FACTOR * (self.syy / self.sxx).sqrt()
    }

    fn check_slope(&self) -> Result<()> {
        let eps = self.slope_eps();
        if !(self.b1.abs() > eps) {
            return Err(CalError::NearZeroSlope {
                slope: self.b1,
                eps,
            });
        }
        Ok(())
    }

    fn df(&self) -> f64 {
        (self.n - 2) as f64
    }
}

pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    if x.len() != y.len() {
        return Err(CalError::Dimension {
            context: "regression responses",
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(CalError::InsufficientData { needed: 3, found: n });
    }
    let nf = n as f64;
    let x_mean = x.iter().sum::<f64>() / nf;
    let y_mean = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - x_mean;
        let dy = yi - y_mean;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if !(sxx > 0.0) {
        return Err(CalError::DegenerateDesign);
    }
    let b1 = sxy / sxx;
    let b0 = y_mean - b1 * x_mean;
    let (delta, phi) = if syy > 0.0 {
        let d = sxy / syy;
        (d, x_mean - d * y_mean)
    } else {
        (0.0, x_mean)
    };
    let mut ss_fwd = 0.0;
    let mut ss_inv = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let rf = yi - b0 - b1 * xi;
        let ri = xi - phi - delta * yi;
        ss_fwd += rf * rf;
        ss_inv += ri * ri;
    }
    let df = (n - 2) as f64;
    Ok(RegressionFit {
        b0,
        b1,
        sigma_hat: (ss_fwd / df).sqrt(),
        sxx,
        syy,
        sxy,
        x_mean,
        y_mean,
        n,
        phi,
        delta,
        inv_sigma_hat: (ss_inv / df).sqrt(),
    })
}

/// Classical estimator `(y0 - b0) / b1`.
pub fn classical_point(fit: &RegressionFit, y0: f64) -> Result<f64> {
    fit.check_slope()?;
    Ok((y0 - fit.b0) / fit.b1)
}

/// Brown's interval for the classical estimator.
pub fn classical_interval(fit: &RegressionFit, y0: f64, level: f64) -> Result<(f64, f64)> {
    fit.check_slope()?;
    let t = student_t_quantile(upper_tail_prob(level)?, fit.df())?;
    let point = (y0 - fit.b0) / fit.b1;
    let s2t2 = fit.sigma_hat.powi(2) * t * t;
    let b1sq_sxx = fit.b1 * fit.b1 * fit.sxx;
    let centre = point * (1.0 + s2t2 / b1sq_sxx);
    let half = (fit.sigma_hat * t / fit.b1.abs())
        * (1.0 + 1.0 / (2.0 * fit.n as f64) + ((y0 - fit.b0).powi(2) + s2t2) / (2.0 * b1sq_sxx));
    Ok((centre - half, centre + half))
}

/// Inverse estimator `phi + delta * y0`.
pub fn inverse_point(fit: &RegressionFit, y0: f64) -> f64 {
    fit.phi + fit.delta * y0
}

/// Interval for `E(x | y0)` from the inverse regression.
pub fn inverse_interval(fit: &RegressionFit, y0: f64, level: f64) -> Result<(f64, f64)> {
    if !(fit.syy > 0.0) {
        return Err(CalError::DegenerateResponse);
    }
    let t = student_t_quantile(upper_tail_prob(level)?, fit.df())?;
    let point = inverse_point(fit, y0);
    let half = t
        * fit.inv_sigma_hat
        * (1.0 / fit.n as f64 + (y0 - fit.y_mean).powi(2) / fit.syy).sqrt();
    Ok((point - half, point + half))
}

/// Prediction interval for a single new `x` at `y0` from the inverse regression,
/// half-width `t σ̂_inv sqrt(1 + 1/n + (y0 - ȳ)² / Syy)`.
pub fn inverse_prediction_interval(fit: &RegressionFit, y0: f64, level: f64) -> Result<(f64, f64)> {
    if !(fit.syy > 0.0) {
        return Err(CalError::DegenerateResponse);
    }
    let t = student_t_quantile(upper_tail_prob(level)?, fit.df())?;
    let point = inverse_point(fit, y0);
    let half = t
        * fit.inv_sigma_hat
        * (1.0 + 1.0 / fit.n as f64 + (y0 - fit.y_mean).powi(2) / fit.syy).sqrt();
    Ok((point - half, point + half))
}

/// Squared scale of Hoadley's t posterior in standardized units:
/// `(n + 1 + x_inv² / R) / (F + n - 2)` with `R = F / (F + n - 2)`.
pub fn hoadley_scale_sq(n: usize, f_stat: f64, x_inv_std: f64) -> f64 {
    let nf = n as f64;
    let denom = f_stat + nf - 2.0;
    let r = f_stat / denom;
    (nf + 1.0 + x_inv_std * x_inv_std / r) / denom
}

/// Student-t posterior (location, scale, degrees of freedom) on the original `x` scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoadleyPosterior {
    pub location: f64,
    pub scale: f64,
    pub df: f64,
}

impl HoadleyPosterior {
    pub fn interval(&self, level: f64) -> Result<(f64, f64)> {
        let t = student_t_quantile(upper_tail_prob(level)?, self.df)?;
        Ok((self.location - t * self.scale, self.location + t * self.scale))
    }
}

/// Hoadley's posterior for `m = 1`.
///
/// The posterior is stated for references standardized to mean zero and
/// `Sxx / n = 1`; the location maps back to exactly the inverse estimate and
/// the scale is multiplied by `sqrt(Sxx / n)`.
pub fn hoadley_posterior(fit: &RegressionFit, y0: f64) -> Result<HoadleyPosterior> {
    if fit.n < 4 {
        return Err(CalError::InsufficientData {
            needed: 4,
            found: fit.n,
        });
    }
    if !(fit.sigma_hat > 0.0) {
        return Err(CalError::DegeneratePosterior(
            "Hoadley posterior needs sigma_hat > 0 (F is infinite)",
        ));
    }
    let f_stat = fit.b1 * fit.b1 * fit.sxx / fit.sigma_hat.powi(2);
    let x_scale = (fit.sxx / fit.n as f64).sqrt();
    let location = inverse_point(fit, y0);
    let x_std = (location - fit.x_mean) / x_scale;
    let scale = x_scale * hoadley_scale_sq(fit.n, f_stat, x_std).sqrt();
    Ok(HoadleyPosterior {
        location,
        scale,
        df: fit.df(),
    })
}

/// Hunter–Lamboy normal approximation `N(x̂_c, ((s11 + s33) s22 - s12²) / (s22 b1²))`.
pub fn hunter_lamboy_posterior(fit: &RegressionFit, y0: f64, m: usize) -> Result<(f64, f64)> {
    if m == 0 {
        return Err(CalError::Config("replicate count m must be at least 1".into()));
    }
    let mean = classical_point(fit, y0)?;
    let s2 = fit.sigma_hat.powi(2);
    let nf = fit.n as f64;
    let sum_x2 = fit.sxx + nf * fit.x_mean * fit.x_mean;
    // (XᵀX)⁻¹ = [[Σx², -Σx], [-Σx, n]] / (n Sxx)
    let s11 = s2 * sum_x2 / (nf * fit.sxx);
    let s12 = -s2 * fit.x_mean / fit.sxx;
    let s22 = s2 / fit.sxx;
    let s33 = s2 / m as f64;
    let variance = if s22 > 0.0 {
        ((s11 + s33) * s22 - s12 * s12) / (s22 * fit.b1 * fit.b1)
    } else {
        0.0
    };
    Ok((mean, variance.max(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticMethod {
    Classical,
    Inverse,
    Hoadley,
    HunterLamboy,
}

impl StaticMethod {
    pub const ALL: [StaticMethod; 4] = [
        StaticMethod::Classical,
        StaticMethod::Inverse,
        StaticMethod::Hoadley,
        StaticMethod::HunterLamboy,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: StaticMethod,
    pub level: f64,
}

/// Point estimate and interval for one second-stage observation (`m = 1`).
///
/// The inverse method reports the prediction interval for a new target
/// rather than the interval for `E(x | y0)`.
pub fn estimate(fit: &RegressionFit, y0: f64, method: StaticMethod, level: f64) -> Result<CalEstimate> {
    let (point, lower, upper) = match method {
        StaticMethod::Classical => {
            let p = classical_point(fit, y0)?;
            let (l, u) = classical_interval(fit, y0, level)?;
            (p, l, u)
        }
        StaticMethod::Inverse => {
            let (l, u) = inverse_prediction_interval(fit, y0, level)?;
            (inverse_point(fit, y0), l, u)
        }
        StaticMethod::Hoadley => {
            let post = hoadley_posterior(fit, y0)?;
            let (l, u) = post.interval(level)?;
            (post.location, l, u)
        }
        StaticMethod::HunterLamboy => {
            let (mean, var) = hunter_lamboy_posterior(fit, y0, 1)?;
            let z = normal_quantile(upper_tail_prob(level)?);
            let half = z * var.sqrt();
            (mean, mean - half, mean + half)
        }
    };
    Ok(CalEstimate {
        point,
        lower,
        upper,
        method,
        level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn noisy_fit() -> RegressionFit {
        let x = [20.0, 40.0, 60.0, 80.0, 100.0, 20.0, 40.0, 60.0, 80.0, 100.0];
        let noise = [0.01, -0.02, 0.015, -0.005, 0.0, -0.01, 0.02, -0.015, 0.005, 0.01];
        let y: Vec<f64> = x
            .iter()
            .zip(noise)
            .map(|(x, e)| 12.7434 + 0.02655 * x + e)
            .collect();
        ols_fit(&x, &y).unwrap()
    }

    #[test]
    fn perfect_line() {
        let fit = ols_fit(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_relative_eq!(fit.b0, 0.0, epsilon = 1e-15);
        assert_relative_eq!(fit.b1, 1.0, epsilon = 1e-15);
        assert_eq!(fit.sigma_hat, 0.0);
    }

    #[test]
    fn two_points_are_rejected() {
        let err = ols_fit(&[20.0, 100.0], &[13.0, 15.0]).unwrap_err();
        assert!(matches!(err, CalError::InsufficientData { needed: 3, found: 2 }));
    }

    #[test]
    fn constant_x_is_degenerate() {
        assert!(matches!(
            ols_fit(&[5.0; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap_err(),
            CalError::DegenerateDesign
        ));
    }

    #[test]
    fn recovers_generating_coefficients() {
        let x = [20.0, 40.0, 60.0, 80.0, 100.0];
        let y: Vec<f64> = x.iter().map(|x| 12.7434 + 0.02655 * x).collect();
        let fit = ols_fit(&x, &y).unwrap();
        assert!((fit.b1 - 0.02655).abs() < 1e-12);
        assert!((fit.b0 - 12.7434).abs() < 1e-10);
    }

    #[test]
    fn fit_passes_through_means() {
        let fit = noisy_fit();
        assert!((fit.b0 + fit.b1 * fit.x_mean - fit.y_mean).abs() < 1e-10);
        assert!((fit.phi + fit.delta * fit.y_mean - fit.x_mean).abs() < 1e-10);
    }

    #[test]
    fn classical_examples() {
        let fit = ols_fit(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_relative_eq!(classical_point(&fit, 5.0).unwrap(), 5.0, epsilon = 1e-12);

        let mut f = noisy_fit();
        f.b0 = 12.7434;
        f.b1 = 0.02655;
        let y0 = 12.7434 + 0.02655 * 60.0;
        assert_relative_eq!(y0, 14.3364, epsilon = 1e-12);
        assert_relative_eq!(classical_point(&f, y0).unwrap(), 60.0, epsilon = 1e-10);

        f.b1 = 0.0;
        assert!(matches!(
            classical_point(&f, y0).unwrap_err(),
            CalError::NearZeroSlope { .. }
        ));
    }

    #[test]
    fn classical_interval_zero_sigma_collapses() {
        let fit = ols_fit(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 5.0, 7.0]).unwrap();
        let (l, u) = classical_interval(&fit, 4.0, 0.95).unwrap();
        assert_relative_eq!(l, 1.5, epsilon = 1e-12);
        assert_relative_eq!(u, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn classical_interval_matches_direct_transcription() {
        let fit = noisy_fit();
        let y0 = fit.y_mean;
        let t = 2.306_004_135_204_166; // t_{0.975, 8}
        let (s, b1, sxx, n) = (fit.sigma_hat, fit.b1, fit.sxx, fit.n as f64);
        let centre = fit.x_mean * (1.0 + s * s * t * t / (b1 * b1 * sxx));
        let half = s * t / b1
            * (1.0 + 1.0 / (2.0 * n) + ((y0 - fit.b0).powi(2) + s * s * t * t) / (2.0 * b1 * b1 * sxx));
        let (l, u) = classical_interval(&fit, y0, 0.95).unwrap();
        assert_relative_eq!(l, centre - half, max_relative = 1e-10);
        assert_relative_eq!(u, centre + half, max_relative = 1e-10);
        assert_relative_eq!(0.5 * (l + u), centre, max_relative = 1e-12);
    }

    #[test]
    fn classical_width_grows_with_sigma() {
        let mut fit = noisy_fit();
        fit.sigma_hat = 0.1;
        let (l1, u1) = classical_interval(&fit, 14.0, 0.95).unwrap();
        fit.sigma_hat = 0.2;
        let (l2, u2) = classical_interval(&fit, 14.0, 0.95).unwrap();
        assert!(u2 - l2 > u1 - l1);
    }

    #[test]
    fn inverse_examples() {
        let fit = noisy_fit();
        assert_relative_eq!(inverse_point(&fit, fit.y_mean), fit.x_mean, epsilon = 1e-10);

        let fit3 = ols_fit(&[20.0, 60.0, 100.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_relative_eq!(inverse_point(&fit3, 1.5), 40.0, epsilon = 1e-10);

        let mut flat = fit;
        flat.delta = 0.0;
        flat.phi = flat.x_mean;
        for y0 in [-3.0, 0.0, 17.5] {
            assert_eq!(inverse_point(&flat, y0), flat.x_mean);
        }
    }

    #[test]
    fn inverse_interval_half_widths() {
        let fit = noisy_fit();
        let t = student_t_quantile(0.975, 8.0).unwrap();
        let (l, u) = inverse_interval(&fit, fit.y_mean, 0.95).unwrap();
        assert_relative_eq!(0.5 * (u - l), t * fit.inv_sigma_hat * (1.0 / 10.0f64).sqrt(), max_relative = 1e-12);
        let (l, u) = inverse_interval(&fit, fit.y_mean + fit.syy.sqrt(), 0.95).unwrap();
        assert_relative_eq!(0.5 * (u - l), t * fit.inv_sigma_hat * (1.1f64).sqrt(), max_relative = 1e-12);

        let perfect = ols_fit(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        let (l, u) = inverse_interval(&perfect, 0.7, 0.95).unwrap();
        assert_relative_eq!(u - l, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn prediction_interval_contains_mean_interval() {
        let fit = noisy_fit();
        for y0 in [13.0, fit.y_mean, 15.5] {
            let (l, u) = inverse_interval(&fit, y0, 0.95).unwrap();
            let (pl, pu) = inverse_prediction_interval(&fit, y0, 0.95).unwrap();
            assert!(pl < l && u < pu);
            assert_relative_eq!(0.5 * (pl + pu), inverse_point(&fit, y0), epsilon = 1e-10);
        }
    }

    #[test]
    fn inverse_interval_needs_response_spread() {
        let mut fit = noisy_fit();
        fit.syy = 0.0;
        assert!(matches!(
            inverse_interval(&fit, 1.0, 0.95).unwrap_err(),
            CalError::DegenerateResponse
        ));
    }

    #[test]
    fn hoadley_scale_arithmetic() {
        // n = 10, F = 100, x = 1: R = 100/108, squared scale (11 + 1.08)/108.
        assert_relative_eq!(hoadley_scale_sq(10, 100.0, 1.0), (11.0 + 1.08) / 108.0, max_relative = 1e-14);
        assert_relative_eq!(hoadley_scale_sq(10, 100.0, 0.0), 11.0 / 108.0, max_relative = 1e-14);
    }

    #[test]
    fn hoadley_location_is_inverse_estimate() {
        let fit = noisy_fit();
        for y0 in [13.0, 14.3, 15.9] {
            let post = hoadley_posterior(&fit, y0).unwrap();
            assert_eq!(post.location, inverse_point(&fit, y0));
            assert!(post.scale > 0.0);
            assert_eq!(post.df, 8.0);
        }
    }

    #[test]
    fn hoadley_rejects_zero_sigma_and_small_n() {
        let perfect = ols_fit(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            hoadley_posterior(&perfect, 1.0).unwrap_err(),
            CalError::DegeneratePosterior(_)
        ));
        let three = ols_fit(&[0.0, 1.0, 2.0], &[0.0, 1.1, 1.9]).unwrap();
        assert!(matches!(
            hoadley_posterior(&three, 1.0).unwrap_err(),
            CalError::InsufficientData { needed: 4, .. }
        ));
    }

    #[test]
    fn hunter_lamboy_mean_and_variance() {
        let fit = noisy_fit();
        let (mean, var) = hunter_lamboy_posterior(&fit, 14.0, 1).unwrap();
        assert_eq!(mean, classical_point(&fit, 14.0).unwrap());
        assert!(var > 0.0);

        let perfect = ols_fit(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        let (_, v0) = hunter_lamboy_posterior(&perfect, 1.0, 1).unwrap();
        assert_eq!(v0, 0.0);
    }

    #[test]
    fn hunter_lamboy_against_explicit_inverse() {
        // x = (20, 40, 60, 80, 100), sigma_hat = 1, m = 1.
        let mut fit = ols_fit(
            &[20.0, 40.0, 60.0, 80.0, 100.0],
            &[13.29, 13.80, 14.35, 14.86, 15.40],
        )
        .unwrap();
        fit.sigma_hat = 1.0;
        // XᵀX = [[5, 300], [300, 22000]], det = 20000.
        let (s11, s12, s22, s33) = (22000.0 / 20000.0, -300.0 / 20000.0, 5.0 / 20000.0, 1.0);
        let expected = ((s11 + s33) * s22 - s12 * s12) / (s22 * fit.b1 * fit.b1);
        let (_, var) = hunter_lamboy_posterior(&fit, 14.0, 1).unwrap();
        assert_relative_eq!(var, expected, max_relative = 1e-10);
    }

    #[test]
    fn estimates_bracket_points() {
        let fit = noisy_fit();
        for method in StaticMethod::ALL {
            for y0 in [13.3, 14.3, 15.3] {
                let e = estimate(&fit, y0, method, 0.95).unwrap();
                assert!(e.lower <= e.point && e.point <= e.upper, "{method:?} {e:?}");
            }
        }
    }
}
