//! Multivariate dynamic linear model forward filter.
//!
//! Observation equation `Y_t = X θ_t + ε_t`, `ε_t ~ N_r(0, E)`, system equation
//! `θ_t = G θ_{t-1} + ω_t`, `ω_t ~ N_d(0, W)`, with `G = I`, `E = σ²_E I` and
//! `W = σ²_W (XᵀX)⁻¹`.
//!
//! The gain uses the standard Kalman form `A_t = R_t Xᵀ Q_t⁻¹` (d × r), with
//! `C_t = R_t - A_t Q_t A_tᵀ`. For scalar observations this coincides with the
//! `Q_t⁻¹ X R_t` form often quoted for the univariate case.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{CalError, Result};

/// Forecast covariances whose Cholesky condition estimate exceeds this are rejected.
pub const MAX_FORECAST_CONDITION: f64 = 1e12;

/// System matrices of a time-invariant DLM.
#[derive(Debug, Clone, PartialEq)]
pub struct DlmSpec {
    design: DMatrix<f64>,
    system: DMatrix<f64>,
    obs_var: f64,
    sys_var: f64,
    obs_cov: DMatrix<f64>,
    sys_cov: DMatrix<f64>,
}

impl DlmSpec {
    /// Builds `G = I`, `E = σ²_E I_r` and `W = σ²_W (XᵀX)⁻¹` from an `r × d` design.
    pub fn new(design: DMatrix<f64>, obs_var: f64, sys_var: f64) -> Result<Self> {
        if !(obs_var >= 0.0 && obs_var.is_finite()) || !(sys_var >= 0.0 && sys_var.is_finite()) {
            return Err(CalError::Config(format!(
                "variances must be finite and non-negative (obs {obs_var}, sys {sys_var})"
            )));
        }
        let (r, d) = design.shape();
        if r == 0 || d == 0 {
            return Err(CalError::Config("design matrix must be nonempty".into()));
        }
        let xtx = design.transpose() * &design;
        let xtx_inv = xtx
            .cholesky()
            .ok_or(CalError::DegenerateDesign)?
            .inverse();
        let mut sys_cov = xtx_inv * sys_var;
        symmetrize(&mut sys_cov);
        Ok(Self {
            obs_cov: DMatrix::identity(r, r) * obs_var,
            system: DMatrix::identity(d, d),
            design,
            obs_var,
            sys_var,
            sys_cov,
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn system(&self) -> &DMatrix<f64> {
        &self.system
    }

    pub fn obs_var(&self) -> f64 {
        self.obs_var
    }

    pub fn sys_var(&self) -> f64 {
        self.sys_var
    }

    pub fn obs_cov(&self) -> &DMatrix<f64> {
        &self.obs_cov
    }

    pub fn sys_cov(&self) -> &DMatrix<f64> {
        &self.sys_cov
    }

    /// Number of observed series `r`.
    pub fn obs_dim(&self) -> usize {
        self.design.nrows()
    }

    /// State dimension `d`.
    pub fn state_dim(&self) -> usize {
        self.design.ncols()
    }
}

/// Filtered moments `(m_t, C_t)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DlmState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub time: usize,
}

impl DlmState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov, time: 0 }
    }

    /// Default initial information `m₀ = 1_d`, `C₀ = 100 I`.
    pub fn default_prior(d: usize) -> Self {
        Self::new(DVector::from_element(d, 1.0), DMatrix::identity(d, d) * 100.0)
    }
}

/// Prior and one-step forecast moments `(a_t, R_t, f_t, Q_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastMoments {
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
    pub forecast_mean: DVector<f64>,
    pub forecast_cov: DMatrix<f64>,
}

impl ForecastMoments {
    /// True when `Q_t` has no positive diagonal entry, which happens with `E = 0` and `R_t = 0`.
    pub fn is_degenerate(&self) -> bool {
        self.forecast_cov.diagonal().iter().all(|q| *q <= 0.0)
    }
}

/// Result of the posterior step at one time point.
#[derive(Debug, Clone)]
pub struct PosteriorStep {
    pub state: DlmState,
    /// Adaptive coefficient `A_t` (d × r).
    pub gain: DMatrix<f64>,
    /// Innovation `e_t = Y_t - f_t`.
    pub innovation: DVector<f64>,
    /// `log N(Y_t; f_t, Q_t)`.
    pub log_predictive: f64,
}

/// Prior at `t`: `a_t = G m_{t-1}`, `R_t = G C_{t-1} Gᵀ + W`.
pub fn predict_state(state: &DlmState, spec: &DlmSpec) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = spec.state_dim();
    check_dim("state mean", d, state.mean.len())?;
    check_dim("state covariance", d, state.cov.nrows())?;
    check_dim("state covariance", d, state.cov.ncols())?;
    let g = spec.system();
    let a = g * &state.mean;
    let mut r = g * &state.cov * g.transpose() + spec.sys_cov();
    symmetrize(&mut r);
    Ok((a, r))
}

/// One-step forecast: `f_t = X a_t`, `Q_t = X R_t Xᵀ + E`.
pub fn one_step_forecast(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    spec: &DlmSpec,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = spec.state_dim();
    check_dim("prior mean", d, prior_mean.len())?;
    check_dim("prior covariance", d, prior_cov.nrows())?;
    let x = spec.design();
    let f = x * prior_mean;
    let mut q = x * prior_cov * x.transpose() + spec.obs_cov();
    symmetrize(&mut q);
    Ok((f, q))
}

/// Steps (b) and (c) together.
pub fn forecast(state: &DlmState, spec: &DlmSpec) -> Result<ForecastMoments> {
    let (prior_mean, prior_cov) = predict_state(state, spec)?;
    let (forecast_mean, forecast_cov) = one_step_forecast(&prior_mean, &prior_cov, spec)?;
    Ok(ForecastMoments {
        prior_mean,
        prior_cov,
        forecast_mean,
        forecast_cov,
    })
}

/// Posterior at `t`: `m_t = a_t + A_t e_t`, `C_t = R_t - A_t Q_t A_tᵀ`.
///
/// `t` is the time index of the observation; it is carried into the returned
/// state and into any singularity error.
pub fn update_posterior(
    moments: &ForecastMoments,
    obs: &DVector<f64>,
    spec: &DlmSpec,
    t: usize,
) -> Result<PosteriorStep> {
    let r = spec.obs_dim();
    check_dim("observation", r, obs.len())?;
    check_dim("forecast mean", r, moments.forecast_mean.len())?;

    let q = &moments.forecast_cov;
    let chol = checked_cholesky(q, t)?;
    let innovation = obs - &moments.forecast_mean;

    // A_t = R Xᵀ Q⁻¹, computed as (Q⁻¹ X R)ᵀ since Q and R are symmetric.
    let xr = spec.design() * &moments.prior_cov;
    let gain = chol.solve(&xr).transpose();

    let mean = &moments.prior_mean + &gain * &innovation;
    let mut cov = &moments.prior_cov - &gain * q * gain.transpose();
    symmetrize(&mut cov);

    let whitened = chol.l().solve_lower_triangular(&innovation).ok_or(
        CalError::SingularForecast {
            t,
            condition: f64::INFINITY,
        },
    )?;
    let log_det: f64 = chol.l().diagonal().iter().map(|l| 2.0 * l.ln()).sum();
    let log_predictive =
        -0.5 * (r as f64 * (2.0 * PI).ln() + log_det + whitened.norm_squared());

    Ok(PosteriorStep {
        state: DlmState { mean, cov, time: t },
        gain,
        innovation,
        log_predictive,
    })
}

/// Per-time output of the forward filter.
#[derive(Debug, Clone)]
pub struct FilterStep {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub forecast_mean: DVector<f64>,
    pub forecast_cov: DMatrix<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutput {
    pub steps: Vec<FilterStep>,
    /// `Σ_t log N(Y_t; f_t, Q_t)`.
    pub log_likelihood: f64,
}

/// Runs steps (a)–(d) over `observations`, calling `visit(t, moments, step)`
/// after each update. Time indices are 1-based. Returns the total predictive
/// log-likelihood.
pub fn filter_with<F>(
    spec: &DlmSpec,
    observations: &[DVector<f64>],
    init: &DlmState,
    mut visit: F,
) -> Result<f64>
where
    F: FnMut(usize, &ForecastMoments, &PosteriorStep),
{
    if init.time != 0 {
        return Err(CalError::Config(format!(
            "initial state must be at time 0, got {}",
            init.time
        )));
    }
    let mut state = init.clone();
    let mut loglik = 0.0;
    for (i, obs) in observations.iter().enumerate() {
        let t = i + 1;
        let moments = forecast(&state, spec)?;
        let step = update_posterior(&moments, obs, spec, t)?;
        loglik += step.log_predictive;
        visit(t, &moments, &step);
        state = step.state;
    }
    Ok(loglik)
}

/// Runs the filter and keeps every step.
pub fn filter_series(
    spec: &DlmSpec,
    observations: &[DVector<f64>],
    init: &DlmState,
) -> Result<FilterOutput> {
    let mut steps = Vec::with_capacity(observations.len());
    let log_likelihood = filter_with(spec, observations, init, |_, moments, step| {
        steps.push(FilterStep {
            mean: step.state.mean.clone(),
            cov: step.state.cov.clone(),
            forecast_mean: moments.forecast_mean.clone(),
            forecast_cov: moments.forecast_cov.clone(),
        });
    })?;
    Ok(FilterOutput {
        steps,
        log_likelihood,
    })
}

fn checked_cholesky(q: &DMatrix<f64>, t: usize) -> Result<Cholesky<f64, Dyn>> {
    let chol = q.clone().cholesky().ok_or(CalError::SingularForecast {
        t,
        condition: f64::INFINITY,
    })?;
    let diag = chol.l().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let condition = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
    if !(condition <= MAX_FORECAST_CONDITION) {
        return Err(CalError::SingularForecast { t, condition });
    }
    Ok(chol)
}

fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(CalError::Dimension {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_spec(obs_var: f64, sys_var: f64) -> DlmSpec {
        DlmSpec::new(DMatrix::from_element(1, 1, 1.0), obs_var, sys_var).unwrap()
    }

    fn scalar_state(m: f64, c: f64) -> DlmState {
        DlmState::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, c))
    }

    fn two_ref_design() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, 20.0, 1.0, 100.0])
    }

    #[test]
    fn predict_identity_propagation() {
        let (a, r) = predict_state(&scalar_state(0.0, 1.0), &scalar_spec(1.0, 0.0)).unwrap();
        assert_eq!(a[0], 0.0);
        assert_eq!(r[(0, 0)], 1.0);
    }

    #[test]
    fn predict_adds_system_variance() {
        let (a, r) = predict_state(&scalar_state(2.0, 0.5), &scalar_spec(1.0, 0.25)).unwrap();
        assert_eq!(a[0], 2.0);
        assert_relative_eq!(r[(0, 0)], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn predict_two_ref_matches_explicit_inverse() {
        let spec = DlmSpec::new(two_ref_design(), 0.0001, 0.00001).unwrap();
        // (XᵀX) = [[2, 120], [120, 10400]], det = 6400.
        let inv = [[10400.0 / 6400.0, -120.0 / 6400.0], [-120.0 / 6400.0, 2.0 / 6400.0]];
        let c = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
        let state = DlmState::new(DVector::from_vec(vec![1.0, 2.0]), c.clone());
        let (_, r) = predict_state(&state, &spec).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(r[(i, j)], c[(i, j)] + 0.00001 * inv[i][j], epsilon = 1e-14);
                assert_relative_eq!(spec.sys_cov()[(i, j)], 0.00001 * inv[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let spec = DlmSpec::new(two_ref_design(), 1.0, 1.0).unwrap();
        let err = predict_state(&scalar_state(0.0, 1.0), &spec).unwrap_err();
        assert!(matches!(err, CalError::Dimension { .. }));
    }

    #[test]
    fn forecast_scalar() {
        let spec = scalar_spec(1.0, 0.0);
        let (f, q) = one_step_forecast(
            &DVector::from_element(1, 0.0),
            &DMatrix::from_element(1, 1, 1.0),
            &spec,
        )
        .unwrap();
        assert_eq!(f[0], 0.0);
        assert_eq!(q[(0, 0)], 2.0);
    }

    #[test]
    fn forecast_mean_two_ref() {
        let spec = DlmSpec::new(two_ref_design(), 0.0001, 0.00001).unwrap();
        let a = DVector::from_vec(vec![12.7434, 0.02655]);
        let (f, _) = one_step_forecast(&a, &DMatrix::zeros(2, 2), &spec).unwrap();
        assert_relative_eq!(f[0], 12.7434 + 20.0 * 0.02655, epsilon = 1e-12);
        assert_relative_eq!(f[1], 12.7434 + 100.0 * 0.02655, epsilon = 1e-12);
        assert_relative_eq!(f[0], 13.2744, epsilon = 1e-10);
        assert_relative_eq!(f[1], 15.3984, epsilon = 1e-10);
    }

    #[test]
    fn zero_variance_forecast_is_flagged() {
        let spec = scalar_spec(0.0, 0.0);
        let state = scalar_state(1.0, 0.0);
        let moments = forecast(&state, &spec).unwrap();
        assert_eq!(moments.forecast_cov[(0, 0)], 0.0);
        assert!(moments.is_degenerate());
        let err = update_posterior(&moments, &DVector::from_element(1, 1.0), &spec, 7).unwrap_err();
        assert!(matches!(err, CalError::SingularForecast { t: 7, .. }));
    }

    #[test]
    fn scalar_update_matches_precision_addition() {
        let spec = scalar_spec(1.0, 0.0);
        let moments = forecast(&scalar_state(0.0, 1.0), &spec).unwrap();
        let step = update_posterior(&moments, &DVector::from_element(1, 2.0), &spec, 1).unwrap();
        // Conjugate normal: precision 1 + 1 = 2, mean (0*1 + 2*1)/2.
        assert_relative_eq!(step.gain[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(step.state.mean[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(step.state.cov[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_innovation_keeps_prior_mean() {
        let spec = DlmSpec::new(two_ref_design(), 0.01, 0.001).unwrap();
        let state = DlmState::new(DVector::from_vec(vec![1.0, 0.5]), DMatrix::identity(2, 2));
        let moments = forecast(&state, &spec).unwrap();
        let obs = moments.forecast_mean.clone();
        let step = update_posterior(&moments, &obs, &spec, 1).unwrap();
        assert_relative_eq!(step.state.mean, moments.prior_mean, epsilon = 1e-12);
    }

    #[test]
    fn uninformative_observation_leaves_prior() {
        let spec = scalar_spec(1e12, 0.1);
        let moments = forecast(&scalar_state(3.0, 2.0), &spec).unwrap();
        let step = update_posterior(&moments, &DVector::from_element(1, 50.0), &spec, 1).unwrap();
        assert_relative_eq!(step.state.mean[0], moments.prior_mean[0], max_relative = 1e-6);
        assert_relative_eq!(step.state.cov[(0, 0)], moments.prior_cov[(0, 0)], max_relative = 1e-6);
    }

    #[test]
    fn update_never_inflates_and_innovation_identity_holds() {
        let spec = DlmSpec::new(two_ref_design(), 0.05, 0.01).unwrap();
        let state = DlmState::new(
            DVector::from_vec(vec![12.0, 0.03]),
            DMatrix::from_row_slice(2, 2, &[4.0, -0.02, -0.02, 0.001]),
        );
        let moments = forecast(&state, &spec).unwrap();
        let obs = DVector::from_vec(vec![13.5, 15.1]);
        let step = update_posterior(&moments, &obs, &spec, 1).unwrap();
        let diff = &moments.prior_cov - &step.state.cov;
        let eig = diff.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|e| *e >= -1e-12), "R - C not PSD: {eig:?}");
        let lhs = &step.state.mean - &moments.prior_mean;
        let rhs = &step.gain * (&obs - &moments.forecast_mean);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-14);
        assert_eq!(step.state.cov, step.state.cov.transpose());
    }

    #[test]
    fn empty_series() {
        let out = filter_series(&scalar_spec(1.0, 1.0), &[], &scalar_state(0.0, 1.0)).unwrap();
        assert!(out.steps.is_empty());
        assert_eq!(out.log_likelihood, 0.0);
    }

    #[test]
    fn filter_rejects_nonzero_initial_time() {
        let mut init = scalar_state(0.0, 1.0);
        init.time = 3;
        assert!(filter_series(&scalar_spec(1.0, 1.0), &[], &init).is_err());
    }

    #[test]
    fn constant_observations_converge_to_least_squares() {
        // W = 0: the filter is recursive least squares with a diffuse prior.
        let design = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
        let spec = DlmSpec::new(design, 0.01, 0.0).unwrap();
        let obs: Vec<_> = (0..200).map(|_| DVector::from_vec(vec![1.0, 3.0])).collect();
        let out = filter_series(&spec, &obs, &DlmState::default_prior(2)).unwrap();
        // OLS of (1, 3) on [[1,-1],[1,1]] is (2, 1).
        let last = &out.steps.last().unwrap().mean;
        assert!((last[0] - 2.0).abs() < 1e-3 && (last[1] - 1.0).abs() < 1e-3);
        let mut prev = f64::INFINITY;
        for s in &out.steps {
            let dist = ((s.mean[0] - 2.0).powi(2) + (s.mean[1] - 1.0).powi(2)).sqrt();
            assert!(dist <= prev + 1e-12);
            prev = dist;
        }
    }
}
