//! Dynamic calibration by importance resampling over DLM variance proposals.
//!
//! Each proposal `Γ = (σ²_E, σ²_W)` drawn from the hierarchical uniform prior
//! drives a slope-only filter on standardized references. Every proposal turns
//! the unknown-target stream into a calibrated series, either by direct
//! division (`MD1`) or by drawing from the shrunken normal posterior (`MD2`);
//! proposals are then resampled in proportion to their predictive likelihood.

use std::collections::HashMap;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dlm::MAX_FORECAST_CONDITION;
use crate::error::{CalError, Result};
use crate::stats::quantile_sorted;

const PRIOR_STREAM: u64 = 0;
const SIR_STREAM: u64 = 1;
const PROPOSAL_STREAM_BASE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicMethod {
    /// Deterministic division of the centred target by the filtered slope.
    Md1,
    /// Draw from `N(ξ/(1+σ²_Y), 1/(1+σ²_Y))`.
    Md2,
}

/// One proposal `(σ²_E, σ²_W)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePair {
    pub obs_var: f64,
    pub sys_var: f64,
}

impl VariancePair {
    /// True inside the open prior support `0 < σ²_W < σ²_E < 1`.
    pub fn in_support(&self) -> bool {
        0.0 < self.sys_var && self.sys_var < self.obs_var && self.obs_var < 1.0
    }
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// `σ²_E ~ U(0,1)`, `σ²_W | σ²_E ~ U(0, σ²_E)`.
pub fn sample_variance_priors<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<VariancePair> {
    (0..count)
        .map(|_| {
            let obs_var = open_unit(rng);
            let sys_var = obs_var * open_unit(rng);
            VariancePair { obs_var, sys_var }
        })
        .collect()
}

/// References scaled to zero mean and unit population variance, and responses
/// centred by the running mean of all reference responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledCalibration {
    pub x_scaled: Vec<f64>,
    pub x_mean: f64,
    pub x_sd: f64,
    /// `T × r` centred reference responses.
    pub y_star: Vec<Vec<f64>>,
    pub y0_star: Vec<f64>,
    pub cum_means: Vec<f64>,
}

impl ScaledCalibration {
    pub fn len(&self) -> usize {
        self.y0_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y0_star.is_empty()
    }

    pub fn refs(&self) -> usize {
        self.x_scaled.len()
    }
}

pub fn standardize(raw_x: &[f64], raw_y: &[Vec<f64>], raw_y0: &[f64]) -> Result<ScaledCalibration> {
    let r = raw_x.len();
    if r < 2 {
        return Err(CalError::InsufficientData { needed: 2, found: r });
    }
    if raw_y.len() != raw_y0.len() {
        return Err(CalError::Dimension {
            context: "target stream length",
            expected: raw_y.len(),
            found: raw_y0.len(),
        });
    }
    if let Some(row) = raw_y.iter().find(|row| row.len() != r) {
        return Err(CalError::Dimension {
            context: "reference responses per time",
            expected: r,
            found: row.len(),
        });
    }
    let rf = r as f64;
    let x_mean = raw_x.iter().sum::<f64>() / rf;
    let var = raw_x.iter().map(|x| (x - x_mean).powi(2)).sum::<f64>() / rf;
    let x_sd = var.sqrt();
    if !(x_sd > 0.0) || !x_sd.is_finite() {
        return Err(CalError::DegenerateDesign);
    }
    let x_scaled = raw_x.iter().map(|x| (x - x_mean) / x_sd).collect();

    let mut total = 0.0;
    let mut count = 0.0;
    let mut cum_means = Vec::with_capacity(raw_y.len());
    let mut y_star = Vec::with_capacity(raw_y.len());
    let mut y0_star = Vec::with_capacity(raw_y.len());
    for (row, y0) in raw_y.iter().zip(raw_y0) {
        total += row.iter().sum::<f64>();
        count += rf;
        let ybar = total / count;
        cum_means.push(ybar);
        y_star.push(row.iter().map(|y| y - ybar).collect());
        y0_star.push(y0 - ybar);
    }
    Ok(ScaledCalibration {
        x_scaled,
        x_mean,
        x_sd,
        y_star,
        y0_star,
        cum_means,
    })
}

/// Initial moments of the slope state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopePrior {
    pub mean: f64,
    pub var: f64,
}

impl Default for SlopePrior {
    fn default() -> Self {
        Self {
            mean: 1.0,
            var: 100.0,
        }
    }
}

/// Filtered slope path of one proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFilter {
    /// Filtered mean `m_t`.
    pub slope: Vec<f64>,
    /// Filtered variance `C_t`.
    pub slope_var: Vec<f64>,
    /// `tr(Q_t)`.
    pub forecast_trace: Vec<f64>,
    pub log_likelihood: f64,
}

/// Scalar-state filter with `X = x_scaled` (r × 1), `E = σ²_E I`, `W = σ²_W / Σx²`.
///
/// `Q_t = R_t x xᵀ + σ²_E I` is inverted in closed form: its eigenvalues are
/// `σ²_E` (multiplicity r − 1) and `σ²_E + R_t Σx²`.
pub fn filter_slope(pair: VariancePair, scaled: &ScaledCalibration, prior: SlopePrior) -> Result<SlopeFilter> {
    let x = &scaled.x_scaled;
    let r = x.len() as f64;
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let e = pair.obs_var;
    let w = pair.sys_var / sxx;
    let n = scaled.len();
    let mut out = SlopeFilter {
        slope: Vec::with_capacity(n),
        slope_var: Vec::with_capacity(n),
        forecast_trace: Vec::with_capacity(n),
        log_likelihood: 0.0,
    };
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let (mut m, mut c) = (prior.mean, prior.var);
    for (i, y) in scaled.y_star.iter().enumerate() {
        let t = i + 1;
        let a = m;
        let rr = c + w;
        let big = e + rr * sxx;
        let condition = big / e;
        if !(e > 0.0) || !(condition <= MAX_FORECAST_CONDITION) {
            return Err(CalError::SingularForecast {
                t,
                condition: if e > 0.0 { condition } else { f64::INFINITY },
            });
        }
        let (mut ee, mut xe) = (0.0, 0.0);
        for (xj, yj) in x.iter().zip(y) {
            let innov = yj - a * xj;
            ee += innov * innov;
            xe += xj * innov;
        }
        m = a + rr * xe / big;
        c = rr * e / big;
        let quad = (ee - rr * xe * xe / big) / e;
        let log_det = (r - 1.0) * e.ln() + big.ln();
        out.log_likelihood += -0.5 * (r * ln_2pi + log_det + quad);
        out.slope.push(m);
        out.slope_var.push(c);
        out.forecast_trace.push(rr * sxx + r * e);
    }
    Ok(out)
}

/// `y0* / θ`, or `None` when `|θ| < eps`.
pub fn md1_draw(theta: f64, y0_star: f64, eps: f64) -> Option<f64> {
    if theta.abs() < eps || theta == 0.0 {
        None
    } else {
        Some(y0_star / theta)
    }
}

/// Mean and variance of `z₀t | Y*_t`: `(ξ/(1+σ²_Y), 1/(1+σ²_Y))`.
pub fn md2_moments(xi: f64, sigma2_y: f64) -> (f64, f64) {
    let k = 1.0 + sigma2_y;
    (xi / k, 1.0 / k)
}

pub fn md2_draw<R: Rng + ?Sized>(xi: f64, sigma2_y: f64, rng: &mut R) -> f64 {
    let (mean, var) = md2_moments(xi, sigma2_y);
    let z: f64 = rng.sample(StandardNormal);
    mean + var.sqrt() * z
}

/// Scaled calibrated series of one proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalRun {
    pub z: Vec<f64>,
    pub log_weight: f64,
    /// Time indices (0-based) where the slope guard fired.
    pub flagged: Vec<usize>,
}

/// Turns a filtered slope path into calibrated draws. Flagged times reuse the
/// previous draw (0 at the first time); a proposal with more than half its
/// times flagged gets weight `-inf`.
pub fn draws_from_filter<R: Rng + ?Sized>(
    filt: &SlopeFilter,
    scaled: &ScaledCalibration,
    method: DynamicMethod,
    slope_eps: f64,
    rng: &mut R,
) -> ProposalRun {
    let n = scaled.len();
    let mut z = Vec::with_capacity(n);
    let mut flagged = Vec::new();
    let mut prev = 0.0;
    for t in 0..n {
        let theta = filt.slope[t];
        let value = match md1_draw(theta, scaled.y0_star[t], slope_eps) {
            None => {
                flagged.push(t);
                prev
            }
            Some(xi) => match method {
                DynamicMethod::Md1 => xi,
                DynamicMethod::Md2 => md2_draw(xi, filt.forecast_trace[t], rng),
            },
        };
        z.push(value);
        prev = value;
    }
    let log_weight = proposal_log_weight(filt, flagged.len());
    ProposalRun {
        z,
        log_weight,
        flagged,
    }
}

pub fn run_proposal<R: Rng + ?Sized>(
    pair: VariancePair,
    scaled: &ScaledCalibration,
    method: DynamicMethod,
    prior: SlopePrior,
    slope_eps: f64,
    rng: &mut R,
) -> Result<ProposalRun> {
    let filt = filter_slope(pair, scaled, prior)?;
    Ok(draws_from_filter(&filt, scaled, method, slope_eps, rng))
}

/// Normalized importance probabilities `exp(w - max) / Σ exp(w - max)`.
pub fn normalized_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|w| !w.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(CalError::NoViableProposal);
    }
    let exps: Vec<f64> = log_weights
        .iter()
        .map(|w| if w.is_nan() { 0.0 } else { (w - max).exp() })
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Draws `n` proposal indices with replacement in proportion to `exp(log_weight)`.
pub fn sir_resample<R: Rng + ?Sized>(log_weights: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let probs = normalized_weights(log_weights)?;
    let dist = WeightedIndex::new(&probs).map_err(|_| CalError::NoViableProposal)?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Effective sample size `1 / Σ p²` of normalized weights.
pub fn effective_sample_size(probs: &[f64]) -> f64 {
    1.0 / probs.iter().map(|p| p * p).sum::<f64>()
}

pub fn rescale(z: &[f64], x_mean: f64, x_sd: f64) -> Vec<f64> {
    z.iter().map(|z| x_mean + z * x_sd).collect()
}

pub fn unscale(x: &[f64], x_mean: f64, x_sd: f64) -> Vec<f64> {
    x.iter().map(|x| (x - x_mean) / x_sd).collect()
}

/// Resampled calibrated series on the original scale, one row per accepted draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDraws {
    pub draws: Vec<Vec<f64>>,
    /// Proposal each row was copied from.
    pub source: Vec<usize>,
    pub method: DynamicMethod,
    pub burn_in: usize,
}

impl CalibrationDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Series length `T`.
    pub fn horizon(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }
}

/// Per-time median and central credible band, starting at time index `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalSummarySeries {
    pub start: usize,
    pub median: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

impl CalSummarySeries {
    pub fn len(&self) -> usize {
        self.median.len()
    }

    pub fn is_empty(&self) -> bool {
        self.median.is_empty()
    }
}

/// Type-7 quantiles across draws at every `t >= burn_in`.
pub fn summarize(draws: &CalibrationDraws, level: f64) -> Result<CalSummarySeries> {
    if draws.len() < 2 {
        return Err(CalError::InsufficientData {
            needed: 2,
            found: draws.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CalError::Config(format!("credible level must lie in (0,1), got {level}")));
    }
    let horizon = draws.horizon();
    let start = draws.burn_in.min(horizon);
    let lo_p = 0.5 * (1.0 - level);
    let hi_p = 0.5 * (1.0 + level);
    let mut column = vec![0.0; draws.len()];
    let mut out = CalSummarySeries {
        start,
        median: Vec::with_capacity(horizon - start),
        lower: Vec::with_capacity(horizon - start),
        upper: Vec::with_capacity(horizon - start),
        level,
    };
    for t in start..horizon {
        for (slot, row) in column.iter_mut().zip(&draws.draws) {
            *slot = row[t];
        }
        column.sort_by(f64::total_cmp);
        out.lower.push(quantile_sorted(&column, lo_p));
        out.median.push(quantile_sorted(&column, 0.5));
        out.upper.push(quantile_sorted(&column, hi_p));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicConfig {
    /// Number of variance proposals `M`.
    pub proposals: usize,
    /// Number of resampled series `N`.
    pub accepted: usize,
    pub burn_in: usize,
    pub level: f64,
    /// Guard on the filtered slope in standardized units.
    pub slope_eps: f64,
    pub prior: SlopePrior,
    pub seed: u64,
    /// Give every accepted `MD2` series its own posterior draws instead of
    /// copying the draws made for the proposal it was resampled from.
    pub md2_redraw: bool,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self {
            proposals: 5000,
            accepted: 1000,
            burn_in: 0,
            level: 0.95,
            slope_eps: 1e-8,
            prior: SlopePrior::default(),
            seed: 0,
            md2_redraw: true,
        }
    }
}

impl DynamicConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.proposals == 0 {
            return Err(CalError::Config("proposal count M must be at least 1".into()));
        }
        if self.accepted < 2 {
            return Err(CalError::Config("accepted count N must be at least 2".into()));
        }
        if horizon == 0 {
            return Err(CalError::InsufficientData { needed: 1, found: 0 });
        }
        if self.burn_in >= horizon {
            return Err(CalError::Config(format!(
                "burn-in {} must be below the series length {horizon}",
                self.burn_in
            )));
        }
        if !(self.slope_eps >= 0.0) {
            return Err(CalError::Config("slope_eps must be non-negative".into()));
        }
        if !(self.prior.var > 0.0) {
            return Err(CalError::Config("prior slope variance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub proposals: Vec<VariancePair>,
    pub log_weights: Vec<f64>,
    /// Normalized importance probability of each proposal.
    pub acceptance_mass: Vec<f64>,
    pub effective_sample_size: f64,
    /// Proposals rejected because the forecast covariance was singular.
    pub singular_proposals: usize,
    /// Total slope-guard firings over all proposals and times.
    pub instability_flags: usize,
    /// Number of proposals whose guard fired at each time.
    pub flags_per_time: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicResult {
    pub draws: CalibrationDraws,
    pub summary: CalSummarySeries,
    pub diagnostics: Diagnostics,
}

fn proposal_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PROPOSAL_STREAM_BASE + index as u64);
    rng
}

fn slot_rng(seed: u64, proposals: usize, slot: usize) -> ChaCha8Rng {
    stream_rng(seed, PROPOSAL_STREAM_BASE + (proposals + slot) as u64)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs the full pipeline from raw references `x` (length r), reference
/// responses (T × r) and the target stream (T).
pub fn calibrate_dynamic(
    x: &[f64],
    y_refs: &[Vec<f64>],
    y0: &[f64],
    method: DynamicMethod,
    config: &DynamicConfig,
) -> Result<DynamicResult> {
    let mut out = calibrate_dynamic_methods(x, y_refs, y0, &[method], config)?;
    Ok(out.remove(0))
}

/// Like [`calibrate_dynamic`] but shares the proposals, filter runs and
/// resampling indices across several methods.
pub fn calibrate_dynamic_methods(
    x: &[f64],
    y_refs: &[Vec<f64>],
    y0: &[f64],
    methods: &[DynamicMethod],
    config: &DynamicConfig,
) -> Result<Vec<DynamicResult>> {
    let scaled = standardize(x, y_refs, y0)?;
    calibrate_scaled(&scaled, methods, config)
}

/// Time indices (0-based) at which `|m_t| < eps`.
pub fn slope_flags(filt: &SlopeFilter, eps: f64) -> Vec<usize> {
    filt.slope
        .iter()
        .enumerate()
        .filter(|(_, m)| md1_draw(**m, 1.0, eps).is_none())
        .map(|(t, _)| t)
        .collect()
}

/// Importance log weight: the predictive log-likelihood, or `-inf` when more
/// than half the times are flagged.
pub fn proposal_log_weight(filt: &SlopeFilter, flagged: usize) -> f64 {
    if 2 * flagged > filt.slope.len() {
        f64::NEG_INFINITY
    } else {
        filt.log_likelihood
    }
}

pub fn calibrate_scaled(
    scaled: &ScaledCalibration,
    methods: &[DynamicMethod],
    config: &DynamicConfig,
) -> Result<Vec<DynamicResult>> {
    let horizon = scaled.len();
    config.validate(horizon)?;
    if methods.is_empty() {
        return Ok(Vec::new());
    }
    let pairs = sample_variance_priors(config.proposals, &mut stream_rng(config.seed, PRIOR_STREAM));

    // Weights need only the filter, so the draws are deferred until the
    // resampled proposals are known.
    let screened: Vec<Option<(f64, Vec<usize>)>> = pairs
        .par_iter()
        .map(|pair| {
            let filt = filter_slope(*pair, scaled, config.prior).ok()?;
            let flagged = slope_flags(&filt, config.slope_eps);
            Some((proposal_log_weight(&filt, flagged.len()), flagged))
        })
        .collect();

    let singular = screened.iter().filter(|r| r.is_none()).count();
    let log_weights: Vec<f64> = screened
        .iter()
        .map(|r| r.as_ref().map_or(f64::NEG_INFINITY, |(w, _)| *w))
        .collect();
    let mut flags_per_time = vec![0usize; horizon];
    for (_, flagged) in screened.iter().flatten() {
        for &t in flagged {
            flags_per_time[t] += 1;
        }
    }
    let probs = normalized_weights(&log_weights)?;
    let ess = effective_sample_size(&probs);
    let dist = WeightedIndex::new(&probs).map_err(|_| CalError::NoViableProposal)?;
    let mut sir_rng = stream_rng(config.seed, SIR_STREAM);
    let source: Vec<usize> = (0..config.accepted).map(|_| dist.sample(&mut sir_rng)).collect();

    let mut unique = source.clone();
    unique.sort_unstable();
    unique.dedup();
    let filters: HashMap<usize, SlopeFilter> = unique
        .par_iter()
        .map(|&m| Ok((m, filter_slope(pairs[m], scaled, config.prior)?)))
        .collect::<Result<_>>()?;
    let proposal_runs: HashMap<usize, Vec<ProposalRun>> = unique
        .par_iter()
        .map(|&m| {
            let mut rng = proposal_rng(config.seed, m);
            let runs = methods
                .iter()
                .map(|method| draws_from_filter(&filters[&m], scaled, *method, config.slope_eps, &mut rng))
                .collect();
            (m, runs)
        })
        .collect();

    let diagnostics = Diagnostics {
        proposals: pairs,
        log_weights,
        acceptance_mass: probs,
        effective_sample_size: ess,
        singular_proposals: singular,
        instability_flags: flags_per_time.iter().sum(),
        flags_per_time,
    };

    methods
        .iter()
        .enumerate()
        .map(|(k, method)| {
            let redraw = *method == DynamicMethod::Md2 && config.md2_redraw;
            let draws: Vec<Vec<f64>> = source
                .par_iter()
                .enumerate()
                .map(|(slot, &m)| {
                    let z = if redraw {
                        let mut rng = slot_rng(config.seed, config.proposals, slot);
                        draws_from_filter(&filters[&m], scaled, *method, config.slope_eps, &mut rng).z
                    } else {
                        proposal_runs[&m][k].z.clone()
                    };
                    rescale(&z, scaled.x_mean, scaled.x_sd)
                })
                .collect();
            let draws = CalibrationDraws {
                draws,
                source: source.clone(),
                method: *method,
                burn_in: config.burn_in,
            };
            let summary = summarize(&draws, config.level)?;
            Ok(DynamicResult {
                draws,
                summary,
                diagnostics: diagnostics.clone(),
            })
        })
        .collect()
}
