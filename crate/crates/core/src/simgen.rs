//! Synthetic calibration experiments with drifting coefficients.
//!
//! Reference responses follow `y_jt = β0t + (β1t + g_t) x_j + ε_jt` with
//! `θ_t = (β0t, β1t) ~ N(μ, σ²_W (XᵀX)⁻¹)` and `ε_t ~ N_r(0, σ²_E I)`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CalError, Result};

/// Mean of the coefficient process `(β0, β1)`.
pub const THETA_MEAN: [f64; 2] = [12.7434, 0.02655];

/// `(σ²_E, σ²_W)` pairs of the study grid, ordered by signal-to-noise ratio.
pub const VARIANCE_GRID: [(f64, f64); 6] = [
    (1e-4, 5e-5),
    (1e-4, 1e-5),
    (1e-3, 5e-5),
    (1e-3, 1e-5),
    (1e-2, 5e-5),
    (1e-2, 1e-5),
];

/// Signal-to-noise ratio `σ²_E / σ²_W` rounded to the nearest integer.
pub fn snr(obs_var: f64, sys_var: f64) -> u32 {
    (obs_var / sys_var).round() as u32
}

/// Variance pair of the study grid with the given ratio.
pub fn variances_for_snr(r: u32) -> Option<(f64, f64)> {
    VARIANCE_GRID.iter().copied().find(|(e, w)| snr(*e, *w) == r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefSet {
    Two,
    Five,
}

impl RefSet {
    pub fn values(self) -> Vec<f64> {
        match self {
            RefSet::Two => vec![20.0, 100.0],
            RefSet::Five => vec![20.0, 40.0, 60.0, 80.0, 100.0],
        }
    }

    pub fn count(self) -> usize {
        match self {
            RefSet::Two => 2,
            RefSet::Five => 5,
        }
    }

    pub fn from_count(n: usize) -> Option<Self> {
        match n {
            2 => Some(RefSet::Two),
            5 => Some(RefSet::Five),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainKind {
    ConstantZero,
    Stepped,
    Sinusoidal,
}

impl GainKind {
    pub const ALL: [GainKind; 3] = [GainKind::ConstantZero, GainKind::Stepped, GainKind::Sinusoidal];

    pub fn label(self) -> &'static str {
        match self {
            GainKind::ConstantZero => "constant",
            GainKind::Stepped => "stepped",
            GainKind::Sinusoidal => "sinusoidal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthCase {
    Interpolation,
    Extrapolation,
}

impl TruthCase {
    pub fn label(self) -> &'static str {
        match self {
            TruthCase::Interpolation => "interpolation",
            TruthCase::Extrapolation => "extrapolation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaProcess {
    /// Independent draws around the mean at every time.
    Iid,
    /// Random walk started at the mean with the same step covariance.
    RandomWalk,
}

/// Which line generates the unknown-target responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLine {
    /// `μ0 + μ1 x0t`.
    Mean,
    /// `β0t + (β1t + g_t) x0t`, the same line as the references.
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterpolationPath {
    Constant { value: f64 },
    RandomWalk { start: f64, step_sd: f64 },
}

impl Default for InterpolationPath {
    fn default() -> Self {
        InterpolationPath::Constant { value: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub refs: RefSet,
    pub horizon: usize,
    pub obs_var: f64,
    pub sys_var: f64,
    pub gain: GainKind,
    /// Levels of the stepped gain, applied over equal-length segments.
    pub step_levels: Vec<f64>,
    pub truth: TruthCase,
    pub interpolation: InterpolationPath,
    pub extrapolation_start: f64,
    pub extrapolation_step_sd: f64,
    pub theta_process: ThetaProcess,
    pub target_line: TargetLine,
    /// Add `N(0, σ²_E)` noise to the target responses.
    pub target_noise: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            refs: RefSet::Two,
            horizon: 1000,
            obs_var: 1e-4,
            sys_var: 1e-5,
            gain: GainKind::ConstantZero,
            step_levels: vec![0.05, -0.05, 0.05, -0.05],
            truth: TruthCase::Interpolation,
            interpolation: InterpolationPath::default(),
            extrapolation_start: 105.0,
            extrapolation_step_sd: 0.5,
            theta_process: ThetaProcess::Iid,
            target_line: TargetLine::Mean,
            target_noise: false,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn snr(&self) -> u32 {
        snr(self.obs_var, self.sys_var)
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.obs_var) || !finite_nonneg(self.sys_var) {
            return Err(CalError::Config("variances must be finite and non-negative".into()));
        }
        if self.gain == GainKind::Stepped && self.step_levels.is_empty() {
            return Err(CalError::Config("stepped gain needs at least one level".into()));
        }
        if !finite_nonneg(self.extrapolation_step_sd) {
            return Err(CalError::Config("extrapolation step sd must be non-negative".into()));
        }
        if !(100.0..=110.0).contains(&self.extrapolation_start) {
            return Err(CalError::Config("extrapolation walk must start inside [100, 110]".into()));
        }
        Ok(())
    }
}

/// Design matrix with an intercept column and the reference values.
pub fn make_design(refs: RefSet) -> DMatrix<f64> {
    let x = refs.values();
    DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i] })
}

/// `T × 2` coefficient path, one row `(β0t, β1t)` per time.
pub fn gen_theta_path<R: Rng + ?Sized>(
    sys_var: f64,
    design: &DMatrix<f64>,
    horizon: usize,
    process: ThetaProcess,
    rng: &mut R,
) -> Result<Vec<[f64; 2]>> {
    let xtx = design.transpose() * design;
    let cov = xtx.cholesky().ok_or(CalError::DegenerateDesign)?.inverse() * sys_var;
    let mean = DVector::from_column_slice(&THETA_MEAN);
    let mut out = Vec::with_capacity(horizon);
    if sys_var == 0.0 {
        out.resize(horizon, THETA_MEAN);
        return Ok(out);
    }
    let l = cov.cholesky().ok_or(CalError::DegenerateDesign)?.unpack();
    let mut state = mean.clone();
    for _ in 0..horizon {
        let z = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = &l * z;
        let theta = match process {
            ThetaProcess::Iid => &mean + step,
            ThetaProcess::RandomWalk => {
                state += step;
                state.clone()
            }
        };
        out.push([theta[0], theta[1]]);
    }
    Ok(out)
}

/// Gain at 1-based time `t` for a series of length `horizon`.
pub fn gain(kind: GainKind, t: f64, horizon: usize, step_levels: &[f64]) -> f64 {
    match kind {
        GainKind::ConstantZero => 0.0,
        GainKind::Sinusoidal => 0.1 * (0.025 * t).sin(),
        GainKind::Stepped => {
            if step_levels.is_empty() || horizon == 0 {
                return 0.0;
            }
            let k = step_levels.len();
            let idx = (((t - 1.0).max(0.0) * k as f64) / horizon as f64).floor() as usize;
            step_levels[idx.min(k - 1)]
        }
    }
}

fn reflect(mut x: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    if width <= 0.0 {
        return lo;
    }
    // Fold onto [lo, hi] however far the step overshoots.
    let period = 2.0 * width;
    let mut u = (x - lo).rem_euclid(period);
    if u > width {
        u = period - u;
    }
    x = lo + u;
    x.clamp(lo, hi)
}

/// Gaussian walk reflected at the bounds.
pub fn reflected_walk<R: Rng + ?Sized>(
    start: f64,
    step_sd: f64,
    lo: f64,
    hi: f64,
    horizon: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut x = start.clamp(lo, hi);
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        if step_sd > 0.0 {
            x = reflect(x + step_sd * rng.sample::<f64, _>(StandardNormal), lo, hi);
        }
        out.push(x);
    }
    out
}

pub fn gen_x0_truth<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Vec<f64> {
    let horizon = config.horizon;
    match config.truth {
        TruthCase::Extrapolation => reflected_walk(
            config.extrapolation_start,
            config.extrapolation_step_sd,
            100.0,
            110.0,
            horizon,
            rng,
        ),
        TruthCase::Interpolation => match config.interpolation {
            InterpolationPath::Constant { value } => vec![value.clamp(20.0, 100.0); horizon],
            InterpolationPath::RandomWalk { start, step_sd } => {
                reflected_walk(start, step_sd, 20.0, 100.0, horizon, rng)
            }
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDataset {
    pub x_refs: Vec<f64>,
    pub theta_path: Vec<[f64; 2]>,
    pub gain_path: Vec<f64>,
    /// `T × r` reference responses.
    pub y_refs: Vec<Vec<f64>>,
    pub x0_truth: Vec<f64>,
    pub y0_obs: Vec<f64>,
}

impl SimDataset {
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.x_refs.len(), 2, |i, j| if j == 0 { 1.0 } else { self.x_refs[i] })
    }

    pub fn len(&self) -> usize {
        self.y0_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y0_obs.is_empty()
    }

    /// Pooled `(x, y)` pairs of all reference measurements.
    pub fn pooled_refs(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.y_refs.len() * self.x_refs.len();
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for row in &self.y_refs {
            xs.extend_from_slice(&self.x_refs);
            ys.extend_from_slice(row);
        }
        (xs, ys)
    }

    /// CSV with columns `t, x0_truth, y0_obs, y_ref_1..r, beta0, beta1, gain`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "x0_truth".into(), "y0_obs".into()];
        header.extend((1..=self.x_refs.len()).map(|j| format!("y_ref_{j}")));
        header.extend(["beta0".to_string(), "beta1".into(), "gain".into()]);
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![(t + 1).to_string(), fmt(self.x0_truth[t]), fmt(self.y0_obs[t])];
            rec.extend(self.y_refs[t].iter().map(|v| fmt(*v)));
            rec.push(fmt(self.theta_path[t][0]));
            rec.push(fmt(self.theta_path[t][1]));
            rec.push(fmt(self.gain_path[t]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads the CSV layout written by [`SimDataset::write_csv`]; `x_refs` must be supplied.
    pub fn read_csv<R: std::io::Read>(input: R, x_refs: Vec<f64>) -> Result<Self> {
        let r = x_refs.len();
        let mut rdr = csv::Reader::from_reader(input);
        let mut ds = SimDataset {
            x_refs,
            theta_path: Vec::new(),
            gain_path: Vec::new(),
            y_refs: Vec::new(),
            x0_truth: Vec::new(),
            y0_obs: Vec::new(),
        };
        let width = rdr.headers()?.len();
        if width != r + 6 {
            return Err(CalError::Parse {
                line: 1,
                message: format!("expected {} columns for {r} references, found {width}", r + 6),
            });
        }
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| CalError::Parse {
                        line,
                        message: format!("bad number {s:?}: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            ds.x0_truth.push(vals[1]);
            ds.y0_obs.push(vals[2]);
            ds.y_refs.push(vals[3..3 + r].to_vec());
            ds.theta_path.push([vals[3 + r], vals[4 + r]]);
            ds.gain_path.push(vals[5 + r]);
        }
        Ok(ds)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn gen_dataset(config: &SimConfig) -> Result<SimDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let design = make_design(config.refs);
    let x_refs = config.refs.values();
    let horizon = config.horizon;
    let theta_path = gen_theta_path(config.sys_var, &design, horizon, config.theta_process, &mut rng)?;
    let gain_path: Vec<f64> = (1..=horizon)
        .map(|t| gain(config.gain, t as f64, horizon, &config.step_levels))
        .collect();
    let x0_truth = gen_x0_truth(config, &mut rng);
    let noise = Normal::new(0.0, config.obs_var.sqrt()).map_err(|e| CalError::Config(e.to_string()))?;

    let mut y_refs = Vec::with_capacity(horizon);
    let mut y0_obs = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let [b0, b1] = theta_path[t];
        let slope = b1 + gain_path[t];
        y_refs.push(x_refs.iter().map(|x| b0 + slope * x + noise.sample(&mut rng)).collect());
        let x0 = x0_truth[t];
        let mut y0 = match config.target_line {
            TargetLine::Mean => THETA_MEAN[0] + THETA_MEAN[1] * x0,
            TargetLine::Current => b0 + slope * x0,
        };
        if config.target_noise {
            y0 += noise.sample(&mut rng);
        }
        y0_obs.push(y0);
    }
    Ok(SimDataset {
        x_refs,
        theta_path,
        gain_path,
        y_refs,
        x0_truth,
        y0_obs,
    })
}
