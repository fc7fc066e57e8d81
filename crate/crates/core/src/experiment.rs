//! Grid study over references, gain regimes, signal-to-noise ratios and truth cases.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamic::{calibrate_dynamic_methods, DynamicConfig, DynamicMethod, SlopePrior};
use crate::error::{CalError, Result};
use crate::metrics::{aggregate, AggregateMetrics, SeriesMetrics};
use crate::simgen::{
    gen_dataset, variances_for_snr, GainKind, InterpolationPath, RefSet, SimConfig, SimDataset,
    TargetLine, ThetaProcess, TruthCase,
};
use crate::static_cal::{estimate, ols_fit, StaticMethod};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "DYNCAL_THREADS";

pub const RESULT_HEADER: [&str; 9] = [
    "case", "gain", "r", "refs", "method", "av_mse", "av_cp", "av_iw", "wall_ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MD1")]
    Md1,
    #[serde(rename = "MD2")]
    Md2,
    #[serde(rename = "MF1")]
    Mf1,
    #[serde(rename = "MF2")]
    Mf2,
    #[serde(rename = "MB1")]
    Mb1,
    #[serde(rename = "MB2")]
    Mb2,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Md1, Method::Md2, Method::Mf1, Method::Mf2, Method::Mb1, Method::Mb2];

    pub fn label(self) -> &'static str {
        match self {
            Method::Md1 => "MD1",
            Method::Md2 => "MD2",
            Method::Mf1 => "MF1",
            Method::Mf2 => "MF2",
            Method::Mb1 => "MB1",
            Method::Mb2 => "MB2",
        }
    }

    pub fn dynamic(self) -> Option<DynamicMethod> {
        match self {
            Method::Md1 => Some(DynamicMethod::Md1),
            Method::Md2 => Some(DynamicMethod::Md2),
            _ => None,
        }
    }

    pub fn static_method(self) -> Option<StaticMethod> {
        match self {
            Method::Mf1 => Some(StaticMethod::Classical),
            Method::Mf2 => Some(StaticMethod::Inverse),
            Method::Mb1 => Some(StaticMethod::Hoadley),
            Method::Mb2 => Some(StaticMethod::HunterLamboy),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = CalError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CalError::Config(format!("unknown method {s:?}")))
    }
}

/// Full-factorial study design. Unset JSON keys take the paper-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentGrid {
    pub cases: Vec<TruthCase>,
    pub gains: Vec<GainKind>,
    pub snrs: Vec<u32>,
    pub refs: Vec<RefSet>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub horizon: usize,
    pub proposals: usize,
    pub accepted: usize,
    pub burn_in: usize,
    pub level: f64,
    pub slope_eps: f64,
    pub prior: SlopePrior,
    pub seed: u64,
    pub step_levels: Vec<f64>,
    pub interpolation: InterpolationPath,
    pub theta_process: ThetaProcess,
    pub target_line: TargetLine,
    pub target_noise: bool,
    pub md2_redraw: bool,
    /// Fill the `wall_ms` column. Off by default so output is byte-reproducible.
    pub timing: bool,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self::paper_scale()
    }
}

impl ExperimentGrid {
    pub fn paper_scale() -> Self {
        let sim = SimConfig::default();
        let dynamic = DynamicConfig::default();
        Self {
            cases: vec![TruthCase::Interpolation, TruthCase::Extrapolation],
            gains: GainKind::ALL.to_vec(),
            snrs: vec![2, 10, 20, 100, 200, 1000],
            refs: vec![RefSet::Two, RefSet::Five],
            methods: Method::ALL.to_vec(),
            replicates: 100,
            horizon: 1000,
            proposals: dynamic.proposals,
            accepted: dynamic.accepted,
            burn_in: 0,
            level: 0.95,
            slope_eps: dynamic.slope_eps,
            prior: dynamic.prior,
            seed: 20130,
            step_levels: sim.step_levels,
            interpolation: sim.interpolation,
            theta_process: sim.theta_process,
            target_line: sim.target_line,
            target_noise: sim.target_noise,
            md2_redraw: dynamic.md2_redraw,
            timing: false,
        }
    }

    pub fn desk_scale() -> Self {
        Self::paper_scale().with_desk_scale()
    }

    pub fn with_desk_scale(mut self) -> Self {
        self.replicates = 20;
        self.horizon = 500;
        self.proposals = 2000;
        self.accepted = 500;
        self
    }

    pub fn with_paper_scale(mut self) -> Self {
        let p = Self::paper_scale();
        self.replicates = p.replicates;
        self.horizon = p.horizon;
        self.proposals = p.proposals;
        self.accepted = p.accepted;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let grid: Self = serde_json::from_str(text)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.snrs {
            if variances_for_snr(*r).is_none() {
                return Err(CalError::Config(format!(
                    "signal-to-noise ratio {r} is not on the grid (2, 10, 20, 100, 200, 1000)"
                )));
            }
        }
        if self.replicates == 0 {
            return Err(CalError::Config("replicates must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(CalError::Config("horizon must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CalError::Config("level must lie in (0,1)".into()));
        }
        if self.methods.iter().any(|m| m.dynamic().is_some()) {
            self.dynamic_config(0).validate(self.horizon)?;
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &case in &self.cases {
            for &gain in &self.gains {
                for &snr in &self.snrs {
                    for &refs in &self.refs {
                        out.push(Cell { case, gain, snr, refs });
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    pub fn dynamic_config(&self, seed: u64) -> DynamicConfig {
        DynamicConfig {
            proposals: self.proposals,
            accepted: self.accepted,
            burn_in: self.burn_in,
            level: self.level,
            slope_eps: self.slope_eps,
            prior: self.prior,
            seed,
            md2_redraw: self.md2_redraw,
        }
    }

    pub fn sim_config(&self, cell: Cell, seed: u64) -> SimConfig {
        let (obs_var, sys_var) = variances_for_snr(cell.snr).expect("validated ratio");
        SimConfig {
            refs: cell.refs,
            horizon: self.horizon,
            obs_var,
            sys_var,
            gain: cell.gain,
            step_levels: self.step_levels.clone(),
            truth: cell.case,
            interpolation: self.interpolation,
            theta_process: self.theta_process,
            target_line: self.target_line,
            target_noise: self.target_noise,
            seed,
            ..SimConfig::default()
        }
    }
}

/// One scenario of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub case: TruthCase,
    pub gain: GainKind,
    pub snr: u32,
    pub refs: RefSet,
}

impl Cell {
    fn key(&self) -> [u64; 4] {
        [
            self.case as u64,
            self.gain as u64,
            u64::from(self.snr),
            self.refs.count() as u64,
        ]
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one replicate, a hash of the master seed, the cell and the replicate index.
pub fn replicate_seed(master: u64, cell: Cell, replicate: usize) -> u64 {
    let mut h = splitmix(master);
    for k in cell.key().into_iter().chain([replicate as u64]) {
        h = splitmix(h ^ k);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub cell: Cell,
    pub method: Method,
    pub metrics: Option<AggregateMetrics>,
    pub wall_ms: Option<f64>,
    pub error: Option<String>,
}

/// Per-replicate metrics of every method in one cell.
#[derive(Debug)]
pub struct CellOutcome {
    pub cell: Cell,
    pub per_method: Vec<(Method, Result<Vec<SeriesMetrics>>)>,
    pub wall_ms: Vec<f64>,
}

impl CellOutcome {
    pub fn metrics(&self, method: Method) -> Option<&[SeriesMetrics]> {
        self.per_method
            .iter()
            .find(|(m, _)| *m == method)
            .and_then(|(_, r)| r.as_ref().ok().map(Vec::as_slice))
    }

    pub fn aggregate(&self, method: Method) -> Option<AggregateMetrics> {
        self.metrics(method).and_then(|m| aggregate(m).ok())
    }
}

/// Point and interval series of every requested method on one dataset.
pub struct MethodSeries {
    pub method: Method,
    pub start: usize,
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn calibrate_static_series(ds: &SimDataset, method: StaticMethod, level: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (xs, ys) = ds.pooled_refs();
    let fit = ols_fit(&xs, &ys)?;
    let n = ds.len();
    let (mut p, mut l, mut u) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for y0 in &ds.y0_obs {
        let e = estimate(&fit, *y0, method, level)?;
        p.push(e.point);
        l.push(e.lower);
        u.push(e.upper);
    }
    Ok((p, l, u))
}

/// Runs every method on one dataset; dynamic methods share their proposals.
pub fn calibrate_all(ds: &SimDataset, methods: &[Method], dynamic: &DynamicConfig, level: f64) -> Vec<(Method, Result<MethodSeries>)> {
    let dyn_methods: Vec<Method> = methods.iter().copied().filter(|m| m.dynamic().is_some()).collect();
    let mut out = Vec::with_capacity(methods.len());
    if !dyn_methods.is_empty() {
        let kinds: Vec<DynamicMethod> = dyn_methods.iter().filter_map(|m| m.dynamic()).collect();
        match calibrate_dynamic_methods(&ds.x_refs, &ds.y_refs, &ds.y0_obs, &kinds, dynamic) {
            Ok(results) => {
                for (m, res) in dyn_methods.iter().zip(results) {
                    let s = res.summary;
                    out.push((
                        *m,
                        Ok(MethodSeries {
                            method: *m,
                            start: s.start,
                            point: s.median,
                            lower: s.lower,
                            upper: s.upper,
                        }),
                    ));
                }
            }
            Err(e) => {
                let msg = e.to_string();
                for m in &dyn_methods {
                    out.push((*m, Err(CalError::Config(msg.clone()))));
                }
            }
        }
    }
    for m in methods {
        if let Some(sm) = m.static_method() {
            let res = calibrate_static_series(ds, sm, level).map(|(point, lower, upper)| MethodSeries {
                method: *m,
                start: 0,
                point,
                lower,
                upper,
            });
            out.push((*m, res));
        }
    }
    out.sort_by_key(|(m, _)| *m);
    out
}

fn series_metrics(series: &MethodSeries, truth: &[f64]) -> Result<SeriesMetrics> {
    SeriesMetrics::compute(&series.point, &series.lower, &series.upper, &truth[series.start..])
}

pub fn run_cell(grid: &ExperimentGrid, cell: Cell) -> CellOutcome {
    let mut methods = grid.methods.clone();
    methods.sort();
    methods.dedup();
    let reps: Vec<(Vec<(Method, Result<SeriesMetrics>)>, f64)> = (0..grid.replicates)
        .into_par_iter()
        .map(|rep| {
            let start = Instant::now();
            let seed = replicate_seed(grid.seed, cell, rep);
            let per = match gen_dataset(&grid.sim_config(cell, seed)) {
                Ok(ds) => calibrate_all(&ds, &methods, &grid.dynamic_config(seed), grid.level)
                    .into_iter()
                    .map(|(m, r)| (m, r.and_then(|s| series_metrics(&s, &ds.x0_truth))))
                    .collect(),
                Err(e) => {
                    let msg = e.to_string();
                    methods.iter().map(|m| (*m, Err(CalError::Config(msg.clone())))).collect()
                }
            };
            (per, start.elapsed().as_secs_f64() * 1e3)
        })
        .collect();

    let per_method = methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let mut vals = Vec::with_capacity(reps.len());
            for (rep, (per, _)) in reps.iter().enumerate() {
                match &per[k].1 {
                    Ok(v) => vals.push(*v),
                    Err(e) => {
                        return (
                            *m,
                            Err(CalError::Config(format!("replicate {rep}: {e}"))),
                        )
                    }
                }
            }
            (*m, Ok(vals))
        })
        .collect();
    CellOutcome {
        cell,
        per_method,
        wall_ms: reps.iter().map(|(_, w)| *w).collect(),
    }
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|n| *n > 0)
}

/// Runs `f` inside a pool sized by `DYNCAL_THREADS` when set.
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match thread_cap() {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CalError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Runs all cells and returns one row per (cell, method), sorted by
/// (case, gain, r, refs, method).
pub fn run_experiment(grid: &ExperimentGrid) -> Result<Vec<ResultRow>> {
    grid.validate()?;
    if grid.methods.is_empty() {
        return Ok(Vec::new());
    }
    let cells = grid.cells();
    let outcomes = with_thread_cap(|| {
        cells
            .iter()
            .map(|cell| {
                let start = Instant::now();
                let out = run_cell(grid, *cell);
                (out, start.elapsed().as_secs_f64() * 1e3)
            })
            .collect::<Vec<_>>()
    })?;
    let mut rows = Vec::new();
    for (outcome, wall) in outcomes {
        for (method, res) in &outcome.per_method {
            let (metrics, error) = match res.as_ref().map_err(|e| e.to_string()).and_then(|v| aggregate(v).map_err(|e| e.to_string())) {
                Ok(a) => (Some(a), None),
                Err(e) => (None, Some(e)),
            };
            rows.push(ResultRow {
                cell: outcome.cell,
                method: *method,
                metrics,
                wall_ms: grid.timing.then_some(wall),
                error,
            });
        }
    }
    rows.sort_by_key(|r| (r.cell, r.method));
    Ok(rows)
}

/// Writes the result table as CSV; failed rows carry `NaN` metrics.
pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_HEADER)?;
    for row in rows {
        let (mse, cp, iw) = row
            .metrics
            .map_or((f64::NAN, f64::NAN, f64::NAN), |m| (m.av_mse, m.av_cp, m.av_iw));
        w.write_record([
            row.cell.case.label().to_string(),
            row.cell.gain.label().to_string(),
            row.cell.snr.to_string(),
            row.cell.refs.count().to_string(),
            row.method.label().to_string(),
            mse.to_string(),
            cp.to_string(),
            iw.to_string(),
            row.wall_ms.map_or(String::new(), |w| format!("{w:.3}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}
