use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use dyncal::experiment::{calibrate_all, replicate_seed, Cell, Method};
use dyncal::metrics::SeriesMetrics;
use dyncal::plot::write_plot_data;
use dyncal::{
    calibrate_radiometer, gen_dataset, run_experiment, write_results, CalError, CalSummarySeries, DynamicConfig,
    ExperimentGrid, GainKind, RadiometerStream, RefSet, SimDataset, SynthRadiometer, TruthCase,
};

#[derive(Parser)]
#[command(name = "dyncal", version, about = "Dynamic and static statistical calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulation grid and write the result table.
    Simulate(SimulateArgs),
    /// Calibrate one saved dataset with one method.
    Calibrate(CalibrateArgs),
    /// Calibrate a radiometer voltage stream.
    Radiometer(RadiometerArgs),
    /// Write a synthetic radiometer stream with a drifting gain.
    SynthRadiometer(SynthArgs),
    /// Simulate one replicate of a grid cell and write its calibrated series.
    PlotData(PlotArgs),
}

#[derive(Args, Default)]
struct DynamicArgs {
    /// Number of variance proposals.
    #[arg(long)]
    proposals: Option<usize>,
    /// Number of resampled series.
    #[arg(long)]
    accepted: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    slope_eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl DynamicArgs {
    fn apply(&self, mut cfg: DynamicConfig) -> DynamicConfig {
        cfg.proposals = self.proposals.unwrap_or(cfg.proposals);
        cfg.accepted = self.accepted.unwrap_or(cfg.accepted);
        cfg.burn_in = self.burn_in.unwrap_or(cfg.burn_in);
        cfg.level = self.level.unwrap_or(cfg.level);
        cfg.slope_eps = self.slope_eps.unwrap_or(cfg.slope_eps);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON file with grid settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// 20 replicates, T=500, M=2000, N=500.
    #[arg(long, conflicts_with = "paper_scale")]
    desk_scale: bool,
    /// 100 replicates, T=1000, M=5000, N=1000. Slow.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Comma-separated subset of MD1,MD2,MF1,MF2,MB1,MB2.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Comma-separated subset of interpolation,extrapolation.
    #[arg(long, value_delimiter = ',')]
    cases: Option<Vec<String>>,
    /// Comma-separated subset of constant,stepped,sinusoidal.
    #[arg(long, value_delimiter = ',')]
    gains: Option<Vec<String>>,
    /// Comma-separated signal-to-noise ratios.
    #[arg(long, value_delimiter = ',')]
    snrs: Option<Vec<u32>>,
    /// Comma-separated reference counts (2 and/or 5).
    #[arg(long, value_delimiter = ',')]
    refs: Option<Vec<usize>>,
    /// Fill the wall_ms column.
    #[arg(long)]
    timing: bool,
    #[command(flatten)]
    dynamic: DynamicArgs,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Dataset CSV as written by `plot-data --dataset`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    method: String,
    /// Comma-separated reference values; defaults to the standard 2 or 5 point set.
    #[arg(long, value_delimiter = ',')]
    x_refs: Option<Vec<f64>>,
    #[command(flatten)]
    dynamic: DynamicArgs,
    /// Plot CSV of the calibrated series.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RadiometerArgs {
    #[arg(long)]
    input: PathBuf,
    /// MD1, MD2, MF2 or all.
    #[arg(long, default_value = "all")]
    method: String,
    #[command(flatten)]
    dynamic: DynamicArgs,
    /// Plot CSV of the calibrated series; with `all`, the method label is appended to the stem.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    horizon: Option<usize>,
    /// Relative gain change over the run.
    #[arg(long)]
    drift: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    t_unknown: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, default_value = "interpolation")]
    case: String,
    #[arg(long, default_value = "constant")]
    gain: String,
    #[arg(long, default_value_t = 10)]
    snr: u32,
    #[arg(long, default_value_t = 2)]
    refs: usize,
    #[arg(long, default_value_t = 0)]
    replicate: usize,
    #[arg(long)]
    method: String,
    #[command(flatten)]
    dynamic: DynamicArgs,
    #[arg(long)]
    horizon: Option<usize>,
    /// Also save the simulated dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
    Io(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Numerical(e) | Failure::Io(e) => e,
        }
    }
}

impl From<CalError> for Failure {
    fn from(e: CalError) -> Self {
        if e.is_io() {
            Failure::Io(e.into())
        } else if e.is_numerical() {
            Failure::Numerical(e.into())
        } else {
            Failure::Config(e.into())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.into())
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(anyhow!(msg.into()))
}

type CliResult<T> = Result<T, Failure>;

fn parse_method(s: &str) -> CliResult<Method> {
    s.parse().map_err(Failure::from)
}

fn parse_case(s: &str) -> CliResult<TruthCase> {
    [TruthCase::Interpolation, TruthCase::Extrapolation]
        .into_iter()
        .find(|c| c.label().eq_ignore_ascii_case(s.trim()))
        .ok_or_else(|| config_err(format!("unknown case {s:?}")))
}

fn parse_gain(s: &str) -> CliResult<GainKind> {
    GainKind::ALL
        .into_iter()
        .find(|g| g.label().eq_ignore_ascii_case(s.trim()))
        .ok_or_else(|| config_err(format!("unknown gain {s:?}")))
}

fn parse_refs(n: usize) -> CliResult<RefSet> {
    RefSet::from_count(n).ok_or_else(|| config_err(format!("reference count must be 2 or 5, got {n}")))
}

fn open_out(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display())).map_err(Failure::Io)?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Io)
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let mut grid = match &args.config {
        Some(p) => ExperimentGrid::from_json(&read_text(p)?)?,
        None => ExperimentGrid::desk_scale(),
    };
    if args.desk_scale {
        grid = grid.with_desk_scale();
    }
    if args.paper_scale {
        grid = grid.with_paper_scale();
        eprintln!("warning: paper-scale runs take tens of minutes or more; consider --desk-scale");
    }
    grid.replicates = args.replicates.unwrap_or(grid.replicates);
    grid.horizon = args.horizon.unwrap_or(grid.horizon);
    if let Some(ms) = &args.methods {
        grid.methods = ms.iter().filter(|s| !s.trim().is_empty()).map(|s| parse_method(s)).collect::<CliResult<_>>()?;
    }
    if let Some(cs) = &args.cases {
        grid.cases = cs.iter().map(|s| parse_case(s)).collect::<CliResult<_>>()?;
    }
    if let Some(gs) = &args.gains {
        grid.gains = gs.iter().map(|s| parse_gain(s)).collect::<CliResult<_>>()?;
    }
    if let Some(rs) = &args.snrs {
        grid.snrs = rs.clone();
    }
    if let Some(rs) = &args.refs {
        grid.refs = rs.iter().map(|n| parse_refs(*n)).collect::<CliResult<_>>()?;
    }
    grid.timing |= args.timing;
    let d = &args.dynamic;
    grid.proposals = d.proposals.unwrap_or(grid.proposals);
    grid.accepted = d.accepted.unwrap_or(grid.accepted);
    grid.burn_in = d.burn_in.unwrap_or(grid.burn_in);
    grid.level = d.level.unwrap_or(grid.level);
    grid.slope_eps = d.slope_eps.unwrap_or(grid.slope_eps);
    grid.seed = d.seed.unwrap_or(grid.seed);

    let rows = run_experiment(&grid)?;
    let mut out = open_out(args.out.as_deref())?;
    write_results(&rows, &mut out)?;
    out.flush()?;
    for row in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "{} {} r={} refs={} {}: {}",
            row.cell.case.label(),
            row.cell.gain.label(),
            row.cell.snr,
            row.cell.refs.count(),
            row.method,
            row.error.as_deref().unwrap_or_default()
        );
    }
    if !rows.is_empty() && rows.iter().all(|r| r.error.is_some()) {
        return Err(Failure::Numerical(anyhow!("every cell failed")));
    }
    Ok(())
}

fn load_dataset(path: &Path, x_refs: Option<Vec<f64>>) -> CliResult<SimDataset> {
    let text = read_text(path)?;
    let x_refs = match x_refs {
        Some(x) => x,
        None => {
            let columns = text.lines().next().map_or(0, |h| h.split(',').count());
            let refs = columns
                .checked_sub(6)
                .and_then(RefSet::from_count)
                .ok_or_else(|| config_err("cannot infer reference values; pass --x-refs"))?;
            refs.values()
        }
    };
    Ok(SimDataset::read_csv(text.as_bytes(), x_refs)?)
}

fn print_metrics(method: Method, m: &SeriesMetrics) {
    println!("{method}: mse={:.6} cp={:.4} iw={:.4} t_used={}", m.mse, m.cp, m.iw, m.t_used);
}

fn calibrate_dataset(ds: &SimDataset, method: Method, dynamic: &DynamicConfig, out: Option<&Path>) -> CliResult<()> {
    let (_, res) = calibrate_all(ds, &[method], dynamic, dynamic.level).remove(0);
    let series = res?;
    let truth = &ds.x0_truth[series.start..];
    let metrics = SeriesMetrics::compute(&series.point, &series.lower, &series.upper, truth)?;
    print_metrics(method, &metrics);
    if let Some(path) = out {
        let summary = CalSummarySeries {
            start: series.start,
            median: series.point,
            lower: series.lower,
            upper: series.upper,
            level: dynamic.level,
        };
        let mut w = open_out(Some(path))?;
        write_plot_data(&summary, Some(&ds.x0_truth), &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> CliResult<()> {
    let method = parse_method(&args.method)?;
    let ds = load_dataset(&args.data, args.x_refs)?;
    let dynamic = args.dynamic.apply(DynamicConfig::default());
    calibrate_dataset(&ds, method, &dynamic, args.out.as_deref())
}

fn suffixed(path: &Path, label: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_{}.{ext}", label.to_ascii_lowercase()))
}

fn radiometer(args: RadiometerArgs) -> CliResult<()> {
    let methods = if args.method.eq_ignore_ascii_case("all") {
        vec![Method::Mf2, Method::Md1, Method::Md2]
    } else {
        vec![parse_method(&args.method)?]
    };
    let stream = RadiometerStream::load(&args.input)?;
    let defaults = DynamicConfig {
        burn_in: 10,
        ..DynamicConfig::default()
    };
    let cfg = args.dynamic.apply(defaults);
    for m in &methods {
        let res = calibrate_radiometer(&stream, *m, &cfg)?;
        println!(
            "{m}: sigma_hat={:.6} mean={:.6} n={}",
            res.sigma_hat,
            dyncal::stats::mean(&res.estimate),
            res.estimate.len()
        );
        if let Some(path) = &args.out {
            let path = if methods.len() > 1 { suffixed(path, m.label()) } else { path.clone() };
            let (lower, upper) = res.band.unwrap_or_else(|| (res.estimate.clone(), res.estimate.clone()));
            let summary = CalSummarySeries {
                start: res.start,
                median: res.estimate,
                lower,
                upper,
                level: cfg.level,
            };
            let mut w = open_out(Some(&path))?;
            write_plot_data(&summary, None, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn synth_radiometer(args: SynthArgs) -> CliResult<()> {
    let d = SynthRadiometer::default();
    let synth = SynthRadiometer {
        horizon: args.horizon.unwrap_or(d.horizon),
        drift: args.drift.unwrap_or(d.drift),
        noise_sd: args.noise_sd.unwrap_or(d.noise_sd),
        t_unknown: args.t_unknown.unwrap_or(d.t_unknown),
        seed: args.seed.unwrap_or(d.seed),
        ..d
    };
    let stream = synth.generate()?;
    let mut w = open_out(Some(&args.out))?;
    stream.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn plot_data(args: PlotArgs) -> CliResult<()> {
    let method = parse_method(&args.method)?;
    let cell = Cell {
        case: parse_case(&args.case)?,
        gain: parse_gain(&args.gain)?,
        snr: args.snr,
        refs: parse_refs(args.refs)?,
    };
    let mut grid = ExperimentGrid::desk_scale();
    grid.horizon = args.horizon.unwrap_or(grid.horizon);
    grid.snrs = vec![cell.snr];
    grid.validate()?;
    let seed = replicate_seed(args.dynamic.seed.unwrap_or(grid.seed), cell, args.replicate);
    let ds = gen_dataset(&grid.sim_config(cell, seed))?;
    if let Some(path) = &args.dataset {
        let mut w = open_out(Some(path))?;
        ds.write_csv(&mut w)?;
        w.flush()?;
    }
    let base = grid.dynamic_config(seed);
    let dynamic = DynamicArgs { seed: None, ..args.dynamic }.apply(base);
    calibrate_dataset(&ds, method, &dynamic, Some(&args.out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Radiometer(a) => radiometer(a),
        Command::SynthRadiometer(a) => synth_radiometer(a),
        Command::PlotData(a) => plot_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
