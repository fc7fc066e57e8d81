//! Dynamic statistical calibration.
//!
//! Static baselines fit a single calibration line to all first-stage data.
//! The dynamic methods track a drifting line with a dynamic linear model and
//! resample over variance proposals, producing a calibration distribution at
//! every time point.

pub mod dlm;
pub mod dynamic;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod plot;
pub mod radiometer;
pub mod simgen;
pub mod static_cal;
pub mod stats;

pub use dlm::{filter_series, DlmSpec, DlmState, FilterOutput, ForecastMoments};
pub use dynamic::{
    calibrate_dynamic, calibrate_dynamic_methods, CalSummarySeries, CalibrationDraws, Diagnostics,
    DynamicConfig, DynamicMethod, DynamicResult, ScaledCalibration, VariancePair,
};
pub use error::{CalError, Result};
pub use static_cal::{ols_fit, CalEstimate, RegressionFit, StaticMethod};
pub use metrics::{aggregate, AggregateMetrics, SeriesMetrics};
pub use simgen::{gen_dataset, GainKind, RefSet, SimConfig, SimDataset, TruthCase};
pub use experiment::{run_experiment, write_results, ExperimentGrid, Method, ResultRow};
pub use plot::{emit_plot_data, load_plot_data, PlotData};
pub use radiometer::{calibrate_radiometer, RadiometerResult, RadiometerStream, SynthRadiometer};
