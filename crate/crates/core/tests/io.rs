use dyncal::experiment::{run_experiment, write_results, ExperimentGrid, Method};
use dyncal::plot::{emit_plot_data, load_plot_data};
use dyncal::{gen_dataset, CalError, CalSummarySeries, GainKind, RadiometerStream, RefSet, SimConfig, SimDataset, SynthRadiometer, TruthCase};

#[test]
fn plot_file_roundtrip_and_empty_series() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("series.csv");
    let summary = CalSummarySeries {
        start: 0,
        median: vec![0.1, 1.0 / 3.0, 2.0f64.sqrt()],
        lower: vec![-1e-300, 0.0, 1.0],
        upper: vec![1e300, 5.0, 7.25],
        level: 0.95,
    };
    emit_plot_data(&summary, Some(&[0.2, 0.3, 0.4]), &path).unwrap();
    let back = load_plot_data(&path).unwrap();
    assert_eq!(back.median, summary.median);
    assert_eq!(back.lower, summary.lower);
    assert_eq!(back.upper, summary.upper);
    assert_eq!(back.truth, Some(vec![0.2, 0.3, 0.4]));

    let empty = CalSummarySeries {
        start: 0,
        median: vec![],
        lower: vec![],
        upper: vec![],
        level: 0.95,
    };
    emit_plot_data(&empty, None, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "t,median,lower,upper\n");
}

#[test]
fn io_errors_surface() {
    let summary = CalSummarySeries {
        start: 0,
        median: vec![1.0],
        lower: vec![0.0],
        upper: vec![2.0],
        level: 0.95,
    };
    let err = emit_plot_data(&summary, None, std::path::Path::new("/nonexistent/dir/x.csv")).unwrap_err();
    assert!(matches!(err, CalError::Io(_)));
    assert!(err.is_io());
    assert!(RadiometerStream::load(std::path::Path::new("/nonexistent.csv")).unwrap_err().is_io());
}

#[test]
fn dataset_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.csv");
    let ds = gen_dataset(&SimConfig {
        refs: RefSet::Five,
        horizon: 40,
        gain: GainKind::Sinusoidal,
        truth: TruthCase::Extrapolation,
        seed: 5,
        ..SimConfig::default()
    })
    .unwrap();
    ds.save_csv(&path).unwrap();
    let back = SimDataset::read_csv(std::fs::File::open(&path).unwrap(), RefSet::Five.values()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn radiometer_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stream.csv");
    let stream = SynthRadiometer {
        horizon: 25,
        seed: 8,
        ..SynthRadiometer::default()
    }
    .generate()
    .unwrap();
    stream.save(&path).unwrap();
    assert_eq!(RadiometerStream::load(&path).unwrap(), stream);
}

#[test]
fn result_files_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut grid = ExperimentGrid::desk_scale();
    grid.cases = vec![TruthCase::Interpolation];
    grid.gains = vec![GainKind::ConstantZero];
    grid.snrs = vec![10];
    grid.refs = vec![RefSet::Two];
    grid.methods = vec![Method::Md2, Method::Mf1];
    grid.replicates = 2;
    grid.horizon = 30;
    grid.proposals = 40;
    grid.accepted = 20;
    let mut files = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let path = dir.path().join(name);
        write_results(&run_experiment(&grid).unwrap(), std::fs::File::create(&path).unwrap()).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
}
