use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dyncal::dlm::{filter_series, DlmSpec, DlmState};
use dyncal::dynamic::{filter_slope, sample_variance_priors, standardize, SlopePrior};
use dyncal::experiment::{calibrate_static_series, Method};
use dyncal::{calibrate_dynamic_methods, gen_dataset, DynamicConfig, DynamicMethod, GainKind, SimConfig, StaticMethod};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset(horizon: usize) -> dyncal::SimDataset {
    gen_dataset(&SimConfig {
        horizon,
        gain: GainKind::Stepped,
        seed: 9,
        ..SimConfig::default()
    })
    .unwrap()
}

fn filters(c: &mut Criterion) {
    let ds = dataset(1000);
    let scaled = standardize(&ds.x_refs, &ds.y_refs, &ds.y0_obs).unwrap();
    let pair = sample_variance_priors(1, &mut ChaCha8Rng::seed_from_u64(1))[0];
    c.bench_function("scalar slope filter T=1000", |b| {
        b.iter(|| filter_slope(black_box(pair), &scaled, SlopePrior::default()).unwrap())
    });

    let design = DMatrix::from_fn(ds.x_refs.len(), 2, |i, j| if j == 0 { 1.0 } else { ds.x_refs[i] });
    let spec = DlmSpec::new(design, 1e-4, 1e-5).unwrap();
    let obs: Vec<DVector<f64>> = ds.y_refs.iter().map(|y| DVector::from_column_slice(y)).collect();
    let init = DlmState::new(DVector::from_column_slice(&[12.7, 0.03]), DMatrix::identity(2, 2) * 0.1);
    c.bench_function("general filter d=2 T=1000", |b| {
        b.iter(|| filter_series(&spec, black_box(&obs), &init).unwrap())
    });
}

fn static_methods(c: &mut Criterion) {
    let ds = dataset(1000);
    let mut group = c.benchmark_group("static calibration T=1000");
    for m in StaticMethod::ALL {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{m:?}")), &m, |b, m| {
            b.iter(|| calibrate_static_series(&ds, *m, 0.95).unwrap())
        });
    }
    group.finish();
}

fn dynamic_replicate(c: &mut Criterion) {
    let ds = dataset(500);
    let cfg = DynamicConfig {
        proposals: 2000,
        accepted: 500,
        seed: 3,
        ..DynamicConfig::default()
    };
    let mut group = c.benchmark_group("dynamic replicate desk scale");
    group.sample_size(10);
    for (label, kinds) in [
        (Method::Md1.label(), vec![DynamicMethod::Md1]),
        (Method::Md2.label(), vec![DynamicMethod::Md2]),
        ("both", vec![DynamicMethod::Md1, DynamicMethod::Md2]),
    ] {
        group.bench_function(label, |b| {
            b.iter(|| calibrate_dynamic_methods(&ds.x_refs, &ds.y_refs, &ds.y0_obs, &kinds, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, filters, static_methods, dynamic_replicate);
criterion_main!(benches);
