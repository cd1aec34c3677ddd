//! Calibration engine throughput on the simulated regression task.

use std::hint::black_box;

use aacrc_core::features::rf_fit;
use aacrc_core::sim::synth_regression_generate;
use aacrc_core::tasks::interval_loss;
use aacrc_core::{
    calibrate_batch, AlphaLevel, BatchOptions, CalibrationSet, Calibrator, FeatureMap, Matrix, Regularizer, RfParams,
    SolverConfig, StepLoss,
};
use criterion::{criterion_group, criterion_main, Criterion};

const CALIBRATION: usize = 3000;
const TEST: usize = 256;

struct Workload {
    losses: Vec<StepLoss>,
    leaf_calibration: Matrix,
    leaf_test: Matrix,
}

fn workload() -> Workload {
    let residual = synth_regression_generate(1000, 1).unwrap();
    let calib = synth_regression_generate(CALIBRATION, 2).unwrap();
    let test = synth_regression_generate(TEST, 3).unwrap();
    let targets: Vec<f64> = residual
        .y
        .iter()
        .zip(&residual.f_hat)
        .map(|(y, f)| (y - f).abs())
        .collect();
    let forest = rf_fit(&Matrix::column(&residual.x), &targets, &RfParams::default()).unwrap();
    let map = FeatureMap::RfLeaf { forest };
    Workload {
        losses: calib
            .f_hat
            .iter()
            .zip(&calib.y)
            .map(|(&f, &y)| interval_loss(f, y).unwrap())
            .collect(),
        leaf_calibration: map.featurize_rows(&Matrix::column(&calib.x)).unwrap(),
        leaf_test: map.featurize_rows(&Matrix::column(&test.x)).unwrap(),
    }
}

fn alpha() -> AlphaLevel {
    AlphaLevel::new(0.1).unwrap()
}

fn bench_scan(c: &mut Criterion, w: &Workload) {
    let ones = Matrix::from_vec(CALIBRATION, 1, vec![1.0; CALIBRATION]).unwrap();
    let set = CalibrationSet::new(ones, w.losses.clone()).unwrap();
    let calibrator = Calibrator::new(&set, alpha(), Regularizer::None, SolverConfig::default()).unwrap();
    c.bench_function("scan/intercept", |b| {
        b.iter(|| calibrator.fit(black_box(&[1.0])).unwrap())
    });
}

fn bench_batch(c: &mut Criterion, w: &Workload) {
    let set = CalibrationSet::new(w.leaf_calibration.clone(), w.losses.clone()).unwrap();
    let mut group = c.benchmark_group("batch/rf-leaf");
    group.sample_size(10);
    for (name, reg, warm) in [
        ("simplex-warm", Regularizer::None, true),
        ("simplex-cold", Regularizer::None, false),
        ("ridge-warm", Regularizer::Ridge { gamma: 1.0 }, true),
    ] {
        let opts = BatchOptions {
            warm_start: warm,
            ..BatchOptions::default()
        };
        group.bench_function(name, |b| {
            b.iter(|| calibrate_batch(&set, &w.leaf_test, alpha(), &reg, &SolverConfig::default(), &opts).unwrap())
        });
    }
    group.finish();
}

fn bench_antiderivative(c: &mut Criterion, w: &Workload) {
    c.bench_function("loss/antiderivative", |b| {
        b.iter(|| {
            w.losses
                .iter()
                .map(|l| l.antiderivative(alpha(), black_box(-0.5)))
                .sum::<f64>()
        })
    });
}

fn engine(c: &mut Criterion) {
    let w = workload();
    bench_scan(c, &w);
    bench_batch(c, &w);
    bench_antiderivative(c, &w);
}

criterion_group!(benches, engine);
criterion_main!(benches);
