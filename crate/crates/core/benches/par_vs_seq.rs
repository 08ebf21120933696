//! Compares the data-parallel lanes against plain sequential loops over the
//! same public API. Build with default features for the parallel numbers;
//! `--no-default-features` turns both sides sequential.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::{DMatrix, DVector};

use opinion_lattice::design::{self, ScenarioSpec};
use opinion_lattice::dynamics::{self, SimOptions};
use opinion_lattice::model::MultilayerModel;
use opinion_lattice::rule::{MismatchWeights, SourceRule};
use opinion_lattice::stacked::sample_uniform;

/// Ring-with-chords network, 4 layers, one source with affine bias.
fn bench_model(n: usize) -> MultilayerModel {
    let q = 4;
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, (i + 1) % n)] = 1.0 / 3.0;
        w[(i, (i + n - 1) % n)] = 1.0 / 3.0;
        w[(i, (i + 3) % n)] = 1.0 / 3.0;
    }
    let alpha: Vec<DVector<f64>> = (0..q)
        .map(|l| DVector::from_fn(n, |i, _| 0.3 + 0.4 * (((i + l) % 5) as f64) / 5.0))
        .collect();
    let coupling = [0.7, 0.1, 0.1, 0.1];
    let lambda: Vec<Vec<DVector<f64>>> = (0..q)
        .map(|l| {
            (0..q)
                .map(|j| DVector::from_element(n, coupling[(j + q - l) % q]))
                .collect()
        })
        .collect();
    let s = DVector::from_fn(n * q, |idx, _| ((3 * idx + 1) % 7) as f64 / 7.0);
    let y = DVector::from_element(q, 0.2);
    let omega: Vec<DMatrix<f64>> = (0..q)
        .map(|l| {
            DMatrix::from_fn(n, 1, |i, _| {
                let a = alpha[l][i];
                0.9 * (1.0 - a) / a
            })
        })
        .collect();
    let gamma = omega.clone();
    let c = MismatchWeights::new(
        (0..q)
            .map(|l| {
                (0..n)
                    .map(|_| vec![(0..q).map(|j| coupling[(j + q - l) % q]).collect()])
                    .collect()
            })
            .collect(),
        n,
        1,
        q,
    )
    .unwrap();
    MultilayerModel::new(
        w,
        alpha,
        lambda,
        s,
        y,
        SourceRule::Affine { omega, gamma, c },
    )
    .unwrap()
}

fn bench_ensemble(c: &mut Criterion) {
    let model = bench_model(30);
    let starts = sample_uniform(model.n(), model.q(), 128, 11);
    let opts = SimOptions::default();

    let mut group = c.benchmark_group("simulate_ensemble_128");
    group.bench_function("sequential", |b| {
        b.iter_batched(
            || starts.clone(),
            |starts| {
                starts
                    .iter()
                    .map(|x0| dynamics::simulate(&model, x0, &opts).unwrap())
                    .collect::<Vec<_>>()
            },
            BatchSize::SmallInput,
        )
    });
    group.bench_function("dispatching", |b| {
        b.iter_batched(
            || starts.clone(),
            |starts| dynamics::simulate_ensemble(&model, &starts, &opts).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

fn bench_objective_grid(c: &mut Criterion) {
    let model = bench_model(20);
    let scenario = ScenarioSpec::uniform(model.n(), model.q(), true, true, 3);
    let grid: Vec<Vec<f64>> = (0..81)
        .map(|flat| {
            let mut idx = flat;
            (0..4)
                .map(|_| {
                    let t = idx % 3;
                    idx /= 3;
                    t as f64 / 2.0
                })
                .collect()
        })
        .collect();

    let mut group = c.benchmark_group("objective_grid_81");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| {
            grid.iter()
                .map(|y| design::objective(&model, &scenario, y).unwrap())
                .collect::<Vec<_>>()
        })
    });
    group.bench_function("optimizer_path", |b| {
        let mut cheap = scenario.clone();
        cheap.optimizer.starts = 4;
        cheap.optimizer.max_evals_per_start = 60;
        cheap.optimizer.grid_verify = true;
        b.iter(|| design::optimize(&model, &cheap).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_ensemble, bench_objective_grid);
criterion_main!(benches);
