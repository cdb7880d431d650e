use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rdream_core::{
    centered_rank_transform, generate_scenario, pairwise_weights, rdream_test, run_sdr,
    ContaminationSpec, Family, LinkSpec, ScenarioSpec, SdrMethod, TestMethod, TestOptions,
};

fn scenario(n: usize) -> rdream_core::Dataset {
    let spec = ScenarioSpec::new(Family::H11, 0.0, n);
    generate_scenario(&spec, 1).unwrap().0
}

fn rank(c: &mut Criterion) {
    let mut group = c.benchmark_group("rank_transform");
    for n in [200, 2000, 20_000] {
        let spec =
            ScenarioSpec::new(Family::H11, 0.0, n).with_contamination(ContaminationSpec::none());
        let y = generate_scenario(&spec, 2).unwrap().0.y().clone();
        group.bench_with_input(BenchmarkId::from_parameter(n), &y, |b, y| {
            b.iter(|| centered_rank_transform(black_box(y.as_slice())).unwrap())
        });
    }
    group.finish();
}

fn weights(c: &mut Criterion) {
    let mut group = c.benchmark_group("pairwise_weights");
    for (n, q) in [(200, 1), (200, 2), (1000, 1), (4000, 1)] {
        let d = scenario(n);
        let z: DMatrix<f64> = d.x().columns(0, q).into_owned();
        let h = 0.5 * (n as f64).powf(-1.0 / (q as f64 + 4.0));
        group.bench_with_input(BenchmarkId::new(format!("q{q}"), n), &z, |b, z| {
            b.iter(|| pairwise_weights(black_box(z), h).unwrap())
        });
    }
    group.finish();
}

fn sdr(c: &mut Criterion) {
    let mut group = c.benchmark_group("sdr");
    group.sample_size(20);
    for n in [100, 200] {
        let d = scenario(n);
        for method in [SdrMethod::Opg, SdrMethod::Dee] {
            group.bench_with_input(BenchmarkId::new(method.as_str(), n), &d, |b, d| {
                b.iter(|| run_sdr(black_box(d), method, None).unwrap())
            });
        }
    }
    group.finish();
}

fn end_to_end(c: &mut Criterion) {
    let mut group = c.benchmark_group("rdream_test");
    group.sample_size(20);
    let link = LinkSpec::linear();
    let options = TestOptions::default();
    for n in [100, 200] {
        let d = scenario(n);
        for method in TestMethod::ALL {
            group.bench_with_input(BenchmarkId::new(method.as_str(), n), &d, |b, d| {
                b.iter(|| rdream_test(black_box(d), &link, method, &options).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, rank, weights, sdr, end_to_end);
criterion_main!(benches);
