//! Sequential against rayon dispatch for the replicate-level loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use faer::Mat;
use grdpg::alignment::convergence_trace;
use grdpg::models::{LatentDistribution, ModelSpec};
use grdpg::par::Execution;
use grdpg::rng::replicate_seeds;
use grdpg::ustats::{u_statistic, UKernel, UMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn qx_trace(c: &mut Criterion) {
    let dist = LatentDistribution::from(ModelSpec::three_block_indefinite().build().unwrap());
    let seeds = replicate_seeds(1, 16);
    let mut group = c.benchmark_group("convergence_trace");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, "n=500,2000 x16"), &exec, |b, &exec| {
            b.iter(|| convergence_trace(&dist, &[500, 2000], &seeds, exec).unwrap())
        });
    }
    group.finish();
}

fn complete_ustat(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows = Mat::from_fn(1500, 3, |_, _| rng.random_range(-1.0..1.0));
    let kernel = UKernel::inner_squared();
    let mut group = c.benchmark_group("u_statistic_complete");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, "n=1500,r=2"), &exec, |b, &exec| {
            b.iter(|| u_statistic(&kernel, rows.as_ref(), UMode::Complete, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, qx_trace, complete_ustat);
criterion_main!(benches);
