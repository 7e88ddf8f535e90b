//! Scenario-engine throughput: data-parallel vs sequential execution of a
//! decentralized Monte Carlo batch, plus the backward solves on their own.
//!
//! Run with `cargo bench -p mfglq`. Building with
//! `--no-default-features` drops the parallel case and benches the
//! sequential fallback only.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use mfglq::feedback::decentralized_gains;
use mfglq::model::production_preset;
use mfglq::offsets::solve_limit_phi_psi;
use mfglq::riccati::{solve_finite_n, solve_limit};
use mfglq::sim::{run_scenarios, simulate_decentralized, Execution, NoiseBundle};

const AGENTS: usize = 64;
const STEPS: usize = 250;
const SCENARIOS: u64 = 32;

fn batch(cfg: &mfglq::GameConfig, gains: &mfglq::feedback::GainSchedule, exec: Execution) -> f64 {
    let sups = run_scenarios(SCENARIOS, exec, |s| {
        let bundle =
            simulate_decentralized(cfg, gains, &NoiseBundle::for_config(cfg, s)).unwrap();
        let aux = bundle.aux.as_ref().unwrap();
        (0..cfg.grid.nodes())
            .map(|j| (&bundle.mean_state[j] - &aux.mean_field[j]).norm_squared())
            .fold(0.0f64, f64::max)
    });
    mfglq::stats::mean(&sups)
}

fn bench_scenario_batch(c: &mut Criterion) {
    let cfg = production_preset(AGENTS, STEPS, 1);
    let sols = solve_limit(&cfg).unwrap();
    let off = solve_limit_phi_psi(&cfg, &sols).unwrap();
    let gains = decentralized_gains(&cfg, &sols, &off).unwrap();

    let mut group = c.benchmark_group("decentralized_batch");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(batch(&cfg, &gains, Execution::Sequential)))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(batch(&cfg, &gains, Execution::Parallel)))
    });
    group.finish();
}

fn bench_backward_solves(c: &mut Criterion) {
    let cfg = production_preset(300, 1000, 1);
    let mut group = c.benchmark_group("backward_solves");
    group.sample_size(10);
    group.bench_function("limit_system", |b| b.iter(|| black_box(solve_limit(&cfg).unwrap())));
    group.bench_function("finite_system_n300", |b| {
        b.iter(|| black_box(solve_finite_n(&cfg, 300).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, bench_scenario_batch, bench_backward_solves);
criterion_main!(benches);
