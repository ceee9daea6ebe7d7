//! Root relaxation of each variant on one desk instance, and a short
//! search on the hard variant with LP pricing run sequentially and in
//! parallel.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pnp_tamp::bench::{sample_scenarios, BenchConfig};
use pnp_tamp::par::Exec;
use pnp_tamp::solver::{solve, solve_lp, Branching, SolveOptions};
use pnp_tamp::tamp::{build, Variant};

fn desk_models() -> Vec<(Variant, pnp_tamp::milp::MilpModel)> {
    let config = BenchConfig { seed: 2, instances: 1, n_dlv: 2, steps: Some(14), ..BenchConfig::default() };
    let scenario = sample_scenarios(&config).expect("desk preset samples").remove(0);
    Variant::ALL
        .into_iter()
        .map(|v| (v, build(&scenario, &config.params(v, 14)).expect("desk scenario builds").0))
        .collect()
}

fn root_relaxation(c: &mut Criterion) {
    let mut group = c.benchmark_group("root_relaxation");
    for (variant, model) in desk_models() {
        group.bench_with_input(BenchmarkId::from_parameter(variant), &model, |b, m| b.iter(|| solve_lp(m)));
    }
    group.finish();
}

fn short_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("search_200_nodes");
    group.sample_size(10);
    let models = desk_models();
    let (_, hard) = models.iter().find(|(v, _)| *v == Variant::Hard).expect("hard variant built");
    for exec in [Exec::Sequential, Exec::Parallel] {
        let opts = SolveOptions { branching: Branching::LowestIndex, node_limit: Some(200), exec, ..SolveOptions::default() };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &opts, |b, o| b.iter(|| solve(hard, o)));
    }
    group.finish();
}

criterion_group!(benches, root_relaxation, short_search);
criterion_main!(benches);
