//! Grid search over a small synthetic market, run on rayon's pool and on
//! one thread. Build with `--no-default-features` to see the fallback path
//! compiled without rayon (both strategies then run sequentially).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hybridcast::backtest::{expanding_schedule, grid_search, BacktestOptions, GridSpace, PlanConfig};
use hybridcast::models::{ModelKind, ModelSpec};
use hybridcast::par::Execution;
use hybridcast::relation_graph::GraphConfig;
use hybridcast::synthetic::{lead_lag_panel, SyntheticConfig};

fn grid(c: &mut Criterion) {
    let panel = lead_lag_panel(
        &SyntheticConfig {
            days: 130,
            ..Default::default()
        },
        1,
    );
    let plan = expanding_schedule(
        &panel.dates,
        &PlanConfig {
            base_train_days: 120,
            test_days: 4,
            test_end: None,
        },
    )
    .expect("plan fits");
    let space = GridSpace {
        learning_rates: vec![0.001, 0.005, 0.01],
        lookbacks: vec![5, 11],
        epochs: vec![10],
    };
    let graph = GraphConfig::default();
    let opts = BacktestOptions::default();

    let mut group = c.benchmark_group("grid_search");
    group.sample_size(10);
    for kind in [ModelKind::Dense, ModelKind::Cnn1d] {
        let template = ModelSpec::new(kind);
        for exec in [Execution::Parallel, Execution::Sequential] {
            group.bench_with_input(BenchmarkId::new(kind.name(), format!("{exec:?}")), &exec, |b, &exec| {
                b.iter(|| grid_search(&space, &template, &panel, &graph, &plan, &opts, exec).expect("grid runs"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, grid);
criterion_main!(benches);
