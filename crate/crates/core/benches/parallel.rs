use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use plan2vec_core::eval::{self, EvalContext, Method, TaskConfig};
use plan2vec_core::exec::Execution;
use plan2vec_core::graph::{build_graph, FnScorer};
use plan2vec_core::maze::{generate_rollouts, LayoutKind, MazeLayout, RolloutConfig};
use plan2vec_core::trainer::{GlobalMetric, TrainConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench(c: &mut Criterion) {
    let layout = MazeLayout::new(LayoutKind::CMaze);
    let cfg = RolloutConfig {
        n_rollouts: 200,
        resolution: 16,
        seed: 1,
        ..Default::default()
    };
    let ds = generate_rollouts(&layout, &cfg, Execution::Parallel).unwrap();
    let pos = ds.positions().to_vec();
    let scorer = FnScorer {
        n: ds.len(),
        f: move |i: usize, j: usize| 10.0 * ((pos[i][0] - pos[j][0]).powi(2) + (pos[i][1] - pos[j][1]).powi(2)).sqrt(),
    };
    let graph = build_graph(&ds, &scorer, 1.5, Execution::Parallel).unwrap();
    let metric = GlobalMetric::new(&TrainConfig::default(), 16).unwrap();
    let tasks = eval::sample_tasks(&graph, &ds, &TaskConfig { n_tasks: 100, ..Default::default() }, Execution::Parallel).unwrap();

    let mut group = c.benchmark_group("exec");
    group.sample_size(10);
    for (name, ex) in MODES {
        group.bench_with_input(BenchmarkId::new("rollouts", name), &ex, |b, &ex| {
            b.iter(|| generate_rollouts(&layout, &cfg, ex).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("build_graph", name), &ex, |b, &ex| {
            b.iter(|| build_graph(black_box(&ds), &scorer, 1.5, ex).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("embed_all", name), &ex, |b, &ex| {
            b.iter(|| metric.embed_all(black_box(&ds), ex).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("oracle_eval", name), &ex, |b, &ex| {
            let ctx = EvalContext {
                graph: &graph,
                dataset: &ds,
                global: None,
                local: None,
                seed: 0,
            };
            b.iter(|| eval::run_success_eval(&ctx, &[Method::GraphTruthOracle], &tasks, 1, 1, ex).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
