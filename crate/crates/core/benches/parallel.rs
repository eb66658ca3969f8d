use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relex_core::boolfact::{rank_sweep, RankSearchConfig};
use relex_core::explainer::{explain, ExplainConfig};
use relex_core::gcn::{train_gcn, TrainConfig};
use relex_core::graph::{generate_ba_shapes, NodeSplit};
use relex_core::pgm::{run_bp, BpConfig, Factor, FactorGraph, FactorKind};
use relex_core::Execution;

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn loopy_graph(seed: u64) -> FactorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 14;
    let mut fg = FactorGraph::with_binary_variables(n);
    for _ in 0..24 {
        let a = rng.random_range(0..n);
        let b = (a + rng.random_range(1..n)) % n;
        let mut c = rng.random_range(0..n);
        while c == a || c == b {
            c = rng.random_range(0..n);
        }
        fg.add_factor(Factor {
            scope: [a, b, c],
            satisfying: [1, 1, 1],
            weight: rng.random_range(-2.0..2.0),
            kind: FactorKind::Learned,
            relation: None,
        })
        .unwrap();
    }
    fg
}

fn batch_bp(c: &mut Criterion) {
    let graphs: Vec<FactorGraph> = (0..64).map(loopy_graph).collect();
    let cfg = BpConfig::default();
    let mut group = c.benchmark_group("batch_bp");
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| mode.map(&graphs, |fg| run_bp(black_box(fg), &cfg).unwrap().iterations))
        });
    }
    group.finish();
}

fn rank_search(c: &mut Criterion) {
    let g = generate_ba_shapes(12, 2, 0).unwrap();
    let mut group = c.benchmark_group("rank_sweep");
    group.sample_size(10);
    for mode in MODES {
        let cfg = RankSearchConfig {
            iterations: 800,
            execution: mode,
            ..RankSearchConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &cfg, |b, cfg| {
            b.iter(|| rank_sweep(black_box(&g), cfg).unwrap().steps.len())
        });
    }
    group.finish();
}

fn per_target_explain(c: &mut Criterion) {
    let g = generate_ba_shapes(25, 5, 0).unwrap();
    let split = NodeSplit::stratified(&g, 0.8, 0.1, 0).unwrap();
    let model = train_gcn(
        &g,
        &split,
        &TrainConfig {
            hidden_dim: 8,
            max_epochs: 300,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let targets: Vec<usize> = (25..g.node_count()).collect();
    let cfg = ExplainConfig {
        mask_steps: 100,
        ..ExplainConfig::default()
    };
    let mut group = c.benchmark_group("explain_targets");
    group.sample_size(10);
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| mode.map(&targets, |&t| explain(&model, &g, t, &cfg).map(|e| e.relations.len()).ok()))
        });
    }
    group.finish();
}

criterion_group!(benches, batch_bp, rank_search, per_target_explain);
criterion_main!(benches);
