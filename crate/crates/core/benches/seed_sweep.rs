//! Compares the rayon-parallel seed sweep against its sequential twin on a
//! realistic multi-seed simulation batch.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pullherd_core::model::{AnalysisType, OrderingPolicy, Task, TaskState};
use pullherd_core::sim::{simulate, ArrivalModel, ClusterSpec, FailureModel, SimMode, SpeedModel};
use pullherd_core::sweep::{map_items, map_items_seq};

fn mk_tasks(n: usize) -> Vec<Task> {
    (0..n)
        .map(|i| Task {
            task_id: format!("t-{i:05}"),
            analysis_type: AnalysisType::D2dUhf,
            calc_ids: vec![format!("c-{i:05}")],
            total_cost: 1.0 + (i % 29) as f64,
            payload_ref: format!("task:t-{i:05}"),
            state: TaskState::Pending,
            attempts: 0,
            assigned_worker: None,
            timestamps: Default::default(),
        })
        .collect()
}

fn cluster() -> ClusterSpec {
    ClusterSpec {
        workers: 24,
        slots_per_worker: 2,
        speed: SpeedModel::Constant(1.0),
        arrival: ArrivalModel::ShiftedExponential {
            offset_s: 10.0,
            mean_s: 120.0,
        },
        failure: FailureModel::None,
        pull_latency_s: 0.5,
        seed: 0,
    }
}

fn bench_seed_sweep(c: &mut Criterion) {
    let tasks = mk_tasks(6000);
    let cluster = cluster();
    let seeds: Vec<u64> = (0..16).collect();
    let run = |seed: &u64| {
        simulate(
            tasks.clone(),
            &cluster,
            &SimMode::Pull,
            OrderingPolicy::Natural,
            3,
            *seed,
        )
        .expect("simulation succeeds")
        .summary
        .t_total_s
    };

    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    group.bench_with_input(
        BenchmarkId::new("sequential", seeds.len()),
        &seeds,
        |b, seeds| b.iter(|| map_items_seq(seeds.clone(), run)),
    );
    group.bench_with_input(
        BenchmarkId::new("parallel", seeds.len()),
        &seeds,
        |b, seeds| b.iter(|| map_items(seeds.clone(), run)),
    );
    group.finish();
}

criterion_group!(benches, bench_seed_sweep);
criterion_main!(benches);
