//! Multi-run sweeps: many seeded simulations evaluated independently.
//!
//! With the `parallel` feature (on by default) sweeps fan out across a rayon
//! pool; without it they run sequentially. Results are collected in input
//! order either way, so outputs are identical across both builds.

use serde::{Deserialize, Serialize};

use crate::analytics::{decompose, PhaseDecomposition};
use crate::error::CoreError;
use crate::model::{OrderingPolicy, Task};
use crate::sim::{simulate, ClusterSpec, SimMode, SimOutcome};

/// Maps `f` over the items, in parallel when the `parallel` feature is
/// enabled. Output order always matches input order.
pub fn map_items<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    I: Send + Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(&f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_items_seq(items, f)
    }
}

/// Sequential twin of [`map_items`]; the benchmark baseline.
pub fn map_items_seq<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    F: Fn(&I) -> T,
{
    items.iter().map(f).collect()
}

/// Runs one simulation per seed. Results are in seed order; any seed's
/// failure aborts the sweep.
pub fn simulate_seeds(
    tasks: &[Task],
    cluster: &ClusterSpec,
    mode: &SimMode,
    ordering: OrderingPolicy,
    retry_cap: u32,
    seeds: &[u64],
) -> Result<Vec<SimOutcome>, CoreError> {
    let results = map_items(seeds.to_vec(), |&seed| {
        simulate(tasks.to_vec(), cluster, mode, ordering, retry_cap, seed)
    });
    results.into_iter().collect()
}

/// One (policy, seed) run of an ordering experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub policy: OrderingPolicy,
    pub seed: u64,
    pub makespan_s: f64,
    pub tail_start_s: f64,
    pub tail_idle_area: f64,
    pub tail_utilization: f64,
    pub busy_area: f64,
}

/// Per-policy means over the seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: OrderingPolicy,
    pub runs: u64,
    pub mean_makespan_s: f64,
    pub mean_tail_idle_area: f64,
    pub mean_tail_utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dt_s: f64,
    pub policies: Vec<PolicySummary>,
    pub rows: Vec<ExperimentRow>,
}

/// Simulates every (policy, seed) pair and reports tail behaviour per
/// policy. The report only states what happened; it deliberately asserts no
/// ordering between policies, since no policy dominates in general.
pub fn ordering_experiment(
    tasks: &[Task],
    cluster: &ClusterSpec,
    mode: &SimMode,
    policies: &[OrderingPolicy],
    seeds: &[u64],
    retry_cap: u32,
    dt_s: f64,
) -> Result<ExperimentReport, CoreError> {
    if policies.len() < 2 {
        return Err(CoreError::InvalidSpec(
            "ordering experiment needs at least two policies".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(CoreError::InvalidSpec(
            "ordering experiment needs at least one seed".into(),
        ));
    }
    let grid: Vec<(OrderingPolicy, u64)> = policies
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let outcomes = map_items(
        grid.clone(),
        |&(policy, seed)| -> Result<ExperimentRow, CoreError> {
            let outcome = simulate(tasks.to_vec(), cluster, mode, policy, retry_cap, seed)?;
            let d: PhaseDecomposition = decompose(&outcome.trace, cluster.workers, dt_s)?;
            Ok(ExperimentRow {
                policy,
                seed,
                makespan_s: outcome.summary.t_total_s,
                tail_start_s: d.t2_s,
                tail_idle_area: d.tail_idle_area,
                tail_utilization: d.tail_utilization,
                busy_area: d.busy_area,
            })
        },
    );
    let rows: Vec<ExperimentRow> = outcomes.into_iter().collect::<Result<_, _>>()?;
    let policies_summary = policies
        .iter()
        .map(|&p| {
            let sel: Vec<&ExperimentRow> = rows.iter().filter(|r| r.policy == p).collect();
            let n = sel.len() as f64;
            PolicySummary {
                policy: p,
                runs: sel.len() as u64,
                mean_makespan_s: sel.iter().map(|r| r.makespan_s).sum::<f64>() / n,
                mean_tail_idle_area: sel.iter().map(|r| r.tail_idle_area).sum::<f64>() / n,
                mean_tail_utilization: sel.iter().map(|r| r.tail_utilization).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(ExperimentReport {
        dt_s,
        policies: policies_summary,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnalysisType, TaskState};
    use crate::sim::{ArrivalModel, FailureModel, SpeedModel};

    fn mk_tasks(costs: &[f64]) -> Vec<Task> {
        costs
            .iter()
            .enumerate()
            .map(|(i, &c)| Task {
                task_id: format!("t-{i:05}"),
                analysis_type: AnalysisType::D2dUhf,
                calc_ids: vec![format!("c-{i:05}")],
                total_cost: c,
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
            workers: 6,
            slots_per_worker: 1,
            speed: SpeedModel::Constant(1.0),
            arrival: ArrivalModel::ShiftedExponential {
                offset_s: 0.0,
                mean_s: 5.0,
            },
            failure: FailureModel::None,
            pull_latency_s: 0.1,
            seed: 0,
        }
    }

    #[test]
    fn seed_sweep_matches_sequential_order() {
        let tasks = mk_tasks(&vec![2.0; 30]);
        let seeds: Vec<u64> = (0..8).collect();
        let outs = simulate_seeds(
            &tasks,
            &cluster(),
            &SimMode::Pull,
            OrderingPolicy::Natural,
            3,
            &seeds,
        )
        .unwrap();
        assert_eq!(outs.len(), seeds.len());
        for (i, &seed) in seeds.iter().enumerate() {
            let solo = crate::sim::simulate(
                tasks.clone(),
                &cluster(),
                &SimMode::Pull,
                OrderingPolicy::Natural,
                3,
                seed,
            )
            .unwrap();
            assert_eq!(outs[i].trace, solo.trace, "sweep result {i} out of order");
        }
    }

    #[test]
    fn experiment_needs_two_policies_and_a_seed() {
        let tasks = mk_tasks(&[1.0]);
        assert!(ordering_experiment(
            &tasks,
            &cluster(),
            &SimMode::Pull,
            &[OrderingPolicy::Natural],
            &[1],
            3,
            60.0
        )
        .is_err());
        assert!(ordering_experiment(
            &tasks,
            &cluster(),
            &SimMode::Pull,
            &[OrderingPolicy::Natural, OrderingPolicy::LongestFirst],
            &[],
            3,
            60.0
        )
        .is_err());
    }

    #[test]
    fn single_task_gives_identical_traces_across_policies() {
        let tasks = mk_tasks(&[7.5]);
        let c = ClusterSpec {
            arrival: ArrivalModel::Immediate,
            pull_latency_s: 0.0,
            ..cluster()
        };
        let policies = [
            OrderingPolicy::Natural,
            OrderingPolicy::Random,
            OrderingPolicy::LongestFirst,
            OrderingPolicy::ShortestFirst,
        ];
        let report =
            ordering_experiment(&tasks, &c, &SimMode::Pull, &policies, &[9], 3, 1.0).unwrap();
        assert!(report
            .rows
            .windows(2)
            .all(|w| w[0].makespan_s == w[1].makespan_s));
        let traces: Vec<_> = policies
            .iter()
            .map(|&p| {
                crate::sim::simulate(tasks.clone(), &c, &SimMode::Pull, p, 3, 9)
                    .unwrap()
                    .trace
            })
            .collect();
        assert!(traces.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn experiment_is_deterministic() {
        let tasks = mk_tasks(&(0..40).map(|i| 1.0 + (i % 7) as f64).collect::<Vec<_>>());
        let policies = [OrderingPolicy::Natural, OrderingPolicy::LongestFirst];
        let seeds: Vec<u64> = (0..5).collect();
        let a = ordering_experiment(
            &tasks,
            &cluster(),
            &SimMode::Pull,
            &policies,
            &seeds,
            3,
            10.0,
        )
        .unwrap();
        let b = ordering_experiment(
            &tasks,
            &cluster(),
            &SimMode::Pull,
            &policies,
            &seeds,
            3,
            10.0,
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
