//! Deterministic discrete-event simulation of campaigns.
//!
//! The simulator does not reimplement scheduling: it drives the same
//! [`MasterState`] the live server uses, feeding it event times instead of
//! wall-clock readings. Time is exact event time; discretization only
//! happens later in analytics.
//!
//! Two delivery modes are modeled. PULL has idle slots request work after a
//! round-trip latency. PUSH has a dispatcher send assignments to idle slots,
//! where each send may be lost and is retried on a timeout up to a resend
//! cap before the attempt is surrendered back to the queue.

use std::cmp::Ordering as CmpOrdering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::master::{AssignOutcome, MasterConfig, MasterState};
use crate::model::{OrderingPolicy, Task};
use crate::trace::{RunSummary, RunTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedModel {
    /// Every worker runs at this speed factor.
    Constant(f64),
    /// One factor per worker, cycled if shorter than the pool.
    PerWorker(Vec<f64>),
}

impl Default for SpeedModel {
    fn default() -> Self {
        SpeedModel::Constant(1.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalModel {
    /// All workers present at t = 0.
    #[default]
    Immediate,
    /// Worker k arrives at k * interval.
    FixedStagger { interval_s: f64 },
    /// offset + Exp(mean) per worker, independent draws.
    ShiftedExponential { offset_s: f64, mean_s: f64 },
    /// Measured arrival times, one per worker.
    Empirical { times_s: Vec<f64> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureModel {
    #[default]
    None,
    /// Kill the given worker indices at the given times.
    KillAt { kills: Vec<(f64, u32)> },
    /// Exponential lifetime from arrival, per worker.
    Lifetime { mean_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub workers: u32,
    #[serde(default = "default_slots")]
    pub slots_per_worker: u32,
    #[serde(default)]
    pub speed: SpeedModel,
    #[serde(default)]
    pub arrival: ArrivalModel,
    #[serde(default)]
    pub failure: FailureModel,
    #[serde(default)]
    pub pull_latency_s: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_slots() -> u32 {
    1
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.workers < 1 {
            return Err(CoreError::InvalidSpec(
                "cluster needs at least one worker".into(),
            ));
        }
        if self.slots_per_worker < 1 {
            return Err(CoreError::InvalidSpec(
                "slots_per_worker must be >= 1".into(),
            ));
        }
        let speeds_ok = match &self.speed {
            SpeedModel::Constant(s) => *s > 0.0,
            SpeedModel::PerWorker(v) => !v.is_empty() && v.iter().all(|s| *s > 0.0),
        };
        if !speeds_ok {
            return Err(CoreError::InvalidSpec("speed factors must be > 0".into()));
        }
        if self.pull_latency_s < 0.0 {
            return Err(CoreError::InvalidSpec("pull_latency_s must be >= 0".into()));
        }
        if let ArrivalModel::Empirical { times_s } = &self.arrival {
            if times_s.len() < self.workers as usize {
                return Err(CoreError::InvalidSpec(format!(
                    "empirical arrivals provide {} times for {} workers",
                    times_s.len(),
                    self.workers
                )));
            }
        }
        Ok(())
    }

    fn speed_of(&self, worker: usize) -> f64 {
        match &self.speed {
            SpeedModel::Constant(s) => *s,
            SpeedModel::PerWorker(v) => v[worker % v.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushSpec {
    /// Probability each assignment message is lost, in [0, 1).
    pub p_loss: f64,
    #[serde(default = "default_dispatch_timeout")]
    pub dispatch_timeout_s: f64,
    #[serde(default)]
    pub resend_cap: u32,
}

fn default_dispatch_timeout() -> f64 {
    5.0
}

impl PushSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(0.0..1.0).contains(&self.p_loss) {
            return Err(CoreError::InvalidSpec(format!(
                "p_loss must be in [0,1), got {}",
                self.p_loss
            )));
        }
        if self.dispatch_timeout_s <= 0.0 {
            return Err(CoreError::InvalidSpec(
                "dispatch_timeout_s must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    #[default]
    Pull,
    Push(PushSpec),
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trace: RunTrace,
    pub summary: RunSummary,
}

/// Where a scenario's calculations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadSource {
    /// JSON Lines workload file; relative paths resolve against the
    /// scenario file's directory.
    Path(std::path::PathBuf),
    /// Generate on the fly.
    Spec(crate::workload::WorkloadSpec),
}

fn default_policies() -> Vec<OrderingPolicy> {
    vec![OrderingPolicy::Natural]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_dt() -> f64 {
    60.0
}

fn default_retry_cap() -> u32 {
    3
}

fn one_or_many<'de, D>(d: D) -> Result<Vec<OrderingPolicy>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(OrderingPolicy),
        Many(Vec<OrderingPolicy>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(p) => vec![p],
        OneOrMany::Many(v) => v,
    })
}

/// A simulation scenario file: workload, cluster, delivery mode, ordering
/// policies and seeds. One policy means plain seeded runs; several mean an
/// ordering experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub workload: WorkloadSource,
    #[serde(default)]
    pub granularity: crate::model::GranularityMap,
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub mode: SimMode,
    #[serde(
        default = "default_policies",
        alias = "policy",
        deserialize_with = "one_or_many"
    )]
    pub policies: Vec<OrderingPolicy>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default = "default_retry_cap")]
    pub retry_cap: u32,
}

impl Scenario {
    pub fn load(path: &std::path::Path) -> Result<Scenario, CoreError> {
        let data = std::fs::read(path)?;
        Ok(serde_json::from_slice(&data)?)
    }

    /// Materializes the task list. A workload file is clustered in natural
    /// order; an inline spec is clustered by its declared ordering with its
    /// own seed. Per-run policies are applied on top by the scheduling
    /// queue inside each simulation.
    pub fn build_tasks(&self, base_dir: &std::path::Path) -> Result<Vec<Task>, CoreError> {
        let (calcs, ordering, seed) = match &self.workload {
            WorkloadSource::Path(p) => {
                let full = if p.is_absolute() {
                    p.clone()
                } else {
                    base_dir.join(p)
                };
                (
                    crate::workload::read_workload_file(&full)?,
                    OrderingPolicy::Natural,
                    0,
                )
            }
            WorkloadSource::Spec(spec) => (
                crate::workload::generate_workload(spec)?,
                spec.ordering,
                spec.rng_seed,
            ),
        };
        if calcs.is_empty() {
            return Err(CoreError::InvalidSpec("scenario workload is empty".into()));
        }
        crate::clustering::cluster(&calcs, &self.granularity, ordering, seed)
    }
}

// RNG streams split off the root seed so toggling one model never perturbs
// the draws of another.
const STREAM_ARRIVALS: u64 = 0;
const STREAM_FAILURES: u64 = 1;
const STREAM_ORDERING: u64 = 2;
const STREAM_LOSS: u64 = 3;

fn stream_rng(root: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream);
    rng
}

fn exp_sample(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    let u: f64 = rng.random();
    -mean * (1.0 - u).ln()
}

#[derive(Debug)]
enum Action {
    Arrive {
        worker: usize,
    },
    /// A slot's REQUEST reaches the master (latency already applied).
    Request {
        worker: usize,
    },
    Complete {
        worker: usize,
        task_id: String,
        generation: u64,
    },
    Kill {
        worker: usize,
    },
    PushTimeout {
        worker: usize,
        task_id: String,
        generation: u64,
        attempt: u32,
    },
}

struct Event {
    t: f64,
    seq: u64,
    action: Action,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap is a max-heap, we want the earliest event first
    fn cmp(&self, other: &Self) -> CmpOrdering {
        other.t.total_cmp(&self.t).then(other.seq.cmp(&self.seq))
    }
}

struct SimWorker {
    master_id: String,
    speed: f64,
    alive: bool,
    arrived: bool,
    drained: bool,
}

struct Sim<'a> {
    cluster: &'a ClusterSpec,
    master: MasterState,
    heap: BinaryHeap<Event>,
    seq: u64,
    workers: Vec<SimWorker>,
    /// Parked idle slots (one entry per slot) waiting for work, FIFO.
    waiters: VecDeque<usize>,
    /// task_id -> (worker, generation) of the live assignment.
    live: HashMap<String, (usize, u64)>,
    generation: u64,
    loss_rng: ChaCha8Rng,
    push: Option<PushSpec>,
    /// Idle slots the push dispatcher may target, FIFO.
    idle_push_slots: VecDeque<usize>,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, t: f64, action: Action) {
        self.seq += 1;
        self.heap.push(Event {
            t,
            seq: self.seq,
            action,
        });
    }

    fn lost(&mut self) -> bool {
        let p = self.push.as_ref().map(|p| p.p_loss).unwrap_or(0.0);
        p > 0.0 && self.loss_rng.random::<f64>() < p
    }

    fn start_execution(&mut self, now: f64, worker: usize, task_id: String, cost_s: f64) {
        self.generation += 1;
        let generation = self.generation;
        self.live.insert(task_id.clone(), (worker, generation));
        self.master.mark_started(now, &task_id);
        let duration = cost_s / self.workers[worker].speed;
        self.schedule(
            now + duration,
            Action::Complete {
                worker,
                task_id,
                generation,
            },
        );
    }

    /// PULL: wake parked slots when work appeared or the campaign drained.
    /// Parked slots of dead or drained workers are discarded, not counted.
    fn wake_waiters(&mut self, now: f64) {
        if self.push.is_some() {
            return;
        }
        let mut to_wake = if self.master.is_complete() {
            usize::MAX
        } else {
            self.master.pending_count() as usize
        };
        while to_wake > 0 {
            let Some(w) = self.waiters.pop_front() else {
                break;
            };
            if !self.workers[w].alive || self.workers[w].drained {
                continue;
            }
            self.schedule(
                now + self.cluster.pull_latency_s,
                Action::Request { worker: w },
            );
            to_wake -= 1;
        }
    }

    /// PUSH: assign pending tasks to idle slots, rolling message loss.
    fn dispatch_push(&mut self, now: f64) {
        let Some(push) = self.push.clone() else {
            return;
        };
        loop {
            let draining = self.master.is_complete();
            if !draining && self.master.pending_count() == 0 {
                break;
            }
            let Some(w) = self.next_idle_push_slot() else {
                break;
            };
            let master_id = self.workers[w].master_id.clone();
            match self.master.next_task(now, &master_id) {
                Ok(AssignOutcome::Assign(a)) => {
                    if self.lost() {
                        self.generation += 1;
                        let generation = self.generation;
                        self.live.insert(a.task_id.clone(), (w, generation));
                        self.schedule(
                            now + push.dispatch_timeout_s,
                            Action::PushTimeout {
                                worker: w,
                                task_id: a.task_id,
                                generation,
                                attempt: 0,
                            },
                        );
                    } else {
                        self.start_execution(now, w, a.task_id, a.cost_s);
                    }
                }
                Ok(AssignOutcome::Drain) => {
                    self.workers[w].drained = true;
                }
                Ok(AssignOutcome::NoWork { .. }) => {
                    self.idle_push_slots.push_front(w);
                    break;
                }
                Err(_) => break,
            }
        }
    }

    fn next_idle_push_slot(&mut self) -> Option<usize> {
        while let Some(w) = self.idle_push_slots.pop_front() {
            if self.workers[w].alive && !self.workers[w].drained {
                return Some(w);
            }
        }
        None
    }

    fn free_push_slot(&mut self, now: f64, worker: usize) {
        if self.workers[worker].alive {
            self.idle_push_slots.push_back(worker);
        }
        self.dispatch_push(now);
    }
}

/// Runs one campaign to completion and returns its trace and summary.
///
/// Identical inputs and root seed produce byte-identical traces.
pub fn simulate(
    tasks: Vec<Task>,
    cluster: &ClusterSpec,
    mode: &SimMode,
    ordering: OrderingPolicy,
    retry_cap: u32,
    root_seed: u64,
) -> Result<SimOutcome, CoreError> {
    if tasks.is_empty() {
        return Err(CoreError::InvalidSpec(
            "cannot simulate an empty task list".into(),
        ));
    }
    cluster.validate()?;
    let push = match mode {
        SimMode::Pull => None,
        SimMode::Push(p) => {
            p.validate()?;
            Some(p.clone())
        }
    };

    let ordering_seed = stream_rng(root_seed, STREAM_ORDERING).next_u64();
    let master_cfg = MasterConfig {
        ordering,
        ordering_seed,
        retry_cap,
        target_pool: cluster.workers,
        ..MasterConfig::default()
    };
    let master = MasterState::new(master_cfg, tasks)?;

    let n = cluster.workers as usize;
    let mut arrival_rng = stream_rng(root_seed, STREAM_ARRIVALS);
    let arrivals: Vec<f64> = (0..n)
        .map(|k| match &cluster.arrival {
            ArrivalModel::Immediate => 0.0,
            ArrivalModel::FixedStagger { interval_s } => k as f64 * interval_s,
            ArrivalModel::ShiftedExponential { offset_s, mean_s } => {
                offset_s + exp_sample(&mut arrival_rng, *mean_s)
            }
            ArrivalModel::Empirical { times_s } => times_s[k],
        })
        .collect();

    let mut failure_rng = stream_rng(root_seed, STREAM_FAILURES);
    let mut deaths: Vec<Option<f64>> = vec![None; n];
    match &cluster.failure {
        FailureModel::None => {}
        FailureModel::KillAt { kills } => {
            for (t, w) in kills {
                if (*w as usize) < n {
                    deaths[*w as usize] = Some(*t);
                }
            }
        }
        FailureModel::Lifetime { mean_s } => {
            for (k, death) in deaths.iter_mut().enumerate() {
                *death = Some(arrivals[k] + exp_sample(&mut failure_rng, *mean_s));
            }
        }
    }

    let mut sim = Sim {
        cluster,
        master,
        heap: BinaryHeap::new(),
        seq: 0,
        workers: (0..n)
            .map(|k| SimWorker {
                master_id: String::new(),
                speed: cluster.speed_of(k),
                alive: true,
                arrived: false,
                drained: false,
            })
            .collect(),
        waiters: VecDeque::new(),
        live: HashMap::new(),
        generation: 0,
        loss_rng: stream_rng(root_seed, STREAM_LOSS),
        push,
        idle_push_slots: VecDeque::new(),
    };

    for (k, &t) in arrivals.iter().enumerate() {
        sim.schedule(t, Action::Arrive { worker: k });
        if let Some(d) = deaths[k] {
            sim.schedule(d.max(t), Action::Kill { worker: k });
        }
    }

    while let Some(Event { t, action, .. }) = sim.heap.pop() {
        match action {
            Action::Arrive { worker } => {
                let id = sim.master.register(
                    t,
                    cluster.slots_per_worker,
                    Some(sim.workers[worker].speed),
                );
                sim.workers[worker].master_id = id;
                sim.workers[worker].arrived = true;
                if sim.push.is_some() {
                    for _ in 0..cluster.slots_per_worker {
                        sim.idle_push_slots.push_back(worker);
                    }
                    sim.dispatch_push(t);
                } else {
                    for _ in 0..cluster.slots_per_worker {
                        sim.schedule(t + cluster.pull_latency_s, Action::Request { worker });
                    }
                }
            }
            Action::Request { worker } => {
                let w = &sim.workers[worker];
                if !w.alive || !w.arrived || w.drained {
                    continue;
                }
                let master_id = w.master_id.clone();
                match sim.master.next_task(t, &master_id) {
                    Ok(AssignOutcome::Assign(a)) => {
                        sim.start_execution(t, worker, a.task_id, a.cost_s);
                    }
                    Ok(AssignOutcome::NoWork { .. }) => {
                        sim.waiters.push_back(worker);
                    }
                    Ok(AssignOutcome::Drain) => {
                        sim.workers[worker].drained = true;
                    }
                    Err(_) => {}
                }
            }
            Action::Complete {
                worker,
                task_id,
                generation,
            } => {
                if sim.live.get(&task_id) != Some(&(worker, generation))
                    || !sim.workers[worker].alive
                {
                    continue;
                }
                sim.live.remove(&task_id);
                let master_id = sim.workers[worker].master_id.clone();
                let d = sim.workers[worker].speed;
                let cost = sim
                    .master
                    .task(&task_id)
                    .map(|t| t.total_cost)
                    .unwrap_or(0.0);
                sim.master
                    .record_result(t, &master_id, &task_id, true, cost / d);
                if sim.push.is_some() {
                    sim.free_push_slot(t, worker);
                    if sim.master.is_complete() {
                        sim.drain_idle_push_slots(t);
                    }
                } else {
                    sim.schedule(t + cluster.pull_latency_s, Action::Request { worker });
                    sim.wake_waiters(t);
                }
            }
            Action::Kill { worker } => {
                if !sim.workers[worker].alive || !sim.workers[worker].arrived {
                    continue;
                }
                sim.workers[worker].alive = false;
                let master_id = sim.workers[worker].master_id.clone();
                let requeued = sim.master.force_lost(t, &master_id);
                for task in &requeued {
                    sim.live.remove(task);
                }
                sim.live.retain(|_, (w, _)| *w != worker);
                if sim.push.is_some() {
                    sim.dispatch_push(t);
                } else {
                    sim.wake_waiters(t);
                }
            }
            Action::PushTimeout {
                worker,
                task_id,
                generation,
                attempt,
            } => {
                if sim.live.get(&task_id) != Some(&(worker, generation))
                    || !sim.workers[worker].alive
                {
                    continue;
                }
                let push = sim.push.clone().expect("push timeout implies push mode");
                if attempt < push.resend_cap {
                    if sim.lost() {
                        sim.schedule(
                            t + push.dispatch_timeout_s,
                            Action::PushTimeout {
                                worker,
                                task_id,
                                generation,
                                attempt: attempt + 1,
                            },
                        );
                    } else {
                        let cost = sim
                            .master
                            .task(&task_id)
                            .map(|x| x.total_cost)
                            .unwrap_or(0.0);
                        sim.live.remove(&task_id);
                        sim.start_execution(t, worker, task_id, cost);
                    }
                } else {
                    // every resend lost: surrender the assignment
                    sim.live.remove(&task_id);
                    let master_id = sim.workers[worker].master_id.clone();
                    sim.master
                        .record_result(t, &master_id, &task_id, false, 0.0);
                    sim.free_push_slot(t, worker);
                    if sim.master.is_complete() {
                        sim.drain_idle_push_slots(t);
                    }
                }
            }
        }
    }

    let summary = sim.master.summary();
    let trace = sim.master.take_trace()?;
    Ok(SimOutcome { trace, summary })
}

impl<'a> Sim<'a> {
    fn drain_idle_push_slots(&mut self, now: f64) {
        while let Some(w) = self.next_idle_push_slot() {
            let master_id = self.workers[w].master_id.clone();
            if let Ok(AssignOutcome::Drain) = self.master.next_task(now, &master_id) {
                self.workers[w].drained = true;
            }
        }
    }
}
