//! The pull-model master as a pure state machine.
//!
//! Every mutation takes an explicit `now` (seconds since campaign start) and
//! appends to an internal event log, so the same logic drives both the live
//! TCP server and the discrete-event simulator. Worker clocks are never
//! consulted; all timestamps are the caller's clock.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::clustering::{queue_rank, random_rank_table};
use crate::error::CoreError;
use crate::model::{OrderingPolicy, Task, TaskState};
use crate::trace::{EventKind, RunSummary, RunTrace, TraceEvent};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MasterError {
    #[error("unknown or inactive worker {0:?}")]
    UnknownWorker(String),

    #[error("worker {0:?} is at slot capacity")]
    AtCapacity(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasterConfig {
    pub heartbeat_interval_s: f64,
    pub lost_timeout_s: f64,
    pub retry_cap: u32,
    pub ordering: OrderingPolicy,
    pub ordering_seed: u64,
    /// Expected worker pool size N_w; analytics hint, 0 when unknown.
    pub target_pool: u32,
    /// retry_after_s suggested to workers when the queue is momentarily empty.
    pub nowork_retry_s: f64,
}

impl Default for MasterConfig {
    fn default() -> Self {
        MasterConfig {
            heartbeat_interval_s: 10.0,
            lost_timeout_s: 30.0,
            retry_cap: 3,
            ordering: OrderingPolicy::Natural,
            ordering_seed: 0,
            target_pool: 0,
            nowork_retry_s: 1.0,
        }
    }
}

impl MasterConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.heartbeat_interval_s <= 0.0 {
            return Err(CoreError::InvalidSpec(
                "heartbeat_interval_s must be > 0".into(),
            ));
        }
        if self.lost_timeout_s < 2.0 * self.heartbeat_interval_s {
            return Err(CoreError::InvalidSpec(format!(
                "lost_timeout_s ({}) must be at least twice heartbeat_interval_s ({})",
                self.lost_timeout_s, self.heartbeat_interval_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WorkerLiveness {
    Active,
    Lost,
    Drained,
}

#[derive(Debug, Clone)]
pub struct WorkerRecord {
    pub worker_id: String,
    pub slots: u32,
    pub speed_hint: Option<f64>,
    pub state: WorkerLiveness,
    pub last_heartbeat: f64,
    pub joined_at: f64,
    /// Indices into the master's task table.
    assigned: BTreeSet<usize>,
    /// The worker has been told to drain; it counts as drained once its
    /// in-flight tasks report back.
    drain_sent: bool,
}

impl WorkerRecord {
    pub fn assigned_count(&self) -> usize {
        self.assigned.len()
    }
}

/// What the master hands a requesting worker.
#[derive(Debug, Clone, PartialEq)]
pub enum AssignOutcome {
    Assign(AssignedTask),
    NoWork { retry_after_s: f64 },
    Drain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignedTask {
    pub task_id: String,
    pub calc_ids: Vec<String>,
    pub payload_ref: String,
    pub cost_s: f64,
}

/// Result acknowledgement; duplicates and unknown tasks are absorbed, never
/// errors, because stale workers are expected.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AckOutcome {
    pub warning: Option<String>,
    /// True when the result was discarded (duplicate, late or stale).
    pub discarded: bool,
}

/// Point-in-time counters plus the running summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub pool_active: u64,
    /// Slot capacity across active workers.
    pub pool_slots: u64,
    pub busy_workers: u64,
    pub pending: u64,
    /// Tasks out on workers; equivalently, busy slots.
    pub in_flight: u64,
    pub done: u64,
    pub failed: u64,
    pub calcs_done: u64,
    pub summary: RunSummary,
}

struct TaskEntry {
    task: Task,
    assigned_to: Option<usize>,
    assigned_at: Option<f64>,
}

pub struct MasterState {
    cfg: MasterConfig,
    tasks: Vec<TaskEntry>,
    task_index: HashMap<String, usize>,
    /// Pending tasks keyed by (policy rank, tiebreak); pop_first serves next.
    queue: BTreeSet<(u64, u64)>,
    ranks: Vec<(u64, u64)>,
    workers: Vec<WorkerRecord>,
    worker_index: HashMap<String, usize>,
    events: Vec<TraceEvent>,
    events_cursor: usize,
    draining: bool,
    busy_area_s: f64,
    done_count: u64,
    failed_count: u64,
    calcs_done: u64,
    n_calc: u64,
    last_terminal_t: f64,
}

impl MasterState {
    pub fn new(cfg: MasterConfig, tasks: Vec<Task>) -> Result<Self, CoreError> {
        cfg.validate()?;
        let random_table = match cfg.ordering {
            OrderingPolicy::Random => Some(random_rank_table(tasks.len(), cfg.ordering_seed)),
            _ => None,
        };
        let mut ranks = Vec::with_capacity(tasks.len());
        let mut queue = BTreeSet::new();
        let mut task_index = HashMap::with_capacity(tasks.len());
        let mut n_calc = 0u64;
        let mut entries = Vec::with_capacity(tasks.len());
        for (i, mut task) in tasks.into_iter().enumerate() {
            task.state = TaskState::Pending;
            task.attempts = 0;
            task.assigned_worker = None;
            n_calc += task.calc_ids.len() as u64;
            let rank = queue_rank(cfg.ordering, task.total_cost, i, random_table.as_deref());
            ranks.push(rank);
            queue.insert(rank);
            task_index.insert(task.task_id.clone(), i);
            entries.push(TaskEntry {
                task,
                assigned_to: None,
                assigned_at: None,
            });
        }
        Ok(MasterState {
            cfg,
            tasks: entries,
            task_index,
            queue,
            ranks,
            workers: Vec::new(),
            worker_index: HashMap::new(),
            events: Vec::new(),
            events_cursor: 0,
            draining: false,
            busy_area_s: 0.0,
            done_count: 0,
            failed_count: 0,
            calcs_done: 0,
            n_calc,
            last_terminal_t: 0.0,
        })
    }

    pub fn config(&self) -> &MasterConfig {
        &self.cfg
    }

    pub fn register(&mut self, now: f64, slots: u32, speed_hint: Option<f64>) -> String {
        let worker_id = format!("w-{:04}", self.workers.len());
        let slots = slots.max(1);
        self.workers.push(WorkerRecord {
            worker_id: worker_id.clone(),
            slots,
            speed_hint,
            state: WorkerLiveness::Active,
            last_heartbeat: now,
            joined_at: now,
            assigned: BTreeSet::new(),
            drain_sent: false,
        });
        self.worker_index
            .insert(worker_id.clone(), self.workers.len() - 1);
        self.events
            .push(TraceEvent::join_event(now, &worker_id, slots));
        worker_id
    }

    fn active_worker(&mut self, now: f64, worker_id: &str) -> Result<usize, MasterError> {
        let widx = *self
            .worker_index
            .get(worker_id)
            .ok_or_else(|| MasterError::UnknownWorker(worker_id.to_string()))?;
        if self.workers[widx].state != WorkerLiveness::Active {
            return Err(MasterError::UnknownWorker(worker_id.to_string()));
        }
        self.workers[widx].last_heartbeat = now;
        Ok(widx)
    }

    pub fn heartbeat(&mut self, now: f64, worker_id: &str, busy_task_ids: &[String]) -> AckOutcome {
        let widx = match self.active_worker(now, worker_id) {
            Ok(w) => w,
            Err(e) => {
                return AckOutcome {
                    warning: Some(e.to_string()),
                    discarded: true,
                }
            }
        };
        for task_id in busy_task_ids {
            if let Some(&tidx) = self.task_index.get(task_id) {
                let entry = &mut self.tasks[tidx];
                if entry.assigned_to == Some(widx) && entry.task.state == TaskState::Assigned {
                    entry.task.state = TaskState::Running;
                    entry.task.timestamps.started = Some(now);
                    self.events.push(TraceEvent::task_event(
                        now,
                        EventKind::TaskStart,
                        Some(worker_id),
                        task_id,
                    ));
                }
            }
        }
        AckOutcome::default()
    }

    pub fn next_task(&mut self, now: f64, worker_id: &str) -> Result<AssignOutcome, MasterError> {
        let widx = self.active_worker(now, worker_id)?;
        let w = &self.workers[widx];
        if w.assigned.len() >= w.slots as usize {
            return Err(MasterError::AtCapacity(worker_id.to_string()));
        }
        if self.draining || self.is_complete() {
            self.workers[widx].drain_sent = true;
            self.mark_drained_if_idle(now, widx);
            return Ok(AssignOutcome::Drain);
        }
        let Some(&key) = self.queue.first() else {
            return Ok(AssignOutcome::NoWork {
                retry_after_s: self.cfg.nowork_retry_s,
            });
        };
        self.queue.remove(&key);
        let tidx = key.1 as usize;
        let entry = &mut self.tasks[tidx];
        entry.task.state = TaskState::Assigned;
        entry.task.assigned_worker = Some(worker_id.to_string());
        entry.task.timestamps.assigned = Some(now);
        entry.assigned_to = Some(widx);
        entry.assigned_at = Some(now);
        self.workers[widx].assigned.insert(tidx);
        self.events.push(TraceEvent {
            t: now,
            kind: EventKind::TaskAssign,
            worker: Some(worker_id.to_string()),
            task: Some(entry.task.task_id.clone()),
            cost: Some(entry.task.total_cost),
            calcs: Some(entry.task.calc_ids.len() as u64),
            slots: None,
        });
        Ok(AssignOutcome::Assign(AssignedTask {
            task_id: entry.task.task_id.clone(),
            calc_ids: entry.task.calc_ids.clone(),
            payload_ref: entry.task.payload_ref.clone(),
            cost_s: entry.task.total_cost,
        }))
    }

    /// Records a task start observed by the caller (simulator or an explicit
    /// signal); heartbeats mark starts implicitly in the live path.
    pub fn mark_started(&mut self, now: f64, task_id: &str) {
        if let Some(&tidx) = self.task_index.get(task_id) {
            let entry = &mut self.tasks[tidx];
            if entry.task.state == TaskState::Assigned {
                entry.task.state = TaskState::Running;
                entry.task.timestamps.started = Some(now);
                let worker = entry.task.assigned_worker.clone();
                self.events.push(TraceEvent::task_event(
                    now,
                    EventKind::TaskStart,
                    worker.as_deref(),
                    task_id,
                ));
            }
        }
    }

    pub fn record_result(
        &mut self,
        now: f64,
        worker_id: &str,
        task_id: &str,
        ok: bool,
        _elapsed_s: f64,
    ) -> AckOutcome {
        if let Some(&widx) = self.worker_index.get(worker_id) {
            if self.workers[widx].state == WorkerLiveness::Active {
                self.workers[widx].last_heartbeat = now;
            }
        }
        let Some(&tidx) = self.task_index.get(task_id) else {
            return AckOutcome {
                warning: Some(format!("unknown task {task_id:?}")),
                discarded: true,
            };
        };
        let widx = self.worker_index.get(worker_id).copied();
        let entry = &self.tasks[tidx];
        // first result wins: anything from a non-assignee is late or duplicate
        if entry.task.state.is_terminal()
            || entry.assigned_to.is_none()
            || entry.assigned_to != widx
        {
            return AckOutcome {
                warning: None,
                discarded: true,
            };
        }
        let widx = widx.expect("assignee exists");
        let assigned_at = entry
            .assigned_at
            .expect("assigned task has assignment time");
        self.busy_area_s += now - assigned_at;
        self.workers[widx].assigned.remove(&tidx);
        let entry = &mut self.tasks[tidx];
        entry.assigned_to = None;
        entry.assigned_at = None;
        if ok {
            entry.task.state = TaskState::Done;
            if entry.task.timestamps.started.is_none() {
                entry.task.timestamps.started = Some(assigned_at);
            }
            entry.task.timestamps.finished = Some(now);
            self.done_count += 1;
            self.calcs_done += entry.task.calc_ids.len() as u64;
            self.last_terminal_t = self.last_terminal_t.max(now);
            self.events.push(TraceEvent {
                t: now,
                kind: EventKind::TaskDone,
                worker: Some(worker_id.to_string()),
                task: Some(task_id.to_string()),
                cost: Some(entry.task.total_cost),
                calcs: None,
                slots: None,
            });
        } else {
            entry.task.assigned_worker = None;
            self.fail_attempt(now, tidx);
        }
        self.mark_drained_if_idle(now, widx);
        AckOutcome::default()
    }

    /// One failed or lost attempt: requeue within the retry budget,
    /// otherwise the task is terminally FAILED.
    fn fail_attempt(&mut self, now: f64, tidx: usize) {
        let entry = &mut self.tasks[tidx];
        entry.task.attempts += 1;
        entry.task.assigned_worker = None;
        entry.assigned_to = None;
        entry.assigned_at = None;
        if entry.task.attempts <= self.cfg.retry_cap {
            entry.task.state = TaskState::Pending;
            entry.task.timestamps.started = None;
            self.queue.insert(self.ranks[tidx]);
            self.events.push(TraceEvent::task_event(
                now,
                EventKind::TaskRequeue,
                None,
                &entry.task.task_id,
            ));
        } else {
            entry.task.state = TaskState::Failed;
            entry.task.timestamps.finished = Some(now);
            self.failed_count += 1;
            self.last_terminal_t = self.last_terminal_t.max(now);
            self.events.push(TraceEvent::task_event(
                now,
                EventKind::TaskFail,
                None,
                &entry.task.task_id,
            ));
        }
    }

    /// Declares every silent worker lost and requeues its tasks. Returns the
    /// requeued task ids.
    pub fn detect_lost(&mut self, now: f64) -> Vec<String> {
        let stale: Vec<usize> = self
            .workers
            .iter()
            .enumerate()
            .filter(|(_, w)| {
                w.state == WorkerLiveness::Active
                    && now - w.last_heartbeat > self.cfg.lost_timeout_s
            })
            .map(|(i, _)| i)
            .collect();
        let mut requeued = Vec::new();
        for widx in stale {
            requeued.extend(self.force_lost_idx(now, widx));
        }
        requeued
    }

    /// Immediately declares one worker lost (used by the simulator's failure
    /// models and by connection teardown).
    pub fn force_lost(&mut self, now: f64, worker_id: &str) -> Vec<String> {
        match self.worker_index.get(worker_id) {
            Some(&widx) if self.workers[widx].state == WorkerLiveness::Active => {
                self.force_lost_idx(now, widx)
            }
            _ => Vec::new(),
        }
    }

    fn force_lost_idx(&mut self, now: f64, widx: usize) -> Vec<String> {
        self.workers[widx].state = WorkerLiveness::Lost;
        let worker_id = self.workers[widx].worker_id.clone();
        self.events.push(TraceEvent::worker_event(
            now,
            EventKind::WorkerLost,
            &worker_id,
        ));
        let held: Vec<usize> = std::mem::take(&mut self.workers[widx].assigned)
            .into_iter()
            .collect();
        let mut requeued = Vec::new();
        for tidx in held {
            // the lost attempt still counts as busy time: the worker was
            // genuinely occupied until the loss was declared
            if let Some(assigned_at) = self.tasks[tidx].assigned_at {
                self.busy_area_s += now - assigned_at;
            }
            let id = self.tasks[tidx].task.task_id.clone();
            self.fail_attempt(now, tidx);
            if self.tasks[tidx].task.state == TaskState::Pending {
                requeued.push(id);
            }
        }
        requeued
    }

    fn mark_drained_if_idle(&mut self, now: f64, widx: usize) {
        let w = &mut self.workers[widx];
        if w.drain_sent && w.state == WorkerLiveness::Active && w.assigned.is_empty() {
            w.state = WorkerLiveness::Drained;
            let id = w.worker_id.clone();
            self.events
                .push(TraceEvent::worker_event(now, EventKind::WorkerDrained, &id));
        }
    }

    /// Stops handing out tasks; workers drain as they finish in-flight work.
    pub fn request_drain(&mut self) {
        self.draining = true;
    }

    pub fn is_complete(&self) -> bool {
        self.done_count + self.failed_count == self.tasks.len() as u64
    }

    pub fn all_drained(&self) -> bool {
        (self.is_complete() || self.draining)
            && self
                .workers
                .iter()
                .all(|w| w.state != WorkerLiveness::Active)
    }

    pub fn pending_count(&self) -> u64 {
        self.queue.len() as u64
    }

    pub fn in_flight_count(&self) -> u64 {
        self.tasks.len() as u64 - self.queue.len() as u64 - self.done_count - self.failed_count
    }

    pub fn snapshot(&self, now: f64) -> Snapshot {
        let active = || {
            self.workers
                .iter()
                .filter(|w| w.state == WorkerLiveness::Active)
        };
        let pool_active = active().count() as u64;
        let pool_slots = active().map(|w| w.slots as u64).sum();
        let busy_workers = active().filter(|w| !w.assigned.is_empty()).count() as u64;
        Snapshot {
            t: now,
            pool_active,
            pool_slots,
            busy_workers,
            pending: self.pending_count(),
            in_flight: self.in_flight_count(),
            done: self.done_count,
            failed: self.failed_count,
            calcs_done: self.calcs_done,
            summary: self.summary_at(now),
        }
    }

    fn summary_at(&self, t_total: f64) -> RunSummary {
        let n_task = self.tasks.len() as u64;
        RunSummary {
            n_calc: self.n_calc,
            n_task,
            t_total_s: t_total,
            t_worker_s: self.busy_area_s,
            n_worker: self.workers.len() as u64,
            r_fail: if n_task == 0 {
                0.0
            } else {
                self.failed_count as f64 / n_task as f64
            },
        }
    }

    /// Final summary; valid once the campaign is complete. The makespan is
    /// the time of the last terminal task event.
    pub fn summary(&self) -> RunSummary {
        self.summary_at(self.last_terminal_t)
    }

    /// Events appended since the previous call; the live server persists
    /// these incrementally.
    pub fn drain_events(&mut self) -> &[TraceEvent] {
        let start = self.events_cursor;
        self.events_cursor = self.events.len();
        &self.events[start..]
    }

    /// Full event log as a validated trace.
    pub fn take_trace(self) -> Result<RunTrace, CoreError> {
        RunTrace::validate(self.events)
    }

    pub fn worker(&self, worker_id: &str) -> Option<&WorkerRecord> {
        self.worker_index.get(worker_id).map(|&i| &self.workers[i])
    }

    pub fn task(&self, task_id: &str) -> Option<&Task> {
        self.task_index.get(task_id).map(|&i| &self.tasks[i].task)
    }

    /// Final task records (states, attempts, timestamps) for persistence.
    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.iter().map(|e| &e.task)
    }
}
