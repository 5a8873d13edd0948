//! Campaign traces: the timestamped event log every master run or simulation
//! produces, and the aggregate summary derived from it.
//!
//! Trace files are JSON Lines, one event per line:
//! `{"t":..,"kind":..,"worker":..,"task":..,"cost":..,"calcs":..}` with
//! absent fields omitted. `calcs` rides on TASK_ASSIGN so a trace alone is
//! enough to rebuild the summary.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    WorkerJoin,
    WorkerLost,
    WorkerDrained,
    TaskAssign,
    TaskStart,
    TaskDone,
    TaskFail,
    TaskRequeue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Seconds since campaign start, master clock.
    pub t: f64,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worker: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    /// Number of atomic calculations in the task; present on TASK_ASSIGN.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calcs: Option<u64>,
    /// Execution slots the worker contributes; present on WORKER_JOIN so the
    /// pool curve measures capacity, not worker bodies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<u32>,
}

impl TraceEvent {
    pub fn worker_event(t: f64, kind: EventKind, worker: &str) -> Self {
        TraceEvent {
            t,
            kind,
            worker: Some(worker.to_string()),
            task: None,
            cost: None,
            calcs: None,
            slots: None,
        }
    }

    pub fn join_event(t: f64, worker: &str, slots: u32) -> Self {
        TraceEvent {
            slots: Some(slots),
            ..TraceEvent::worker_event(t, EventKind::WorkerJoin, worker)
        }
    }

    pub fn task_event(t: f64, kind: EventKind, worker: Option<&str>, task: &str) -> Self {
        TraceEvent {
            t,
            kind,
            worker: worker.map(str::to_string),
            task: Some(task.to_string()),
            cost: None,
            calcs: None,
            slots: None,
        }
    }
}

/// An ordered, validated event log.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunTrace {
    pub events: Vec<TraceEvent>,
}

impl RunTrace {
    /// Validates ordering and causality; on failure names the first
    /// offending event index.
    pub fn validate(events: Vec<TraceEvent>) -> Result<RunTrace, CoreError> {
        let mut joined: HashSet<&str> = HashSet::new();
        let mut assigned: HashSet<&str> = HashSet::new();
        let mut last_t = f64::NEG_INFINITY;
        for (index, e) in events.iter().enumerate() {
            if !e.t.is_finite() || e.t < 0.0 {
                return Err(CoreError::InvalidTrace {
                    index,
                    reason: format!("bad timestamp {}", e.t),
                });
            }
            if e.t < last_t {
                return Err(CoreError::InvalidTrace {
                    index,
                    reason: format!("timestamp {} decreases below {}", e.t, last_t),
                });
            }
            last_t = e.t;
            match e.kind {
                EventKind::WorkerJoin => {
                    if let Some(w) = &e.worker {
                        joined.insert(w);
                    }
                }
                EventKind::WorkerLost | EventKind::WorkerDrained => {
                    let w = e.worker.as_deref().unwrap_or("");
                    if !joined.contains(w) {
                        return Err(CoreError::InvalidTrace {
                            index,
                            reason: format!("{:?} for worker {w:?} that never joined", e.kind),
                        });
                    }
                }
                EventKind::TaskAssign => {
                    if let Some(task) = &e.task {
                        assigned.insert(task);
                    }
                }
                EventKind::TaskDone
                | EventKind::TaskStart
                | EventKind::TaskFail
                | EventKind::TaskRequeue => {
                    let task = e.task.as_deref().unwrap_or("");
                    if !assigned.contains(task) {
                        return Err(CoreError::InvalidTrace {
                            index,
                            reason: format!("{:?} for task {task:?} never assigned", e.kind),
                        });
                    }
                }
            }
        }
        Ok(RunTrace { events })
    }

    pub fn makespan(&self) -> f64 {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::TaskDone | EventKind::TaskFail))
            .map(|e| e.t)
            .fold(0.0, f64::max)
    }

    /// Time of the last event of any kind; the integration horizon.
    pub fn horizon(&self) -> f64 {
        self.events.last().map(|e| e.t).unwrap_or(0.0)
    }

    /// Rebuilds the aggregate summary from the event log alone.
    pub fn summary(&self) -> RunSummary {
        use std::collections::HashMap;
        let mut calcs_per_task: HashMap<&str, u64> = HashMap::new();
        let mut failed: HashSet<&str> = HashSet::new();
        let mut workers: HashSet<&str> = HashSet::new();
        let mut open: HashMap<&str, f64> = HashMap::new();
        let mut busy = 0.0;
        for e in &self.events {
            match e.kind {
                EventKind::WorkerJoin => {
                    workers.insert(e.worker.as_deref().unwrap_or(""));
                }
                EventKind::TaskAssign => {
                    let task = e.task.as_deref().unwrap_or("");
                    if let Some(c) = e.calcs {
                        calcs_per_task.insert(task, c);
                    } else {
                        calcs_per_task.entry(task).or_insert(0);
                    }
                    open.insert(task, e.t);
                }
                EventKind::TaskDone | EventKind::TaskFail | EventKind::TaskRequeue => {
                    let task = e.task.as_deref().unwrap_or("");
                    if let Some(t0) = open.remove(task) {
                        busy += e.t - t0;
                    }
                    if e.kind == EventKind::TaskFail {
                        failed.insert(task);
                    }
                }
                _ => {}
            }
        }
        let n_task = calcs_per_task.len() as u64;
        RunSummary {
            n_calc: calcs_per_task.values().sum(),
            n_task,
            t_total_s: self.makespan(),
            t_worker_s: busy,
            n_worker: workers.len() as u64,
            r_fail: if n_task == 0 {
                0.0
            } else {
                failed.len() as f64 / n_task as f64
            },
        }
    }
}

/// Aggregate statistics of one campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_calc: u64,
    pub n_task: u64,
    /// Makespan: campaign start to last task completion, seconds.
    pub t_total_s: f64,
    /// Integrated busy time across workers, seconds.
    pub t_worker_s: f64,
    /// Distinct workers that ever joined.
    pub n_worker: u64,
    /// Fraction of tasks that could not be completed after retries.
    pub r_fail: f64,
}

pub fn write_trace<W: Write>(mut w: W, trace: &RunTrace) -> Result<(), CoreError> {
    for e in &trace.events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace<R: Read>(r: R) -> Result<RunTrace, CoreError> {
    let mut events = Vec::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line)?);
    }
    RunTrace::validate(events)
}

pub fn read_trace_file(path: &Path) -> Result<RunTrace, CoreError> {
    read_trace(std::fs::File::open(path)?)
}

pub fn write_trace_file(path: &Path, trace: &RunTrace) -> Result<(), CoreError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trace(&mut f, trace)?;
    f.flush()?;
    Ok(())
}
