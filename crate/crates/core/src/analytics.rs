//! Trace analytics: pool/busy time series, the phase decomposition of
//! capacity into latency, overhead, busy and tail-idle areas, run profiles
//! and the work-conservation bound check.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::trace::{EventKind, RunTrace};

/// One sample of the pool and busy step functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesSample {
    /// Sample time, seconds.
    pub t_s: f64,
    /// Workers joined minus lost minus drained up to t.
    pub pool: i64,
    /// Tasks assigned minus completed/failed/requeued up to t.
    pub busy: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledSeries {
    pub dt_s: f64,
    pub samples: Vec<SeriesSample>,
}

/// Running pool/busy state. The pool is measured in execution slots: a
/// WORKER_JOIN carrying `slots` contributes that capacity, a bare one
/// contributes 1.
#[derive(Default)]
struct StepState {
    pool: i64,
    busy: i64,
    slots_by_worker: std::collections::HashMap<String, i64>,
}

impl StepState {
    fn apply(&mut self, e: &crate::trace::TraceEvent) {
        match e.kind {
            EventKind::WorkerJoin => {
                let slots = e.slots.unwrap_or(1) as i64;
                if let Some(w) = &e.worker {
                    self.slots_by_worker.insert(w.clone(), slots);
                }
                self.pool += slots;
            }
            EventKind::WorkerLost | EventKind::WorkerDrained => {
                let slots = e
                    .worker
                    .as_ref()
                    .and_then(|w| self.slots_by_worker.get(w).copied())
                    .unwrap_or(1);
                self.pool -= slots;
            }
            EventKind::TaskAssign => self.busy += 1,
            EventKind::TaskDone | EventKind::TaskFail | EventKind::TaskRequeue => self.busy -= 1,
            EventKind::TaskStart => {}
        }
    }
}

/// Samples p(t) and b(t) at k * dt for k = 1..=ceil(horizon / dt).
///
/// Each sample reports the state of the open interval leading up to its
/// timestamp: an event at exactly k * dt shows up from sample k + 1 on.
/// That keeps a task spanning a whole interval counted as busy for it.
pub fn build_series(trace: &RunTrace, dt_s: f64) -> Result<SampledSeries, CoreError> {
    build_series_from(trace, dt_s, 0.0)
}

fn build_series_from(trace: &RunTrace, dt_s: f64, origin: f64) -> Result<SampledSeries, CoreError> {
    if dt_s <= 0.0 {
        return Err(CoreError::InvalidSpec(format!(
            "dt must be > 0, got {dt_s}"
        )));
    }
    let duration = trace.horizon() - origin;
    if trace.events.is_empty() || duration <= 0.0 {
        return Ok(SampledSeries {
            dt_s,
            samples: Vec::new(),
        });
    }
    let steps = (duration / dt_s).ceil() as usize;
    let mut samples = Vec::with_capacity(steps);
    let mut state = StepState::default();
    let mut it = trace.events.iter().peekable();
    for k in 1..=steps {
        let t = origin + k as f64 * dt_s;
        while let Some(e) = it.peek() {
            if e.t >= t {
                break;
            }
            state.apply(e);
            it.next();
        }
        samples.push(SeriesSample {
            t_s: t,
            pool: state.pool,
            busy: state.busy,
        });
    }
    Ok(SampledSeries { dt_s, samples })
}

/// Capacity split of one campaign: where the worker-seconds went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDecomposition {
    /// Target pool size the areas are measured against.
    pub n_w: u32,
    pub dt_s: f64,
    /// Last task completion relative to the origin, seconds.
    pub makespan_s: f64,
    /// Last event relative to the origin; the integration horizon.
    pub horizon_s: f64,
    /// First sample at which the pool reached n_w (horizon if never).
    pub t1_s: f64,
    /// First sample at which remaining tasks dropped below the pool size.
    pub t2_s: f64,
    /// Capacity lost before the pool ramped to target, worker-seconds.
    pub latency_area: f64,
    /// Idle-but-available capacity before the tail phase, worker-seconds.
    pub overhead_area: f64,
    /// Idle capacity during the tail phase, worker-seconds.
    pub tail_idle_area: f64,
    /// Capacity spent executing tasks, worker-seconds.
    pub busy_area: f64,
    /// n_w * horizon_s.
    pub capacity: f64,
    pub pct_latency: f64,
    pub pct_overhead: f64,
    pub pct_tail_idle: f64,
    pub pct_busy: f64,
    /// Busy fraction of the pool during the tail phase.
    pub tail_utilization: f64,
    /// True when the pool never exceeded n_w, in which case
    /// latency + overhead + tail_idle + busy == capacity.
    pub identity_applicable: bool,
}

/// Decomposes a campaign window starting at t = 0.
pub fn decompose(trace: &RunTrace, n_w: u32, dt_s: f64) -> Result<PhaseDecomposition, CoreError> {
    decompose_from(trace, n_w, dt_s, 0.0)
}

/// Decomposes the window starting at `origin`; timestamps below the origin
/// would make areas negative, so the trace must not precede it.
pub fn decompose_from(
    trace: &RunTrace,
    n_w: u32,
    dt_s: f64,
    origin: f64,
) -> Result<PhaseDecomposition, CoreError> {
    if n_w == 0 {
        return Err(CoreError::InvalidSpec("target pool n_w must be > 0".into()));
    }
    if dt_s <= 0.0 {
        return Err(CoreError::InvalidSpec(format!(
            "dt must be > 0, got {dt_s}"
        )));
    }
    let horizon = (trace.horizon() - origin).max(0.0);
    let makespan = (trace.makespan() - origin).max(0.0);

    let n_task = {
        use std::collections::HashSet;
        let mut ids: HashSet<&str> = HashSet::new();
        for e in &trace.events {
            if e.kind == EventKind::TaskAssign {
                ids.insert(e.task.as_deref().unwrap_or(""));
            }
        }
        ids.len() as i64
    };

    let target = n_w as f64;
    let mut t1 = None;
    let mut t2 = None;
    let (mut latency, mut busy_area, mut before, mut tail) = (0.0, 0.0, 0.0, 0.0);
    let (mut tail_busy, mut tail_pool) = (0.0, 0.0);
    let mut identity_applicable = true;

    // Integrate the sampled step functions. The final sample is clipped to
    // the horizon so the interval widths sum to exactly the horizon; sample
    // values describe the interval interior (events at the boundary count
    // from the next interval on), which keeps the areas exact when events
    // land on sample times.
    let steps = if horizon > 0.0 {
        (horizon / dt_s).ceil() as usize
    } else {
        0
    };
    let mut state = StepState::default();
    let mut terminals = 0i64;
    let mut it = trace.events.iter().peekable();
    let mut prev_t = 0.0;
    for k in 1..=steps {
        let rel_t = (k as f64 * dt_s).min(horizon);
        let w = rel_t - prev_t;
        prev_t = rel_t;
        while let Some(e) = it.peek() {
            if e.t - origin >= rel_t {
                break;
            }
            state.apply(e);
            if matches!(e.kind, EventKind::TaskDone | EventKind::TaskFail) {
                terminals += 1;
            }
            it.next();
        }
        let p = state.pool as f64;
        let b = state.busy as f64;
        if p > target {
            identity_applicable = false;
        }
        if t1.is_none() && p >= target {
            t1 = Some(rel_t);
        }
        let remaining = n_task - terminals;
        if t2.is_none() && (remaining as f64) < p {
            t2 = Some(rel_t);
        }
        latency += w * (target - p).max(0.0);
        busy_area += w * b;
        if t2.is_none() {
            before += w * (p - b);
        } else {
            tail += w * (p - b);
            tail_busy += w * b;
            tail_pool += w * p;
        }
    }
    let t1 = t1.unwrap_or(horizon);
    let tail_empty = t2.is_none();
    let t2 = t2.unwrap_or(horizon);
    let capacity = target * horizon;
    let pct = |x: f64| {
        if capacity > 0.0 {
            100.0 * x / capacity
        } else {
            0.0
        }
    };
    Ok(PhaseDecomposition {
        n_w,
        dt_s,
        makespan_s: makespan,
        horizon_s: horizon,
        t1_s: t1,
        t2_s: t2,
        latency_area: latency,
        overhead_area: before,
        tail_idle_area: tail,
        busy_area,
        capacity,
        pct_latency: pct(latency),
        pct_overhead: pct(before),
        pct_tail_idle: pct(tail),
        pct_busy: pct(busy_area),
        tail_utilization: if tail_pool > 0.0 {
            tail_busy / tail_pool
        } else if tail_empty {
            1.0
        } else {
            0.0
        },
        identity_applicable,
    })
}

/// One completed task as a (time, worker ordinal) point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub t_s: f64,
    /// Worker ordinal by join order, starting at 0.
    pub worker: u32,
    pub task: String,
}

/// Scatter of task completions per worker, ordinals assigned by join order.
pub fn run_profile(trace: &RunTrace) -> Vec<ProfilePoint> {
    use std::collections::HashMap;
    let mut ordinals: HashMap<&str, u32> = HashMap::new();
    let mut points = Vec::new();
    for e in &trace.events {
        match e.kind {
            EventKind::WorkerJoin => {
                let next = ordinals.len() as u32;
                ordinals
                    .entry(e.worker.as_deref().unwrap_or(""))
                    .or_insert(next);
            }
            EventKind::TaskDone => {
                let w = e.worker.as_deref().unwrap_or("");
                points.push(ProfilePoint {
                    t_s: e.t,
                    worker: ordinals.get(w).copied().unwrap_or(u32::MAX),
                    task: e.task.clone().unwrap_or_default(),
                });
            }
            _ => {}
        }
    }
    points
}

/// A summary row for the work-conservation validator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub t_total_s: f64,
    pub t_busy_s: f64,
    pub slots: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsCheck {
    pub t_total_s: f64,
    pub lower_bound_s: f64,
    pub pass: bool,
}

/// Work conservation: a campaign of `t_busy` integrated busy time on `slots`
/// slots cannot finish faster than `t_busy / slots`.
pub fn check_bounds(rows: &[BoundsRow]) -> Vec<BoundsCheck> {
    rows.iter()
        .map(|r| {
            let lb = r.t_busy_s / r.slots.max(1) as f64;
            BoundsCheck {
                t_total_s: r.t_total_s,
                lower_bound_s: lb,
                pass: r.t_total_s >= lb,
            }
        })
        .collect()
}

pub fn write_series_csv<W: Write>(mut w: W, series: &SampledSeries) -> Result<(), CoreError> {
    writeln!(w, "t_s,pool,busy")?;
    for s in &series.samples {
        writeln!(w, "{},{},{}", s.t_s, s.pool, s.busy)?;
    }
    Ok(())
}

pub fn write_profile_csv<W: Write>(mut w: W, points: &[ProfilePoint]) -> Result<(), CoreError> {
    writeln!(w, "t_s,worker,task")?;
    for p in points {
        writeln!(w, "{},{},{}", p.t_s, p.worker, p.task)?;
    }
    Ok(())
}
