//! The pull-model worker agent: registers, heartbeats, pulls tasks up to
//! its slot count, runs them through an executor and reports results.
//!
//! One control loop owns the connection; up to `slots` executor threads
//! report completions back over a channel. Executions never share task
//! state.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use pullherd_proto::{encode_frame, FrameDecoder, Message, TaskStatus};
use pullherd_telemetry::{MonParam, Sensor};
use serde::Serialize;

use crate::executor::{execute, ExecInput, ExecOutcome, ExecutorSpec};
use crate::RuntimeError;

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub master_addr: String,
    pub slots: u32,
    pub heartbeat_interval_s: f64,
    pub backoff_initial_s: f64,
    pub backoff_max_s: f64,
    /// Reconnect budget before giving up on the master.
    pub connect_attempts: u32,
    pub task_timeout_s: Option<f64>,
    /// JSON Lines log of completed executions.
    pub log_path: Option<PathBuf>,
    /// Scratch space for calc-id files; a per-process temp dir by default.
    pub work_dir: Option<PathBuf>,
    pub telemetry: Option<std::net::SocketAddr>,
    pub telemetry_cluster: String,
    pub telemetry_node: Option<String>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            master_addr: "127.0.0.1:7070".into(),
            slots: 2,
            heartbeat_interval_s: 10.0,
            backoff_initial_s: 1.0,
            backoff_max_s: 30.0,
            connect_attempts: 5,
            task_timeout_s: None,
            log_path: None,
            work_dir: None,
            telemetry: None,
            telemetry_cluster: "pullherd".into(),
            telemetry_node: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitReport {
    pub worker_id: String,
    pub tasks_ok: u64,
    pub tasks_error: u64,
    /// True when the agent left because the master drained it.
    pub drained: bool,
}

#[derive(Serialize)]
struct LogLine<'a> {
    task_id: &'a str,
    started_s: f64,
    finished_s: f64,
    status: &'a str,
}

struct Conn {
    stream: TcpStream,
    decoder: FrameDecoder,
}

impl Conn {
    fn connect(cfg: &AgentConfig) -> Result<Conn, RuntimeError> {
        let mut wait = Duration::from_millis(250);
        let mut last_err: Option<std::io::Error> = None;
        for _ in 0..cfg.connect_attempts.max(1) {
            match TcpStream::connect(&cfg.master_addr) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(Duration::from_millis(100)))?;
                    stream.set_nodelay(true)?;
                    return Ok(Conn {
                        stream,
                        decoder: FrameDecoder::new(),
                    });
                }
                Err(e) => {
                    last_err = Some(e);
                    std::thread::sleep(wait);
                    wait = (wait * 2).min(Duration::from_secs(5));
                }
            }
        }
        Err(RuntimeError::MasterUnreachable(
            cfg.master_addr.clone(),
            last_err.map(|e| e.to_string()).unwrap_or_default(),
        ))
    }

    /// One synchronous request/response exchange.
    fn call(&mut self, msg: &Message) -> Result<Message, RuntimeError> {
        let frame = encode_frame(msg).map_err(|e| RuntimeError::Internal(e.to_string()))?;
        self.stream.write_all(&frame)?;
        let deadline = Instant::now() + Duration::from_secs(30);
        let mut buf = [0u8; 8 * 1024];
        loop {
            if let Some(env) = self
                .decoder
                .try_next()
                .map_err(|e| RuntimeError::Internal(e.to_string()))?
            {
                return Ok(env.msg);
            }
            if Instant::now() > deadline {
                return Err(RuntimeError::Internal("master response timed out".into()));
            }
            match self.stream.read(&mut buf) {
                Ok(0) => return Err(RuntimeError::ConnectionClosed),
                Ok(n) => self.decoder.feed(&buf[..n]),
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

struct Completion {
    task_id: String,
    outcome: ExecOutcome,
    started_s: f64,
    finished_s: f64,
}

fn register(conn: &mut Conn, cfg: &AgentConfig) -> Result<String, RuntimeError> {
    match conn.call(&Message::Register {
        slots: cfg.slots,
        speed_hint: None,
    })? {
        Message::Registered {
            worker_id: Some(id),
            error: None,
        } => Ok(id),
        Message::Registered { error: Some(e), .. } => Err(RuntimeError::Rejected(e)),
        other => Err(RuntimeError::Internal(format!(
            "unexpected registration reply {other:?}"
        ))),
    }
}

/// Runs the agent until the master drains it. Fills free slots eagerly,
/// backs off exponentially on NOWORK, reconnects (and re-registers) on
/// connection loss within the retry budget.
pub fn run_agent(cfg: AgentConfig, exec: ExecutorSpec) -> Result<ExitReport, RuntimeError> {
    exec.validate().map_err(RuntimeError::Internal)?;
    let started = Instant::now();
    let now_s = move || started.elapsed().as_secs_f64();

    let owns_work_dir = cfg.work_dir.is_none();
    let work_dir = cfg.work_dir.clone().unwrap_or_else(|| {
        std::env::temp_dir().join(format!("pullherd-agent-{}", std::process::id()))
    });
    std::fs::create_dir_all(&work_dir)?;
    let mut log_file = match &cfg.log_path {
        Some(p) => {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
            Some(std::io::BufWriter::new(std::fs::File::create(p)?))
        }
        None => None,
    };

    let mut conn = Conn::connect(&cfg)?;
    let mut worker_id = register(&mut conn, &cfg)?;
    log::info!("registered as {worker_id} against {}", cfg.master_addr);

    let mut sensor = cfg.telemetry.map(|dest| {
        let node = cfg
            .telemetry_node
            .clone()
            .unwrap_or_else(|| worker_id.clone());
        Sensor::new(dest, &cfg.telemetry_cluster, &node)
    });

    let (done_tx, done_rx) = mpsc::channel::<Completion>();
    let mut in_flight: HashMap<String, std::thread::JoinHandle<()>> = HashMap::new();
    let mut draining = false;
    let mut backoff = Duration::from_secs_f64(cfg.backoff_initial_s.max(0.01));
    let mut backoff_until: Option<Instant> = None;
    let heartbeat_every = Duration::from_secs_f64(cfg.heartbeat_interval_s.max(0.05));
    let mut next_heartbeat = Instant::now() + heartbeat_every;
    let (mut tasks_ok, mut tasks_error) = (0u64, 0u64);

    // reconnect, re-register, and carry on; stale in-flight results are the
    // master's to discard
    macro_rules! call_or_reconnect {
        ($msg:expr) => {{
            match conn.call($msg) {
                Ok(m) => m,
                Err(RuntimeError::ConnectionClosed) | Err(RuntimeError::Io(_)) => {
                    log::warn!("connection to master lost; reconnecting");
                    conn = Conn::connect(&cfg)?;
                    worker_id = register(&mut conn, &cfg)?;
                    continue;
                }
                Err(e) => return Err(e),
            }
        }};
    }

    loop {
        if draining && in_flight.is_empty() {
            break;
        }

        // heartbeat first so a full agent still proves liveness
        if Instant::now() >= next_heartbeat {
            let busy: Vec<String> = in_flight.keys().cloned().collect();
            let _ = call_or_reconnect!(&Message::Heartbeat {
                worker_id: worker_id.clone(),
                busy_task_ids: busy
            });
            next_heartbeat = Instant::now() + heartbeat_every;
            continue;
        }

        let may_request = !draining
            && in_flight.len() < cfg.slots as usize
            && backoff_until.map(|t| Instant::now() >= t).unwrap_or(true);
        if may_request {
            let response = call_or_reconnect!(&Message::Request {
                worker_id: worker_id.clone()
            });
            match response {
                Message::Assign {
                    task_id,
                    calc_ids,
                    payload_ref,
                    cost_s,
                } => {
                    backoff = Duration::from_secs_f64(cfg.backoff_initial_s.max(0.01));
                    backoff_until = None;
                    if let Some(s) = sensor.as_mut() {
                        s.emit(vec![
                            MonParam::text("task_started", &task_id),
                            MonParam::int("busy_slots", in_flight.len() as i64 + 1),
                        ]);
                    }
                    let tx = done_tx.clone();
                    let exec = exec.clone();
                    let timeout_s = cfg.task_timeout_s;
                    let dir = work_dir.clone();
                    let id = task_id.clone();
                    let t0 = now_s();
                    let handle = std::thread::Builder::new()
                        .name(format!("exec-{id}"))
                        .spawn(move || {
                            let input = ExecInput {
                                task_id: &id,
                                calc_ids: &calc_ids,
                                payload_ref: &payload_ref,
                                cost_s,
                                timeout_s,
                                work_dir: &dir,
                            };
                            let outcome = execute(&input, &exec);
                            let _ = tx.send(Completion {
                                task_id: id,
                                started_s: t0,
                                finished_s: t0 + outcome.elapsed_s,
                                outcome,
                            });
                        })?;
                    in_flight.insert(task_id, handle);
                    continue;
                }
                Message::NoWork { retry_after_s } => {
                    let wait = backoff.max(Duration::from_secs_f64(retry_after_s.max(0.0)));
                    backoff_until = Some(Instant::now() + wait);
                    backoff = (backoff * 2).min(Duration::from_secs_f64(cfg.backoff_max_s));
                }
                Message::Drain => {
                    draining = true;
                    continue;
                }
                other => log::warn!("unexpected response to REQUEST: {other:?}"),
            }
        }

        // wait for a completion or the next deadline
        let mut next_deadline = next_heartbeat;
        if let Some(b) = backoff_until {
            next_deadline = next_deadline.min(b);
        }
        let wait = next_deadline
            .saturating_duration_since(Instant::now())
            .min(Duration::from_millis(200));
        match done_rx.recv_timeout(wait.max(Duration::from_millis(1))) {
            Ok(done) => {
                if let Some(handle) = in_flight.remove(&done.task_id) {
                    let _ = handle.join();
                }
                let status = if done.outcome.ok {
                    TaskStatus::Ok
                } else {
                    TaskStatus::Error
                };
                if done.outcome.ok {
                    tasks_ok += 1;
                } else {
                    tasks_error += 1;
                }
                if let Some(f) = log_file.as_mut() {
                    let line = LogLine {
                        task_id: &done.task_id,
                        started_s: done.started_s,
                        finished_s: done.finished_s,
                        status: if done.outcome.ok { "OK" } else { "ERROR" },
                    };
                    serde_json::to_writer(&mut *f, &line)?;
                    f.write_all(b"\n")?;
                    f.flush()?;
                }
                if let Some(s) = sensor.as_mut() {
                    s.emit(vec![
                        MonParam::text("task_done", &done.task_id),
                        MonParam::real("elapsed_s", done.outcome.elapsed_s),
                        MonParam::int("busy_slots", in_flight.len() as i64),
                    ]);
                }
                let result = Message::TaskResult {
                    worker_id: worker_id.clone(),
                    task_id: done.task_id.clone(),
                    status,
                    elapsed_s: done.outcome.elapsed_s,
                    error: done.outcome.error.clone(),
                };
                let _ = call_or_reconnect!(&result);
                // a freed slot requests again right away
                backoff_until = None;
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(RuntimeError::Internal("executor channel closed".into()))
            }
        }
    }

    for (_, handle) in in_flight {
        let _ = handle.join();
    }
    if owns_work_dir {
        let _ = std::fs::remove_dir_all(&work_dir);
    }
    log::info!(
        "drained after {} ok / {} error tasks",
        tasks_ok,
        tasks_error
    );
    Ok(ExitReport {
        worker_id,
        tasks_ok,
        tasks_error,
        drained: true,
    })
}
