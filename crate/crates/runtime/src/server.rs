//! The live master: a TCP server wrapping the core scheduling state
//! machine.
//!
//! All mutations flow through one command channel into a single state
//! thread, so commands are strictly serialized whatever the connection
//! concurrency. Connection threads only parse frames and ferry replies.

use std::io::Write as IoWrite;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use pullherd_core::master::{AssignOutcome, MasterConfig, MasterError, MasterState, Snapshot};
use pullherd_core::model::Task;
use pullherd_core::trace::RunSummary;
use pullherd_proto::{encode_frame, Envelope, FrameDecoder, Message, TaskStatus, PROTOCOL_VERSION};
use pullherd_telemetry::{MonParam, Sensor};

use crate::RuntimeError;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    /// Optional read-only metrics endpoint: connecting yields one snapshot
    /// JSON document and the connection closes.
    pub metrics: Option<SocketAddr>,
    pub master: MasterConfig,
    /// Trace events are appended here as JSON Lines while the campaign runs.
    pub trace_path: Option<PathBuf>,
    /// Telemetry collector address; emits a snapshot datagram per heartbeat
    /// interval when set.
    pub telemetry: Option<SocketAddr>,
    pub telemetry_cluster: String,
    pub telemetry_node: String,
}

impl ServerConfig {
    pub fn local(master: MasterConfig) -> Self {
        ServerConfig {
            listen: "127.0.0.1:0".parse().expect("static addr"),
            metrics: None,
            master,
            trace_path: None,
            telemetry: None,
            telemetry_cluster: "pullherd".into(),
            telemetry_node: "master".into(),
        }
    }
}

/// What a finished campaign leaves behind.
pub struct CampaignResult {
    pub summary: RunSummary,
    /// Final task records, terminal states and timestamps included.
    pub tasks: Vec<Task>,
}

enum Command {
    Wire {
        env: Envelope,
        bound: Option<String>,
        reply: mpsc::Sender<Reply>,
    },
    Snapshot {
        reply: mpsc::Sender<Snapshot>,
    },
    Drain,
}

struct Reply {
    msg: Message,
    /// Worker id to bind to the connection after this reply.
    bind: Option<String>,
    /// Connection should close after sending the reply.
    close: bool,
}

#[derive(Clone)]
pub struct DrainHandle(mpsc::Sender<Command>);

impl DrainHandle {
    pub fn request_drain(&self) {
        let _ = self.0.send(Command::Drain);
    }
}

pub struct MasterServer {
    pub addr: SocketAddr,
    pub metrics_addr: Option<SocketAddr>,
    commands: mpsc::Sender<Command>,
    stop_accepting: Arc<AtomicBool>,
    state_thread: JoinHandle<Result<CampaignResult, RuntimeError>>,
    accept_thread: JoinHandle<()>,
    metrics_thread: Option<JoinHandle<()>>,
}

impl MasterServer {
    /// Binds the endpoints and starts serving the campaign over `tasks`.
    pub fn start(cfg: ServerConfig, tasks: Vec<Task>) -> Result<MasterServer, RuntimeError> {
        let state = MasterState::new(cfg.master.clone(), tasks)?;
        let listener = TcpListener::bind(cfg.listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let metrics_listener = match cfg.metrics {
            Some(m) => {
                let l = TcpListener::bind(m)?;
                l.set_nonblocking(true)?;
                Some(l)
            }
            None => None,
        };
        let metrics_addr = metrics_listener
            .as_ref()
            .map(|l| l.local_addr())
            .transpose()?;

        let (tx, rx) = mpsc::channel::<Command>();
        let stop_accepting = Arc::new(AtomicBool::new(false));

        let state_thread = {
            let cfg = cfg.clone();
            let stop = stop_accepting.clone();
            std::thread::Builder::new()
                .name("master-state".into())
                .spawn(move || state_loop(state, cfg, rx, stop))?
        };

        let accept_thread = {
            let tx = tx.clone();
            let stop = stop_accepting.clone();
            std::thread::Builder::new()
                .name("master-accept".into())
                .spawn(move || accept_loop(listener, tx, stop))?
        };

        let metrics_thread = match metrics_listener {
            Some(l) => {
                let tx = tx.clone();
                let stop = stop_accepting.clone();
                Some(
                    std::thread::Builder::new()
                        .name("master-metrics".into())
                        .spawn(move || metrics_loop(l, tx, stop))?,
                )
            }
            None => None,
        };

        Ok(MasterServer {
            addr,
            metrics_addr,
            commands: tx,
            stop_accepting,
            state_thread,
            accept_thread,
            metrics_thread,
        })
    }

    /// Stops handing out tasks; the campaign winds down as workers drain.
    pub fn request_drain(&self) {
        let _ = self.commands.send(Command::Drain);
    }

    /// A detachable handle that can trigger a drain after the server has
    /// been moved into [`MasterServer::wait`].
    pub fn drain_handle(&self) -> DrainHandle {
        DrainHandle(self.commands.clone())
    }

    pub fn snapshot(&self) -> Option<Snapshot> {
        let (tx, rx) = mpsc::channel();
        self.commands.send(Command::Snapshot { reply: tx }).ok()?;
        rx.recv_timeout(Duration::from_secs(5)).ok()
    }

    /// Blocks until the campaign completes and every worker drained or was
    /// declared lost; returns the summary and final task records.
    pub fn wait(self) -> Result<CampaignResult, RuntimeError> {
        let result = self
            .state_thread
            .join()
            .map_err(|_| RuntimeError::Internal("master state thread panicked".into()))?;
        self.stop_accepting.store(true, Ordering::Relaxed);
        let _ = self.accept_thread.join();
        if let Some(t) = self.metrics_thread {
            let _ = t.join();
        }
        result
    }
}

fn accept_loop(listener: TcpListener, tx: mpsc::Sender<Command>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let tx = tx.clone();
                let _ = std::thread::Builder::new()
                    .name("master-conn".into())
                    .spawn(move || connection_loop(stream, tx));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(25));
            }
            Err(_) => break,
        }
    }
}

fn metrics_loop(listener: TcpListener, tx: mpsc::Sender<Command>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((mut stream, _)) => {
                let (reply_tx, reply_rx) = mpsc::channel();
                if tx.send(Command::Snapshot { reply: reply_tx }).is_err() {
                    break;
                }
                if let Ok(snap) = reply_rx.recv_timeout(Duration::from_secs(5)) {
                    if let Ok(json) = serde_json::to_string(&snap) {
                        let _ = stream.write_all(json.as_bytes());
                        let _ = stream.write_all(b"\n");
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(25));
            }
            Err(_) => break,
        }
    }
}

fn connection_loop(mut stream: TcpStream, tx: mpsc::Sender<Command>) {
    use std::io::Read;
    let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
    let _ = stream.set_nodelay(true);
    let mut decoder = FrameDecoder::new();
    let mut bound: Option<String> = None;
    let mut buf = [0u8; 16 * 1024];
    loop {
        match stream.read(&mut buf) {
            Ok(0) => return,
            Ok(n) => decoder.feed(&buf[..n]),
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut => {}
            Err(_) => return,
        }
        loop {
            let env = match decoder.try_next() {
                Ok(Some(env)) => env,
                Ok(None) => break,
                // protocol error: the stream is unrecoverable
                Err(_) => return,
            };
            let (reply_tx, reply_rx) = mpsc::channel();
            if tx
                .send(Command::Wire {
                    env,
                    bound: bound.clone(),
                    reply: reply_tx,
                })
                .is_err()
            {
                return; // master gone
            }
            let reply = match reply_rx.recv_timeout(Duration::from_secs(30)) {
                Ok(r) => r,
                Err(_) => return,
            };
            if let Some(id) = reply.bind {
                bound = Some(id);
            }
            let frame = match encode_frame(&reply.msg) {
                Ok(f) => f,
                Err(_) => return,
            };
            if stream.write_all(&frame).is_err() {
                return;
            }
            if reply.close {
                return;
            }
        }
    }
}

fn state_loop(
    mut state: MasterState,
    cfg: ServerConfig,
    rx: mpsc::Receiver<Command>,
    stop_accepting: Arc<AtomicBool>,
) -> Result<CampaignResult, RuntimeError> {
    let started = Instant::now();
    let now_s = move || started.elapsed().as_secs_f64();
    let mut trace_file = match &cfg.trace_path {
        Some(p) => {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
            Some(std::io::BufWriter::new(std::fs::File::create(p)?))
        }
        None => None,
    };
    let mut sensor = cfg
        .telemetry
        .map(|dest| Sensor::new(dest, &cfg.telemetry_cluster, &cfg.telemetry_node));

    let scan_every =
        Duration::from_secs_f64((cfg.master.heartbeat_interval_s / 2.0).clamp(0.05, 5.0));
    let emit_every = Duration::from_secs_f64(cfg.master.heartbeat_interval_s.clamp(0.2, 60.0));
    let mut last_scan = Instant::now();
    let mut last_emit = Instant::now();

    loop {
        match rx.recv_timeout(scan_every) {
            Ok(Command::Wire { env, bound, reply }) => {
                let out = handle_message(&mut state, now_s(), env, bound);
                let _ = reply.send(out);
            }
            Ok(Command::Snapshot { reply }) => {
                let _ = reply.send(state.snapshot(now_s()));
            }
            Ok(Command::Drain) => state.request_drain(),
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }

        if last_scan.elapsed() >= scan_every {
            state.detect_lost(now_s());
            last_scan = Instant::now();
        }
        if let Some(sensor) = sensor.as_mut() {
            if last_emit.elapsed() >= emit_every {
                let snap = state.snapshot(now_s());
                sensor.emit(snapshot_params(&snap));
                last_emit = Instant::now();
            }
        }
        if let Some(f) = trace_file.as_mut() {
            for e in state.drain_events() {
                serde_json::to_writer(&mut *f, e)?;
                f.write_all(b"\n")?;
            }
            f.flush()?;
        }
        // complete or manually draining, with no active workers left
        if state.all_drained() {
            break;
        }
    }

    stop_accepting.store(true, Ordering::Relaxed);
    if let Some(f) = trace_file.as_mut() {
        for e in state.drain_events() {
            serde_json::to_writer(&mut *f, e)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }
    if let Some(sensor) = sensor.as_mut() {
        let snap = state.snapshot(now_s());
        sensor.emit(snapshot_params(&snap));
    }
    Ok(CampaignResult {
        summary: state.summary(),
        tasks: state.tasks().cloned().collect(),
    })
}

/// The master's monitoring parameters: `pool` and `busy` count slots, so a
/// farm of 84 two-slot workers at half load reads pool=168, busy=84.
pub fn snapshot_params(snap: &Snapshot) -> Vec<MonParam> {
    vec![
        MonParam::int("pool", snap.pool_slots as i64),
        MonParam::int("busy", snap.in_flight as i64),
        MonParam::int("workers", snap.pool_active as i64),
        MonParam::int("pending", snap.pending as i64),
        MonParam::int("done", snap.done as i64),
        MonParam::int("failed", snap.failed as i64),
        MonParam::real("busy_time_s", snap.summary.t_worker_s),
    ]
}

fn handle_message(
    state: &mut MasterState,
    now: f64,
    env: Envelope,
    bound: Option<String>,
) -> Reply {
    let reply = |msg: Message| Reply {
        msg,
        bind: None,
        close: false,
    };
    if env.v != PROTOCOL_VERSION {
        return Reply {
            msg: Message::Registered {
                worker_id: None,
                error: Some(format!(
                    "protocol version {} unsupported, speak {}",
                    env.v, PROTOCOL_VERSION
                )),
            },
            bind: None,
            close: true,
        };
    }
    match env.msg {
        Message::Register { slots, speed_hint } => {
            // duplicate REGISTER on a live connection returns the same id
            if let Some(existing) = bound {
                return reply(Message::Registered {
                    worker_id: Some(existing),
                    error: None,
                });
            }
            let id = state.register(now, slots, speed_hint);
            Reply {
                msg: Message::Registered {
                    worker_id: Some(id.clone()),
                    error: None,
                },
                bind: Some(id),
                close: false,
            }
        }
        Message::Request { worker_id } => match state.next_task(now, &worker_id) {
            Ok(AssignOutcome::Assign(a)) => reply(Message::Assign {
                task_id: a.task_id,
                calc_ids: a.calc_ids,
                payload_ref: a.payload_ref,
                cost_s: a.cost_s,
            }),
            Ok(AssignOutcome::NoWork { retry_after_s }) => reply(Message::NoWork { retry_after_s }),
            Ok(AssignOutcome::Drain) => reply(Message::Drain),
            Err(MasterError::AtCapacity(_)) => reply(Message::NoWork { retry_after_s: 1.0 }),
            // stale binding: tell it to back off and drop the connection so
            // the agent reconnects and re-registers
            Err(MasterError::UnknownWorker(_)) => Reply {
                msg: Message::NoWork { retry_after_s: 1.0 },
                bind: None,
                close: true,
            },
        },
        Message::TaskResult {
            worker_id,
            task_id,
            status,
            elapsed_s,
            error: _,
        } => {
            let ack = state.record_result(
                now,
                &worker_id,
                &task_id,
                status == TaskStatus::Ok,
                elapsed_s,
            );
            reply(Message::Ack {
                warning: ack.warning,
            })
        }
        Message::Heartbeat {
            worker_id,
            busy_task_ids,
        } => {
            let ack = state.heartbeat(now, &worker_id, &busy_task_ids);
            reply(Message::Ack {
                warning: ack.warning,
            })
        }
        Message::Shutdown => {
            state.request_drain();
            reply(Message::Ack { warning: None })
        }
        // master-to-worker kinds arriving inbound are tolerated but pointless
        other => reply(Message::Ack {
            warning: Some(format!("unexpected message kind {other:?}")),
        }),
    }
}
