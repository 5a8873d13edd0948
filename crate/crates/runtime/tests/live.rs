//! End-to-end runtime tests: real master, real agents, loopback TCP.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use pullherd_core::master::MasterConfig;
use pullherd_core::model::{AnalysisType, OrderingPolicy, Task, TaskState};
use pullherd_core::trace::EventKind;
use pullherd_proto::{encode_envelope, encode_frame, Envelope, FrameDecoder, Message, TaskStatus};
use pullherd_runtime::{run_agent, AgentConfig, ExecutorSpec, MasterServer, ServerConfig};

fn mk_tasks(costs: &[f64]) -> Vec<Task> {
    costs
        .iter()
        .enumerate()
        .map(|(i, &c)| Task {
            task_id: format!("t-{i:04}"),
            analysis_type: AnalysisType::D2dUhf,
            calc_ids: vec![format!("c-{i:04}-a"), format!("c-{i:04}-b")],
            total_cost: c,
            payload_ref: format!("task:t-{i:04}"),
            state: TaskState::Pending,
            attempts: 0,
            assigned_worker: None,
            timestamps: Default::default(),
        })
        .collect()
}

fn fast_master() -> MasterConfig {
    MasterConfig {
        heartbeat_interval_s: 0.2,
        lost_timeout_s: 0.5,
        retry_cap: 3,
        ordering: OrderingPolicy::Natural,
        ordering_seed: 0,
        target_pool: 0,
        nowork_retry_s: 0.05,
    }
}

fn agent_cfg(addr: std::net::SocketAddr) -> AgentConfig {
    AgentConfig {
        master_addr: addr.to_string(),
        slots: 2,
        heartbeat_interval_s: 0.1,
        backoff_initial_s: 0.02,
        backoff_max_s: 0.2,
        connect_attempts: 3,
        ..AgentConfig::default()
    }
}

/// A hand-driven worker connection for protocol-level scripts.
struct RawWorker {
    stream: TcpStream,
    decoder: FrameDecoder,
    id: String,
}

impl RawWorker {
    fn connect(addr: std::net::SocketAddr, slots: u32) -> RawWorker {
        let stream = TcpStream::connect(addr).unwrap();
        stream
            .set_read_timeout(Some(Duration::from_millis(50)))
            .unwrap();
        let mut w = RawWorker {
            stream,
            decoder: FrameDecoder::new(),
            id: String::new(),
        };
        match w.call(&Message::Register {
            slots,
            speed_hint: None,
        }) {
            Message::Registered {
                worker_id: Some(id),
                ..
            } => w.id = id,
            other => panic!("registration failed: {other:?}"),
        }
        w
    }

    fn call(&mut self, msg: &Message) -> Message {
        self.stream.write_all(&encode_frame(msg).unwrap()).unwrap();
        self.read_reply()
    }

    fn read_reply(&mut self) -> Message {
        let deadline = std::time::Instant::now() + Duration::from_secs(5);
        let mut buf = [0u8; 4096];
        loop {
            if let Some(env) = self.decoder.try_next().unwrap() {
                return env.msg;
            }
            assert!(std::time::Instant::now() < deadline, "no reply from master");
            match self.stream.read(&mut buf) {
                Ok(0) => panic!("master closed the connection"),
                Ok(n) => self.decoder.feed(&buf[..n]),
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut => {}
                Err(e) => panic!("read error: {e}"),
            }
        }
    }
}

#[test]
fn clean_campaign_conserves_every_calc() {
    let trace_dir = tempfile::tempdir().unwrap();
    let trace_path = trace_dir.path().join("trace.jsonl");
    let costs: Vec<f64> = (0..30).map(|i| 0.01 + (i % 4) as f64 * 0.01).collect();
    let mut cfg = ServerConfig::local(fast_master());
    cfg.trace_path = Some(trace_path.clone());
    let server = MasterServer::start(cfg, mk_tasks(&costs)).unwrap();
    let addr = server.addr;

    let agents: Vec<_> = (0..3)
        .map(|_| {
            let cfg = agent_cfg(addr);
            std::thread::spawn(move || run_agent(cfg, ExecutorSpec::Simulated { speed: 1.0 }))
        })
        .collect();

    let result = server.wait().unwrap();
    let reports: Vec<_> = agents
        .into_iter()
        .map(|a| a.join().unwrap().unwrap())
        .collect();

    assert_eq!(result.summary.r_fail, 0.0);
    assert_eq!(result.summary.n_task, 30);
    assert_eq!(result.summary.n_calc, 60);
    assert_eq!(result.summary.n_worker, 3);
    let total_ok: u64 = reports.iter().map(|r| r.tasks_ok).sum();
    assert_eq!(total_ok, 30);
    assert!(reports.iter().all(|r| r.drained));

    // every calc id in exactly one DONE task
    let mut seen = HashSet::new();
    for t in &result.tasks {
        assert_eq!(t.state, TaskState::Done);
        for c in &t.calc_ids {
            assert!(seen.insert(c.clone()), "calc {c} recorded twice");
        }
    }
    assert_eq!(seen.len(), 60);

    // persisted trace is valid and replays to the same counters
    let trace = pullherd_core::trace::read_trace_file(&trace_path).unwrap();
    let replay = trace.summary();
    assert_eq!(replay.n_task, 30);
    assert_eq!(replay.n_calc, 60);
    assert_eq!(replay.r_fail, 0.0);
}

#[test]
fn drain_before_any_assignment_exits_clean() {
    // generous lost timeout: the scripted holder heartbeats rarely
    let cfg = MasterConfig {
        heartbeat_interval_s: 0.5,
        lost_timeout_s: 10.0,
        ..fast_master()
    };
    let server = MasterServer::start(ServerConfig::local(cfg), mk_tasks(&[5.0])).unwrap();
    let addr = server.addr;

    // the only task is already held elsewhere, so the agent polls empty
    let mut holder = RawWorker::connect(addr, 1);
    let assign = holder.call(&Message::Request {
        worker_id: holder.id.clone(),
    });
    let task_id = match assign {
        Message::Assign { task_id, .. } => task_id,
        other => panic!("expected assign, got {other:?}"),
    };

    let agent = {
        let cfg = agent_cfg(addr);
        std::thread::spawn(move || run_agent(cfg, ExecutorSpec::Simulated { speed: 1.0 }))
    };
    std::thread::sleep(Duration::from_millis(300));
    server.request_drain();
    let report = agent.join().unwrap().unwrap();
    assert!(report.drained);
    assert_eq!(
        report.tasks_ok + report.tasks_error,
        0,
        "agent never ran a task"
    );

    // the holder finishes up and drains too; heartbeat keeps it alive
    holder.call(&Message::Heartbeat {
        worker_id: holder.id.clone(),
        busy_task_ids: vec![task_id.clone()],
    });
    holder.call(&Message::TaskResult {
        worker_id: holder.id.clone(),
        task_id,
        status: TaskStatus::Ok,
        elapsed_s: 0.1,
        error: None,
    });
    assert!(matches!(
        holder.call(&Message::Request {
            worker_id: holder.id.clone()
        }),
        Message::Drain
    ));
    let result = server.wait().unwrap();
    assert_eq!(result.summary.r_fail, 0.0);
}

#[test]
fn two_slot_agent_runs_five_tasks_at_most_two_concurrent() {
    let costs = vec![0.05; 5];
    let mut cfg = ServerConfig::local(fast_master());
    let trace_dir = tempfile::tempdir().unwrap();
    let trace_path = trace_dir.path().join("trace.jsonl");
    cfg.trace_path = Some(trace_path.clone());
    let server = MasterServer::start(cfg, mk_tasks(&costs)).unwrap();
    let addr = server.addr;
    let report = run_agent(agent_cfg(addr), ExecutorSpec::Simulated { speed: 1.0 }).unwrap();
    assert_eq!(report.tasks_ok, 5);
    server.wait().unwrap();

    let trace = pullherd_core::trace::read_trace_file(&trace_path).unwrap();
    let mut open = 0i64;
    let mut max_open = 0i64;
    for e in &trace.events {
        match e.kind {
            EventKind::TaskAssign => {
                open += 1;
                max_open = max_open.max(open);
            }
            EventKind::TaskDone | EventKind::TaskFail | EventKind::TaskRequeue => open -= 1,
            _ => {}
        }
    }
    assert!(max_open <= 2, "agent exceeded its slot cap: {max_open}");
}

#[test]
fn lost_worker_race_keeps_first_result_and_conservation() {
    let server = MasterServer::start(ServerConfig::local(fast_master()), mk_tasks(&[1.0])).unwrap();
    let addr = server.addr;

    // worker A takes the only task and goes silent
    let mut a = RawWorker::connect(addr, 1);
    let assign = a.call(&Message::Request {
        worker_id: a.id.clone(),
    });
    let task_id = match assign {
        Message::Assign { task_id, .. } => task_id,
        other => panic!("expected assign, got {other:?}"),
    };

    // master declares A lost after ~0.5s and requeues
    std::thread::sleep(Duration::from_millis(900));

    // worker B picks the task up and completes it
    let mut b = RawWorker::connect(addr, 1);
    let reassign = b.call(&Message::Request {
        worker_id: b.id.clone(),
    });
    match &reassign {
        Message::Assign { task_id: t, .. } => assert_eq!(t, &task_id, "requeued task reassigned"),
        other => panic!("expected reassign, got {other:?}"),
    }
    let ack = b.call(&Message::TaskResult {
        worker_id: b.id.clone(),
        task_id: task_id.clone(),
        status: TaskStatus::Ok,
        elapsed_s: 1.0,
        error: None,
    });
    assert!(matches!(ack, Message::Ack { .. }));

    // A's stale result straggles in and is discarded
    let late = a.call(&Message::TaskResult {
        worker_id: a.id.clone(),
        task_id: task_id.clone(),
        status: TaskStatus::Ok,
        elapsed_s: 99.0,
        error: None,
    });
    assert!(matches!(late, Message::Ack { .. }));

    // duplicate from B changes nothing either
    let snap_before = server.snapshot().unwrap();
    let dup = b.call(&Message::TaskResult {
        worker_id: b.id.clone(),
        task_id,
        status: TaskStatus::Ok,
        elapsed_s: 1.0,
        error: None,
    });
    assert!(matches!(dup, Message::Ack { .. }));
    let snap_after = server.snapshot().unwrap();
    assert_eq!(snap_before.done, snap_after.done);
    assert_eq!(snap_before.calcs_done, snap_after.calcs_done);
    assert_eq!(snap_before.failed, snap_after.failed);

    // B drains; campaign ends with the single result recorded once
    assert!(matches!(
        b.call(&Message::Request {
            worker_id: b.id.clone()
        }),
        Message::Drain
    ));
    let result = server.wait().unwrap();
    assert_eq!(result.summary.r_fail, 0.0);
    assert_eq!(result.summary.n_worker, 2);
    let done: Vec<_> = result
        .tasks
        .iter()
        .filter(|t| t.state == TaskState::Done)
        .collect();
    assert_eq!(done.len(), 1);
    assert_eq!(done[0].assigned_worker.as_deref(), Some(b.id.as_str()));
}

#[test]
fn version_mismatch_rejected_at_registration() {
    let server = MasterServer::start(ServerConfig::local(fast_master()), mk_tasks(&[1.0])).unwrap();
    let addr = server.addr;
    let mut stream = TcpStream::connect(addr).unwrap();
    stream
        .set_read_timeout(Some(Duration::from_millis(50)))
        .unwrap();
    let env = Envelope {
        v: 99,
        msg: Message::Register {
            slots: 1,
            speed_hint: None,
        },
    };
    stream.write_all(&encode_envelope(&env).unwrap()).unwrap();

    let mut decoder = FrameDecoder::new();
    let mut buf = [0u8; 1024];
    let deadline = std::time::Instant::now() + Duration::from_secs(5);
    let reply = loop {
        if let Some(env) = decoder.try_next().unwrap() {
            break env.msg;
        }
        assert!(std::time::Instant::now() < deadline);
        match stream.read(&mut buf) {
            Ok(0) => panic!("closed before replying"),
            Ok(n) => decoder.feed(&buf[..n]),
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut => {}
            Err(e) => panic!("{e}"),
        }
    };
    match reply {
        Message::Registered { worker_id, error } => {
            assert!(worker_id.is_none());
            assert!(error.unwrap().contains("version"));
        }
        other => panic!("expected rejection, got {other:?}"),
    }
    // connection closes after the rejection
    let deadline = std::time::Instant::now() + Duration::from_secs(5);
    loop {
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                assert!(
                    std::time::Instant::now() < deadline,
                    "connection not closed"
                );
            }
            Err(_) => break,
        }
    }
    server.request_drain();
    server.wait().unwrap();
}

#[test]
fn metrics_endpoint_serves_one_snapshot_document() {
    let mut cfg = ServerConfig::local(fast_master());
    cfg.metrics = Some("127.0.0.1:0".parse().unwrap());
    let server = MasterServer::start(cfg, mk_tasks(&[0.05, 0.05])).unwrap();
    let metrics = server.metrics_addr.unwrap();
    let addr = server.addr;

    let mut stream = TcpStream::connect(metrics).unwrap();
    let mut doc = String::new();
    stream.read_to_string(&mut doc).unwrap();
    let v: serde_json::Value = serde_json::from_str(doc.trim()).unwrap();
    assert_eq!(v["pending"], 2);
    assert_eq!(v["pool_active"], 0);

    let report = run_agent(agent_cfg(addr), ExecutorSpec::Simulated { speed: 1.0 }).unwrap();
    assert_eq!(report.tasks_ok, 2);
    let result = server.wait().unwrap();
    assert_eq!(result.summary.r_fail, 0.0);
}

#[test]
fn command_executor_errors_are_reported_and_retried_to_failure() {
    let cfg = ServerConfig::local(MasterConfig {
        retry_cap: 1,
        ..fast_master()
    });
    let server = MasterServer::start(cfg, mk_tasks(&[1.0])).unwrap();
    let addr = server.addr;
    let report = run_agent(
        agent_cfg(addr),
        ExecutorSpec::Command {
            template: "exit 3".into(),
        },
    )
    .unwrap();
    // retry_cap 1: two error deliveries exhaust the task
    assert_eq!(report.tasks_error, 2);
    let result = server.wait().unwrap();
    assert_eq!(result.summary.r_fail, 1.0);
    assert_eq!(result.tasks[0].state, TaskState::Failed);
    assert_eq!(result.tasks[0].attempts, 2);
}

/// Sensor parameters cross-checked against the snapshot: 84 tasks out on a
/// farm of 84 two-slot workers reads busy=84 of pool=168.
#[test]
fn sensor_params_report_slot_capacity() {
    use pullherd_core::master::MasterState;
    use pullherd_telemetry::MonValue;

    let mut m = MasterState::new(fast_master(), mk_tasks(&vec![10.0; 200])).unwrap();
    let ids: Vec<String> = (0..84).map(|_| m.register(0.0, 2, None)).collect();
    for id in &ids {
        m.next_task(1.0, id).unwrap();
    }
    let snap = m.snapshot(1.0);
    assert_eq!(snap.pool_slots, 168);
    assert_eq!(snap.in_flight, 84);
    let params = pullherd_runtime::server::snapshot_params(&snap);
    let get = |name: &str| {
        params
            .iter()
            .find(|p| p.name == name)
            .map(|p| match p.value {
                MonValue::Int32(v) => v,
                _ => panic!("expected int"),
            })
            .unwrap()
    };
    assert_eq!(get("busy"), 84);
    assert_eq!(get("pool"), 168);
}

/// A dead collector endpoint must not slow the campaign down: telemetry is
/// fire-and-forget.
#[test]
fn absent_collector_does_not_delay_scheduling() {
    let costs = vec![0.03; 40];
    let run = |telemetry: Option<std::net::SocketAddr>| {
        let mut cfg = ServerConfig::local(fast_master());
        cfg.telemetry = telemetry;
        let server = MasterServer::start(cfg, mk_tasks(&costs)).unwrap();
        let addr = server.addr;
        let started = std::time::Instant::now();
        let agent = {
            let cfg = agent_cfg(addr);
            std::thread::spawn(move || run_agent(cfg, ExecutorSpec::Simulated { speed: 1.0 }))
        };
        let result = server.wait().unwrap();
        agent.join().unwrap().unwrap();
        assert_eq!(result.summary.r_fail, 0.0);
        started.elapsed().as_secs_f64()
    };
    let without = run(None);
    // nothing listens on the discard port; sends just vanish
    let with_dead_collector = run(Some("127.0.0.1:9".parse().unwrap()));
    assert!(
        with_dead_collector < 3.0 * without + 2.0,
        "dead collector stalled the campaign: {with_dead_collector:.2}s vs {without:.2}s"
    );
}

/// Campaign counters match between the live summary and a cold replay of the
/// persisted trace (used by `analyze`).
#[test]
fn heartbeats_mark_tasks_running_in_trace() {
    let trace_dir = tempfile::tempdir().unwrap();
    let trace_path = trace_dir.path().join("trace.jsonl");
    let mut cfg = ServerConfig::local(fast_master());
    cfg.trace_path = Some(trace_path.clone());
    let server = MasterServer::start(cfg, mk_tasks(&[0.5])).unwrap();
    let addr = server.addr;
    let report = run_agent(agent_cfg(addr), ExecutorSpec::Simulated { speed: 1.0 }).unwrap();
    assert_eq!(report.tasks_ok, 1);
    server.wait().unwrap();
    let trace = pullherd_core::trace::read_trace_file(&trace_path).unwrap();
    let kinds: HashMap<EventKind, usize> = trace.events.iter().fold(HashMap::new(), |mut m, e| {
        *m.entry(e.kind).or_insert(0) += 1;
        m
    });
    // 0.5s of execution at 0.1s heartbeat: at least one heartbeat lands
    // while the task runs, so a TASK_START is recorded
    assert_eq!(kinds.get(&EventKind::TaskStart), Some(&1));
    assert_eq!(kinds.get(&EventKind::TaskDone), Some(&1));
}
