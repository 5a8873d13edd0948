//! `run-local`: spawn a master plus N local worker processes, block until
//! the campaign drains, and leave a complete run directory behind.

use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use clap::Args;
use rand::seq::index::sample;
use rand::SeedableRng;

use pullherd_core::clustering;
use pullherd_core::model::OrderingPolicy;
use pullherd_core::workload;
use pullherd_runtime::{MasterServer, ServerConfig};

use crate::util::{emit, interrupted, parse_duration_s, ConfigFile};
use crate::MasterTuning;

#[derive(Args)]
pub struct RunLocalArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    granularity: PathBuf,
    #[arg(long)]
    run_dir: PathBuf,
    /// Worker processes to spawn
    #[arg(long, default_value_t = 4)]
    workers: u32,
    /// Slots per worker
    #[arg(long, env = "PH_SLOTS", default_value_t = 2)]
    slots: u32,
    /// Simulated execution speed factor
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Run tasks through this shell template instead of simulating
    #[arg(long)]
    command: Option<String>,
    #[command(flatten)]
    tuning: MasterTuning,
    /// Fraction of workers to kill mid-run (fault-injection)
    #[arg(long, default_value_t = 0.0)]
    kill_fraction: f64,
    /// When to kill them, measured from campaign start
    #[arg(long, value_parser = parse_duration_s, default_value = "2")]
    kill_after: f64,
    #[arg(long, env = "PH_TELEMETRY")]
    telemetry: Option<std::net::SocketAddr>,
}

pub fn run(a: RunLocalArgs, json: bool, file_cfg: &ConfigFile) -> super::CmdResult {
    if !(0.0..=1.0).contains(&a.kill_fraction) {
        return Err("--kill-fraction must be in [0, 1]".into());
    }
    let calcs = workload::read_workload_file(&a.workload)?;
    let granularity = super::read_granularity(&a.granularity)?;
    let master_cfg = a.tuning.build(file_cfg)?;
    let seed = a.tuning.seed.or(file_cfg.seed).unwrap_or(0);
    let tasks = clustering::cluster(&calcs, &granularity, OrderingPolicy::Natural, seed)?;

    std::fs::create_dir_all(a.run_dir.join("workers"))?;
    std::fs::copy(&a.workload, a.run_dir.join("workload.jsonl"))?;

    let cfg = ServerConfig {
        listen: "127.0.0.1:0".parse().expect("static addr"),
        metrics: None,
        master: master_cfg.clone(),
        trace_path: Some(a.run_dir.join("trace.jsonl")),
        telemetry: a.telemetry,
        telemetry_cluster: "pullherd".into(),
        telemetry_node: "master".into(),
    };
    let server = MasterServer::start(cfg, tasks)?;
    let master_addr = server.addr;
    log::info!("master on {master_addr}, spawning {} workers", a.workers);

    let exe = std::env::current_exe()?;
    let children: Arc<Mutex<Vec<Child>>> = Arc::new(Mutex::new(Vec::new()));
    for i in 0..a.workers {
        let log_path = a.run_dir.join(format!("workers/w{i}.jsonl"));
        let mut cmd = Command::new(&exe);
        cmd.arg("worker")
            .arg("--master")
            .arg(master_addr.to_string())
            .arg("--slots")
            .arg(a.slots.to_string())
            .arg("--heartbeat")
            .arg(format!(
                "{}",
                (master_cfg.heartbeat_interval_s / 2.0).max(0.05)
            ))
            .arg("--log")
            .arg(&log_path)
            .stdin(Stdio::null())
            .stdout(Stdio::null());
        match &a.command {
            Some(tpl) => cmd.arg("--command").arg(tpl),
            None => cmd.arg("--speed").arg(a.speed.to_string()),
        };
        if let Some(t) = a.telemetry {
            cmd.arg("--telemetry").arg(t.to_string());
        }
        children.lock().expect("children lock").push(cmd.spawn()?);
    }

    // fault injection: kill a seeded random subset of workers mid-run
    let to_kill = (a.kill_fraction * a.workers as f64).round() as usize;
    if to_kill > 0 {
        let children = children.clone();
        let kill_after = a.kill_after;
        let total = a.workers as usize;
        std::thread::spawn(move || {
            std::thread::sleep(Duration::from_secs_f64(kill_after));
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x4B494C4C);
            let victims = sample(&mut rng, total, to_kill.min(total));
            let mut guard = children.lock().expect("children lock");
            for v in victims {
                if let Some(child) = guard.get_mut(v) {
                    log::info!("killing worker process {v}");
                    let _ = child.kill();
                }
            }
        });
    }

    let drainer = server.drain_handle();
    std::thread::spawn(move || loop {
        if interrupted() {
            drainer.request_drain();
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    });

    let result = server.wait()?;

    // drained agents exit on their own; give them a moment, then sweep
    let deadline = Instant::now() + Duration::from_secs(10);
    {
        let mut guard = children.lock().expect("children lock");
        for child in guard.iter_mut() {
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => {
                        std::thread::sleep(Duration::from_millis(20))
                    }
                    Ok(None) => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                    Err(_) => break,
                }
            }
        }
    }

    clustering::write_tasks_file(&a.run_dir.join("tasks.jsonl"), &result.tasks)?;
    std::fs::write(
        a.run_dir.join("summary.json"),
        serde_json::to_vec_pretty(&result.summary)?,
    )?;

    #[derive(serde::Serialize)]
    struct Out<'a> {
        run_dir: &'a Path,
        workers: u32,
        killed: usize,
        summary: &'a pullherd_core::RunSummary,
    }
    emit(
        json,
        &Out {
            run_dir: &a.run_dir,
            workers: a.workers,
            killed: to_kill,
            summary: &result.summary,
        },
        || {
            println!(
                "campaign done in {:.1}s: {} calcs in {} tasks on {} workers, r_fail {:.6}",
                result.summary.t_total_s,
                result.summary.n_calc,
                result.summary.n_task,
                result.summary.n_worker,
                result.summary.r_fail
            );
        },
    );
    Ok(ExitCode::SUCCESS)
}
