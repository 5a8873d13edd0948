//! `pullherd`: one binary for the whole framework. Generate workloads,
//! cluster them into tasks, serve or work a live campaign, simulate
//! campaigns, analyze traces, collect telemetry, verify deployment
//! manifests and sanity-check summary tables.
//!
//! Exit codes: 0 success, 1 domain error (including failed verifications),
//! 2 usage error.

mod run_local;
mod util;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pullherd_core::analytics;
use pullherd_core::clustering;
use pullherd_core::manifest;
use pullherd_core::master::MasterConfig;
use pullherd_core::model::{GranularityMap, OrderingPolicy};
use pullherd_core::sim::{Scenario, SimOutcome};
use pullherd_core::sweep;
use pullherd_core::trace::read_trace_file;
use pullherd_core::workload;
use pullherd_runtime::{run_agent, AgentConfig, ExecutorSpec, MasterServer, ServerConfig};
use util::{emit, parse_duration_s, ConfigFile};

#[derive(Parser)]
#[command(
    name = "pullherd",
    version,
    about = "Pull-model master-worker campaigns: run, simulate, analyze"
)]
struct Cli {
    /// Restrict stdout to machine-readable JSON
    #[arg(long, global = true, env = "PH_JSON")]
    json: bool,
    /// JSON file supplying defaults for common flags (flags and PH_* env
    /// take precedence)
    #[arg(long, global = true, env = "PH_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic workload file from a spec
    Gen(GenArgs),
    /// Cluster a workload into tasks under a granularity map
    Cluster(ClusterArgs),
    /// Serve a campaign as the master
    Master(MasterArgs),
    /// Run a worker agent against a master
    Worker(WorkerArgs),
    /// Spawn a master plus local worker processes and block until drained
    RunLocal(run_local::RunLocalArgs),
    /// Run simulation scenarios
    Sim(SimArgs),
    /// Build series, profile and phase decomposition from a trace
    Analyze(AnalyzeArgs),
    /// Receive telemetry datagrams and export CSV series
    Collector(CollectorArgs),
    /// Verify a deployment tree against its manifest
    Verify(VerifyArgs),
    /// Check summary rows against the work-conservation bound
    Bounds(BoundsArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Workload spec JSON ({counts, cost_model, ordering, rng_seed})
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the spec's rng_seed
    #[arg(long, env = "PH_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    workload: PathBuf,
    /// Granularity map JSON ({"d2dUHF": 3, ...})
    #[arg(long)]
    granularity: PathBuf,
    #[arg(long, env = "PH_ORDERING")]
    ordering: Option<OrderingPolicy>,
    #[arg(long, env = "PH_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MasterArgs {
    /// Pre-clustered tasks (JSON Lines)
    #[arg(long, conflicts_with_all = ["workload", "granularity"])]
    tasks: Option<PathBuf>,
    #[arg(long, requires = "granularity")]
    workload: Option<PathBuf>,
    #[arg(long)]
    granularity: Option<PathBuf>,
    /// Run directory for trace.jsonl, tasks.jsonl and summary.json
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: SocketAddr,
    /// Read-only metrics endpoint (serves one snapshot JSON per connection)
    #[arg(long)]
    metrics: Option<SocketAddr>,
    #[command(flatten)]
    tuning: MasterTuning,
    /// Telemetry collector address
    #[arg(long, env = "PH_TELEMETRY")]
    telemetry: Option<SocketAddr>,
}

#[derive(Args, Clone)]
struct MasterTuning {
    /// Heartbeat interval (seconds or h/m/s suffix)
    #[arg(long, value_parser = parse_duration_s, env = "PH_HEARTBEAT_S")]
    heartbeat: Option<f64>,
    /// Silence after which a worker is declared lost
    #[arg(long, value_parser = parse_duration_s, env = "PH_LOST_TIMEOUT_S")]
    lost_timeout: Option<f64>,
    /// Failed or lost attempts tolerated before a task is FAILED
    #[arg(long, env = "PH_RETRY_CAP")]
    retry_cap: Option<u32>,
    #[arg(long, env = "PH_ORDERING")]
    ordering: Option<OrderingPolicy>,
    #[arg(long, env = "PH_SEED")]
    seed: Option<u64>,
    /// Expected pool size N_w (analytics hint)
    #[arg(long)]
    target_pool: Option<u32>,
}

impl MasterTuning {
    fn build(&self, file: &ConfigFile) -> Result<MasterConfig, String> {
        let defaults = MasterConfig::default();
        let ordering = match (&self.ordering, &file.ordering) {
            (Some(o), _) => *o,
            (None, Some(s)) => s.parse().map_err(|e| format!("{e}"))?,
            _ => defaults.ordering,
        };
        Ok(MasterConfig {
            heartbeat_interval_s: self
                .heartbeat
                .or(file.heartbeat_s)
                .unwrap_or(defaults.heartbeat_interval_s),
            lost_timeout_s: self
                .lost_timeout
                .or(file.lost_timeout_s)
                .unwrap_or(defaults.lost_timeout_s),
            retry_cap: self
                .retry_cap
                .or(file.retry_cap)
                .unwrap_or(defaults.retry_cap),
            ordering,
            ordering_seed: self.seed.or(file.seed).unwrap_or(0),
            target_pool: self.target_pool.unwrap_or(0),
            nowork_retry_s: defaults.nowork_retry_s,
        })
    }
}

#[derive(Args)]
struct WorkerArgs {
    /// Master endpoint host:port
    #[arg(long, env = "PH_MASTER")]
    master: Option<String>,
    #[arg(long, env = "PH_SLOTS")]
    slots: Option<u32>,
    #[arg(long, value_parser = parse_duration_s, env = "PH_HEARTBEAT_S")]
    heartbeat: Option<f64>,
    /// Run tasks as a shell command template with {task_id} {payload_ref}
    /// {calc_ids_file} placeholders
    #[arg(long, conflicts_with = "simulated")]
    command: Option<String>,
    /// Simulate execution by sleeping cost/speed (default mode)
    #[arg(long)]
    simulated: bool,
    /// Simulated speed factor
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Optional per-task wall-clock ceiling
    #[arg(long, value_parser = parse_duration_s)]
    task_timeout: Option<f64>,
    /// JSON Lines log of task executions
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, env = "PH_TELEMETRY")]
    telemetry: Option<SocketAddr>,
}

#[derive(Args)]
struct SimArgs {
    /// Scenario JSON file
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for per-seed runs or the experiment report
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Target pool capacity N_w; defaults to the peak observed pool
    #[arg(long)]
    n_w: Option<u32>,
    /// Sampling step
    #[arg(long, value_parser = parse_duration_s, default_value = "60")]
    dt: f64,
}

#[derive(Args)]
struct CollectorArgs {
    #[arg(long, default_value = "127.0.0.1:0")]
    bind: SocketAddr,
    /// Directory for <cluster>.<node>.csv series files
    #[arg(long)]
    out: PathBuf,
    /// Exit after this long (runs until SIGTERM otherwise)
    #[arg(long, value_parser = parse_duration_s)]
    duration: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    root: PathBuf,
}

#[derive(Args)]
struct BoundsArgs {
    /// CSV with columns t_total,t_busy,slots (durations may carry h/m/s
    /// suffixes; an optional leading name column is kept for reporting)
    #[arg(long)]
    rows: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    util::install_signal_flag();
    let cli = Cli::parse();
    let file_cfg = match ConfigFile::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a, cli.json),
        Cmd::Cluster(a) => cmd_cluster(a, cli.json, &file_cfg),
        Cmd::Master(a) => cmd_master(a, cli.json, &file_cfg),
        Cmd::Worker(a) => cmd_worker(a, cli.json, &file_cfg),
        Cmd::RunLocal(a) => run_local::run(a, cli.json, &file_cfg),
        Cmd::Sim(a) => cmd_sim(a, cli.json),
        Cmd::Analyze(a) => cmd_analyze(a, cli.json),
        Cmd::Collector(a) => cmd_collector(a, cli.json),
        Cmd::Verify(a) => cmd_verify(a, cli.json),
        Cmd::Bounds(a) => cmd_bounds(a, cli.json),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn read_granularity(path: &Path) -> Result<GranularityMap, Box<dyn std::error::Error>> {
    let data = std::fs::read(path)?;
    let g: GranularityMap = serde_json::from_slice(&data)?;
    g.validate()?;
    Ok(g)
}

fn cmd_gen(a: GenArgs, json: bool) -> CmdResult {
    let data = std::fs::read(&a.spec)?;
    let mut spec: workload::WorkloadSpec = serde_json::from_slice(&data)?;
    if let Some(seed) = a.seed {
        spec.rng_seed = seed;
    }
    let calcs = workload::generate_workload(&spec)?;
    workload::write_workload_file(&a.out, &calcs)?;
    #[derive(serde::Serialize)]
    struct Out<'a> {
        calcs: usize,
        out: &'a Path,
        rng_seed: u64,
    }
    emit(
        json,
        &Out {
            calcs: calcs.len(),
            out: &a.out,
            rng_seed: spec.rng_seed,
        },
        || {
            println!("wrote {} calculations to {}", calcs.len(), a.out.display());
        },
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_cluster(a: ClusterArgs, json: bool, file_cfg: &ConfigFile) -> CmdResult {
    let calcs = workload::read_workload_file(&a.workload)?;
    let g = read_granularity(&a.granularity)?;
    let ordering = a.ordering.unwrap_or(OrderingPolicy::Natural);
    let seed = a.seed.or(file_cfg.seed).unwrap_or(0);
    let tasks = clustering::cluster(&calcs, &g, ordering, seed)?;
    clustering::write_tasks_file(&a.out, &tasks)?;
    #[derive(serde::Serialize)]
    struct Out<'a> {
        tasks: usize,
        calcs: usize,
        ordering: OrderingPolicy,
        out: &'a Path,
    }
    emit(
        json,
        &Out {
            tasks: tasks.len(),
            calcs: calcs.len(),
            ordering,
            out: &a.out,
        },
        || {
            println!(
                "clustered {} calculations into {} tasks ({})",
                calcs.len(),
                tasks.len(),
                ordering
            );
        },
    );
    Ok(ExitCode::SUCCESS)
}

fn load_tasks_for_master(
    a: &MasterArgs,
) -> Result<Vec<pullherd_core::Task>, Box<dyn std::error::Error>> {
    match (&a.tasks, &a.workload, &a.granularity) {
        (Some(t), _, _) => Ok(clustering::read_tasks_file(t)?),
        (None, Some(w), Some(g)) => {
            let calcs = workload::read_workload_file(w)?;
            let g = read_granularity(g)?;
            Ok(clustering::cluster(&calcs, &g, OrderingPolicy::Natural, 0)?)
        }
        _ => Err("provide --tasks or --workload with --granularity".into()),
    }
}

fn cmd_master(a: MasterArgs, json: bool, file_cfg: &ConfigFile) -> CmdResult {
    let tasks = load_tasks_for_master(&a)?;
    std::fs::create_dir_all(&a.run_dir)?;
    let master = a.tuning.build(file_cfg)?;
    let telemetry = a
        .telemetry
        .or_else(|| file_cfg.telemetry.as_deref().and_then(|s| s.parse().ok()));
    let cfg = ServerConfig {
        listen: a.listen,
        metrics: a.metrics,
        master,
        trace_path: Some(a.run_dir.join("trace.jsonl")),
        telemetry,
        telemetry_cluster: "pullherd".into(),
        telemetry_node: "master".into(),
    };
    let server = MasterServer::start(cfg, tasks)?;
    #[derive(serde::Serialize)]
    struct Endpoints {
        listen: SocketAddr,
        metrics: Option<SocketAddr>,
    }
    let endpoints = Endpoints {
        listen: server.addr,
        metrics: server.metrics_addr,
    };
    emit(json, &endpoints, || {
        println!("LISTEN {}", endpoints.listen);
        if let Some(m) = endpoints.metrics {
            println!("METRICS {m}");
        }
    });
    // SIGTERM/SIGINT triggers a drain rather than an abort
    let drainer = server.drain_handle();
    std::thread::spawn(move || loop {
        if util::interrupted() {
            drainer.request_drain();
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    });
    let result = server.wait()?;
    clustering::write_tasks_file(&a.run_dir.join("tasks.jsonl"), &result.tasks)?;
    std::fs::write(
        a.run_dir.join("summary.json"),
        serde_json::to_vec_pretty(&result.summary)?,
    )?;
    emit(json, &result.summary, || {
        println!(
            "campaign done: {} tasks, r_fail {:.6}, makespan {:.1}s, busy {:.1}s",
            result.summary.n_task,
            result.summary.r_fail,
            result.summary.t_total_s,
            result.summary.t_worker_s
        );
    });
    Ok(ExitCode::SUCCESS)
}

fn cmd_worker(a: WorkerArgs, json: bool, file_cfg: &ConfigFile) -> CmdResult {
    let master_addr = a
        .master
        .or_else(|| file_cfg.master_addr.clone())
        .ok_or("worker needs --master (or PH_MASTER / config file)")?;
    let exec = match a.command {
        Some(template) => ExecutorSpec::Command { template },
        None => ExecutorSpec::Simulated { speed: a.speed },
    };
    let defaults = AgentConfig::default();
    let cfg = AgentConfig {
        master_addr,
        slots: a.slots.or(file_cfg.slots).unwrap_or(defaults.slots),
        heartbeat_interval_s: a
            .heartbeat
            .or(file_cfg.heartbeat_s)
            .unwrap_or(defaults.heartbeat_interval_s),
        task_timeout_s: a.task_timeout,
        log_path: a.log,
        telemetry: a
            .telemetry
            .or_else(|| file_cfg.telemetry.as_deref().and_then(|s| s.parse().ok())),
        ..defaults
    };
    let report = run_agent(cfg, exec)?;
    emit(json, &report, || {
        println!(
            "worker {} drained: {} ok, {} error",
            report.worker_id, report.tasks_ok, report.tasks_error
        );
    });
    Ok(ExitCode::SUCCESS)
}

fn write_outcome(dir: &Path, outcome: &SimOutcome) -> Result<(), Box<dyn std::error::Error>> {
    std::fs::create_dir_all(dir)?;
    pullherd_core::trace::write_trace_file(&dir.join("trace.jsonl"), &outcome.trace)?;
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_vec_pretty(&outcome.summary)?,
    )?;
    Ok(())
}

fn cmd_sim(a: SimArgs, json: bool) -> CmdResult {
    let scenario = Scenario::load(&a.scenario)?;
    let base = a.scenario.parent().unwrap_or(Path::new("."));
    let tasks = scenario.build_tasks(base)?;
    std::fs::create_dir_all(&a.out)?;

    if scenario.policies.len() >= 2 {
        let report = sweep::ordering_experiment(
            &tasks,
            &scenario.cluster,
            &scenario.mode,
            &scenario.policies,
            &scenario.seeds,
            scenario.retry_cap,
            scenario.dt_s,
        )?;
        std::fs::write(
            a.out.join("experiment.json"),
            serde_json::to_vec_pretty(&report)?,
        )?;
        emit(json, &report.policies, || {
            for p in &report.policies {
                println!(
                    "{}: mean makespan {:.1}s, mean tail idle {:.1} worker-s, mean tail utilization {:.3}",
                    p.policy, p.mean_makespan_s, p.mean_tail_idle_area, p.mean_tail_utilization
                );
            }
        });
        return Ok(ExitCode::SUCCESS);
    }

    let policy = scenario
        .policies
        .first()
        .copied()
        .unwrap_or(OrderingPolicy::Natural);
    let outcomes = sweep::simulate_seeds(
        &tasks,
        &scenario.cluster,
        &scenario.mode,
        policy,
        scenario.retry_cap,
        &scenario.seeds,
    )?;
    #[derive(serde::Serialize)]
    struct Row {
        seed: u64,
        n_task: u64,
        t_total_s: f64,
        r_fail: f64,
    }
    let mut rows = Vec::new();
    for (seed, outcome) in scenario.seeds.iter().zip(&outcomes) {
        write_outcome(&a.out.join(format!("seed-{seed:05}")), outcome)?;
        rows.push(Row {
            seed: *seed,
            n_task: outcome.summary.n_task,
            t_total_s: outcome.summary.t_total_s,
            r_fail: outcome.summary.r_fail,
        });
    }
    emit(json, &rows, || {
        for r in &rows {
            println!(
                "seed {}: makespan {:.1}s, r_fail {:.6}",
                r.seed, r.t_total_s, r.r_fail
            );
        }
    });
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(a: AnalyzeArgs, json: bool) -> CmdResult {
    let trace = read_trace_file(&a.trace)?;
    let series = analytics::build_series(&trace, a.dt)?;
    let n_w = match a.n_w {
        Some(n) => n,
        None => series
            .samples
            .iter()
            .map(|s| s.pool)
            .max()
            .filter(|&p| p > 0)
            .ok_or("trace shows no pool capacity; pass --n-w")? as u32,
    };
    let decomposition = analytics::decompose(&trace, n_w, a.dt)?;
    let profile = analytics::run_profile(&trace);
    let summary = trace.summary();

    std::fs::create_dir_all(a.out.join("series"))?;
    let mut buf = Vec::new();
    analytics::write_series_csv(&mut buf, &series)?;
    std::fs::write(a.out.join("series/pool_busy.csv"), &buf)?;
    let mut buf = Vec::new();
    analytics::write_profile_csv(&mut buf, &profile)?;
    std::fs::write(a.out.join("profile.csv"), &buf)?;
    std::fs::write(
        a.out.join("decomposition.json"),
        serde_json::to_vec_pretty(&decomposition)?,
    )?;
    std::fs::write(
        a.out.join("summary.json"),
        serde_json::to_vec_pretty(&summary)?,
    )?;

    emit(json, &decomposition, || {
        println!(
            "makespan {:.1}s over N_w={} capacity: latency {:.1}%, overhead {:.1}%, busy {:.1}%, tail idle {:.1}% (tail utilization {:.3})",
            decomposition.makespan_s,
            n_w,
            decomposition.pct_latency,
            decomposition.pct_overhead,
            decomposition.pct_busy,
            decomposition.pct_tail_idle,
            decomposition.tail_utilization
        );
        if !decomposition.identity_applicable {
            println!("note: pool exceeded N_w; the capacity identity does not apply");
        }
    });
    Ok(ExitCode::SUCCESS)
}

fn cmd_collector(a: CollectorArgs, json: bool) -> CmdResult {
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::{Arc, Mutex};
    let collector = pullherd_telemetry::Collector::bind(a.bind)?;
    let addr = collector.local_addr()?;
    #[derive(serde::Serialize)]
    struct Out {
        listen: SocketAddr,
    }
    emit(json, &Out { listen: addr }, || println!("LISTEN {addr}"));

    let store = Arc::new(Mutex::new(pullherd_telemetry::SeriesStore::new()));
    let stop = Arc::new(AtomicBool::new(false));
    let runner = {
        let store = store.clone();
        let stop = stop.clone();
        let out = a.out.clone();
        std::thread::spawn(move || collector.run(store, Some(out), stop))
    };
    let deadline = a
        .duration
        .map(|d| std::time::Instant::now() + std::time::Duration::from_secs_f64(d));
    loop {
        if util::interrupted()
            || deadline
                .map(|d| std::time::Instant::now() >= d)
                .unwrap_or(false)
        {
            stop.store(true, Ordering::Relaxed);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    runner.join().map_err(|_| "collector thread panicked")??;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: VerifyArgs, json: bool) -> CmdResult {
    let m = manifest::read_manifest_file(&a.manifest)?;
    let report = manifest::verify_manifest(&m, &a.root)?;
    emit(json, &report, || {
        for f in &report.files {
            println!("{:?}\t{}", f.status, f.path);
        }
        println!("{}", if report.pass { "PASS" } else { "FAIL" });
    });
    Ok(if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_bounds(a: BoundsArgs, json: bool) -> CmdResult {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&a.rows)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (t_total_i, t_busy_i, slots_i) = match (col("t_total"), col("t_busy"), col("slots")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err("bounds CSV needs t_total,t_busy,slots columns".into()),
    };
    let name_i = col("name");
    let mut rows = Vec::new();
    let mut names = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(analytics::BoundsRow {
            t_total_s: parse_duration_s(&record[t_total_i])?,
            t_busy_s: parse_duration_s(&record[t_busy_i])?,
            slots: record[slots_i].parse()?,
        });
        names.push(
            name_i
                .map(|i| record[i].to_string())
                .unwrap_or_else(|| format!("row {}", rows.len())),
        );
    }
    let checks = analytics::check_bounds(&rows);
    let pass = checks.iter().all(|c| c.pass);
    #[derive(serde::Serialize)]
    struct Out<'a> {
        pass: bool,
        rows: Vec<(&'a str, &'a analytics::BoundsCheck)>,
    }
    let out = Out {
        pass,
        rows: names
            .iter()
            .map(|n| n.as_str())
            .zip(checks.iter())
            .collect(),
    };
    emit(json, &out, || {
        for (name, check) in &out.rows {
            println!(
                "{}\t{}\tfloor {:.3}h vs {:.3}h",
                if check.pass { "PASS" } else { "FAIL" },
                name,
                check.lower_bound_s / 3600.0,
                check.t_total_s / 3600.0
            );
        }
        println!("{}", if pass { "PASS" } else { "FAIL" });
    });
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
