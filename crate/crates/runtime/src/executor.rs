//! Task executors: a real subprocess runner with placeholder substitution,
//! and a simulated one that sleeps cost/speed.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub enum ExecutorSpec {
    /// Shell command template. Placeholders: `{task_id}`, `{payload_ref}`,
    /// `{calc_ids_file}` (a file holding one calc id per line).
    Command { template: String },
    /// Sleeps total_cost / speed, then succeeds.
    Simulated { speed: f64 },
}

impl ExecutorSpec {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            ExecutorSpec::Command { template } if template.trim().is_empty() => {
                Err("command template must not be empty".into())
            }
            ExecutorSpec::Simulated { speed } if *speed <= 0.0 => {
                Err(format!("simulated speed must be > 0, got {speed}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutcome {
    pub ok: bool,
    pub elapsed_s: f64,
    pub error: Option<String>,
}

pub struct ExecInput<'a> {
    pub task_id: &'a str,
    pub calc_ids: &'a [String],
    pub payload_ref: &'a str,
    pub cost_s: f64,
    /// Optional per-task wall ceiling; opt-in because costs span decades.
    pub timeout_s: Option<f64>,
    /// Directory for scratch files (calc id lists).
    pub work_dir: &'a std::path::Path,
}

/// Runs one task to completion. Never panics; every failure mode comes back
/// as `ok: false` with a reason.
pub fn execute(input: &ExecInput<'_>, spec: &ExecutorSpec) -> ExecOutcome {
    let started = Instant::now();
    match spec {
        ExecutorSpec::Simulated { speed } => {
            let duration = input.cost_s / speed;
            if duration > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(duration));
            }
            ExecOutcome {
                ok: true,
                elapsed_s: started.elapsed().as_secs_f64(),
                error: None,
            }
        }
        ExecutorSpec::Command { template } => run_command(input, template, started),
    }
}

fn run_command(input: &ExecInput<'_>, template: &str, started: Instant) -> ExecOutcome {
    let fail = |error: String, started: Instant| ExecOutcome {
        ok: false,
        elapsed_s: started.elapsed().as_secs_f64(),
        error: Some(error),
    };
    let calc_file: PathBuf = input.work_dir.join(format!("{}.calcs", input.task_id));
    let write_result = std::fs::File::create(&calc_file).and_then(|mut f| {
        for c in input.calc_ids {
            writeln!(f, "{c}")?;
        }
        f.flush()
    });
    if let Err(e) = write_result {
        return fail(format!("calc list write failed: {e}"), started);
    }

    let cmd = template
        .replace("{task_id}", input.task_id)
        .replace("{payload_ref}", input.payload_ref)
        .replace("{calc_ids_file}", &calc_file.to_string_lossy());

    let child = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn();
    let mut child = match child {
        Ok(c) => c,
        Err(e) => return fail(format!("spawn failed: {e}"), started),
    };

    let deadline = input
        .timeout_s
        .map(|t| started + Duration::from_secs_f64(t));
    loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                let elapsed_s = started.elapsed().as_secs_f64();
                return if status.success() {
                    ExecOutcome {
                        ok: true,
                        elapsed_s,
                        error: None,
                    }
                } else {
                    let reason = match status.code() {
                        Some(code) => format!("exit_code={code}"),
                        None => "killed_by_signal".to_string(),
                    };
                    ExecOutcome {
                        ok: false,
                        elapsed_s,
                        error: Some(reason),
                    }
                };
            }
            Ok(None) => {
                if let Some(d) = deadline {
                    if Instant::now() >= d {
                        let _ = child.kill();
                        let _ = child.wait();
                        return fail(
                            format!("timeout after {}s", input.timeout_s.unwrap()),
                            started,
                        );
                    }
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return fail(format!("wait failed: {e}"), started);
            }
        }
    }
}
