//! Shared CLI plumbing: duration parsing, the optional config file, signal
//! flags and output helpers.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::Deserialize;

/// Parses a duration given as plain seconds or with an h/m/s suffix
/// ("90", "90s", "15m", "2.5h"). Returns seconds.
pub fn parse_duration_s(s: &str) -> Result<f64, String> {
    let t = s.trim();
    if t.is_empty() {
        return Err("empty duration".into());
    }
    let (num, scale) = match t.as_bytes()[t.len() - 1].to_ascii_lowercase() {
        b'h' => (&t[..t.len() - 1], 3600.0),
        b'm' => (&t[..t.len() - 1], 60.0),
        b's' => (&t[..t.len() - 1], 1.0),
        _ => (t, 1.0),
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse duration {s:?}"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!(
            "duration must be finite and non-negative, got {s:?}"
        ));
    }
    Ok(v * scale)
}

/// Optional defaults file. Precedence is flags, then PH_* environment
/// variables (clap handles both), then this file, then built-in defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub master_addr: Option<String>,
    pub slots: Option<u32>,
    pub heartbeat_s: Option<f64>,
    pub lost_timeout_s: Option<f64>,
    pub retry_cap: Option<u32>,
    pub ordering: Option<String>,
    pub seed: Option<u64>,
    pub telemetry: Option<String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<ConfigFile, String> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let data = std::fs::read(path).map_err(|e| format!("config file {path:?}: {e}"))?;
        serde_json::from_slice(&data).map_err(|e| format!("config file {path:?}: {e}"))
    }
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_sig: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

/// Installs SIGINT/SIGTERM handlers that raise a flag; callers poll
/// [`interrupted`] and drain gracefully.
pub fn install_signal_flag() {
    unsafe {
        libc::signal(libc::SIGINT, on_signal as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_signal as *const () as libc::sighandler_t);
    }
}

pub fn interrupted() -> bool {
    INTERRUPTED.load(Ordering::SeqCst)
}

/// Prints a machine-readable document or a human line depending on --json.
pub fn emit(json_mode: bool, value: &impl serde::Serialize, human: impl FnOnce()) {
    if json_mode {
        println!(
            "{}",
            serde_json::to_string(value).expect("serializable output")
        );
    } else {
        human();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations_accept_suffixes() {
        assert_eq!(parse_duration_s("90").unwrap(), 90.0);
        assert_eq!(parse_duration_s("90s").unwrap(), 90.0);
        assert_eq!(parse_duration_s("15m").unwrap(), 900.0);
        assert_eq!(parse_duration_s("2.5h").unwrap(), 9000.0);
        assert_eq!(parse_duration_s(" 5.9h ").unwrap(), 5.9 * 3600.0);
        assert!(parse_duration_s("").is_err());
        assert!(parse_duration_s("abc").is_err());
        assert!(parse_duration_s("-5s").is_err());
    }
}
