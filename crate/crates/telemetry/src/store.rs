//! Time-series store fed by the collector: per-key value series, per-sensor
//! sequence tracking with exact gap accounting, and append-only CSV export.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::xdr::{decode_datagram, MonValue, XdrError};

/// Sequence bookkeeping for one (cluster, node) sensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorTrack {
    pub last_seq: u32,
    /// Sum of max(0, seq_jump - 1) over received datagrams; with seqs
    /// starting at 1 and no reordering this counts dropped datagrams
    /// exactly.
    pub gap_count: u64,
    pub received: u64,
    pub duplicates: u64,
    /// Sequence regressions treated as sensor restarts. A late-arriving
    /// lower seq also lands here, which inflates gap accounting under heavy
    /// reordering; reordering tolerance is out of contract.
    pub resets: u64,
}

#[derive(Debug, Clone, Default)]
struct Series {
    points: Vec<(f64, MonValue)>,
    flushed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingest {
    Stored { params: usize },
    Duplicate,
    Undecodable,
}

#[derive(Debug, Default)]
pub struct SeriesStore {
    series: BTreeMap<(String, String, String), Series>,
    sensors: BTreeMap<(String, String), SensorTrack>,
    undecodable: u64,
    last_recv_t: f64,
}

impl SeriesStore {
    pub fn new() -> Self {
        SeriesStore::default()
    }

    /// Ingests one raw datagram received at `recv_time_s`.
    pub fn ingest(&mut self, bytes: &[u8], recv_time_s: f64) -> Ingest {
        match decode_datagram(bytes) {
            Ok(d) => self.ingest_decoded(d, recv_time_s),
            Err(_) => {
                self.undecodable += 1;
                Ingest::Undecodable
            }
        }
    }

    fn ingest_decoded(&mut self, d: crate::xdr::MonDatagram, recv_time_s: f64) -> Ingest {
        // receive timestamps are kept non-decreasing per store
        let t = recv_time_s.max(self.last_recv_t);
        self.last_recv_t = t;
        let track = self
            .sensors
            .entry((d.cluster.clone(), d.node.clone()))
            .or_default();
        if track.received > 0 {
            if d.seq == track.last_seq {
                track.duplicates += 1;
                return Ingest::Duplicate;
            }
            if d.seq < track.last_seq {
                track.resets += 1;
                track.last_seq = d.seq;
            } else {
                track.gap_count += (d.seq - track.last_seq - 1) as u64;
                track.last_seq = d.seq;
            }
        } else {
            // sensors emit seq 1 first; anything higher means leading loss
            track.gap_count += d.seq.saturating_sub(1) as u64;
            track.last_seq = d.seq;
        }
        track.received += 1;
        let n = d.params.len();
        for p in d.params {
            self.series
                .entry((d.cluster.clone(), d.node.clone(), p.name))
                .or_default()
                .points
                .push((t, p.value));
        }
        Ingest::Stored { params: n }
    }

    pub fn sensor(&self, cluster: &str, node: &str) -> Option<&SensorTrack> {
        self.sensors.get(&(cluster.to_string(), node.to_string()))
    }

    pub fn undecodable(&self) -> u64 {
        self.undecodable
    }

    pub fn total_gap_count(&self) -> u64 {
        self.sensors.values().map(|s| s.gap_count).sum()
    }

    pub fn points(&self, cluster: &str, node: &str, param: &str) -> &[(f64, MonValue)] {
        self.series
            .get(&(cluster.to_string(), node.to_string(), param.to_string()))
            .map(|s| s.points.as_slice())
            .unwrap_or(&[])
    }

    /// Appends rows not yet flushed to `<cluster>.<node>.csv` files under
    /// `dir`, creating them with a header on first touch.
    /// Columns: recv_time_s,cluster,node,param,value.
    pub fn flush_csv(&mut self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files: BTreeMap<(String, String), std::fs::File> = BTreeMap::new();
        for ((cluster, node, param), series) in self.series.iter_mut() {
            if series.flushed == series.points.len() {
                continue;
            }
            let key = (cluster.clone(), node.clone());
            if !files.contains_key(&key) {
                let path = dir.join(format!("{cluster}.{node}.csv"));
                let fresh = !path.exists();
                let mut f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)?;
                if fresh {
                    writeln!(f, "recv_time_s,cluster,node,param,value")?;
                }
                files.insert(key.clone(), f);
            }
            let f = files.get_mut(&key).expect("just inserted");
            for (t, v) in &series.points[series.flushed..] {
                writeln!(f, "{t},{cluster},{node},{param},{}", v.render())?;
            }
            series.flushed = series.points.len();
        }
        for f in files.values_mut() {
            f.flush()?;
        }
        Ok(())
    }
}

/// Convenience for tests and tools: decode-or-explain.
pub fn explain_decode(bytes: &[u8]) -> Result<String, XdrError> {
    let d = decode_datagram(bytes)?;
    Ok(format!(
        "{}/{} seq={} params={}",
        d.cluster,
        d.node,
        d.seq,
        d.params.len()
    ))
}
