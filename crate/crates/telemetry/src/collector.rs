//! UDP collector: receives datagrams into a [`SeriesStore`] and flushes
//! CSV snapshots periodically.

use std::net::{SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::store::SeriesStore;

/// How often buffered points are appended to the CSV files.
pub const FLUSH_INTERVAL: Duration = Duration::from_secs(5);

pub struct Collector {
    socket: UdpSocket,
    started: Instant,
}

impl Collector {
    pub fn bind(addr: SocketAddr) -> std::io::Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(Duration::from_millis(200)))?;
        Ok(Collector {
            socket,
            started: Instant::now(),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    /// Receives until `stop` is raised, folding datagrams into `store` and
    /// flushing CSVs to `out_dir` every [`FLUSH_INTERVAL`]. One final flush
    /// happens on exit.
    pub fn run(
        &self,
        store: Arc<Mutex<SeriesStore>>,
        out_dir: Option<PathBuf>,
        stop: Arc<AtomicBool>,
    ) -> std::io::Result<()> {
        let mut buf = [0u8; 2048];
        let mut last_flush = Instant::now();
        while !stop.load(Ordering::Relaxed) {
            match self.socket.recv_from(&mut buf) {
                Ok((n, _peer)) => {
                    let t = self.started.elapsed().as_secs_f64();
                    store.lock().expect("store lock").ingest(&buf[..n], t);
                }
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut => {}
                Err(e) => return Err(e),
            }
            if let Some(dir) = &out_dir {
                if last_flush.elapsed() >= FLUSH_INTERVAL {
                    store.lock().expect("store lock").flush_csv(dir)?;
                    last_flush = Instant::now();
                }
            }
        }
        if let Some(dir) = &out_dir {
            store.lock().expect("store lock").flush_csv(dir)?;
        }
        Ok(())
    }
}
