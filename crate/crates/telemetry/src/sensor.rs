//! Fire-and-forget UDP sensor. Emission never blocks and never fails the
//! caller: socket trouble is logged and the datagram dropped, matching the
//! monitoring-must-not-hurt-scheduling contract.

use std::net::{SocketAddr, UdpSocket};

use crate::xdr::{encode_datagram, MonDatagram, MonParam};

pub struct Sensor {
    socket: Option<UdpSocket>,
    dest: SocketAddr,
    cluster: String,
    node: String,
    seq: u32,
}

impl Sensor {
    /// Binds an ephemeral local port towards `dest`. A bind failure yields a
    /// sensor that silently drops everything rather than an error.
    pub fn new(dest: SocketAddr, cluster: &str, node: &str) -> Self {
        let socket = match UdpSocket::bind(("0.0.0.0", 0)) {
            Ok(s) => {
                if let Err(e) = s.set_nonblocking(true) {
                    log::warn!("telemetry socket set_nonblocking failed: {e}");
                }
                Some(s)
            }
            Err(e) => {
                log::warn!("telemetry sensor disabled, bind failed: {e}");
                None
            }
        };
        Sensor {
            socket,
            dest,
            cluster: cluster.to_string(),
            node: node.to_string(),
            seq: 0,
        }
    }

    pub fn cluster(&self) -> &str {
        &self.cluster
    }

    pub fn node(&self) -> &str {
        &self.node
    }

    /// Sequence number of the last emission (0 before the first).
    pub fn last_seq(&self) -> u32 {
        self.seq
    }

    /// Emits one datagram, best effort. Returns the sequence number used.
    pub fn emit(&mut self, params: Vec<MonParam>) -> u32 {
        self.seq = self.seq.wrapping_add(1);
        let gram = MonDatagram::new(&self.cluster, &self.node, self.seq, params);
        match encode_datagram(&gram) {
            Ok(bytes) => {
                if let Some(socket) = &self.socket {
                    if let Err(e) = socket.send_to(&bytes, self.dest) {
                        log::debug!("telemetry send to {} dropped: {e}", self.dest);
                    }
                }
            }
            Err(e) => log::warn!("telemetry datagram dropped: {e}"),
        }
        self.seq
    }
}
