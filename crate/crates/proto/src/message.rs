//! Message schema for master-worker traffic.
//!
//! Every message is one JSON object carrying the protocol version `v` and a
//! `kind` discriminator. Unknown kinds are rejected; unknown extra fields
//! are ignored so newer peers can add fields without breaking older ones.

use serde::{Deserialize, Serialize};

use crate::ProtoError;

/// Version spoken by this crate. A peer announcing anything else is turned
/// away at registration and the connection closed.
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Message {
    #[serde(rename = "REGISTER")]
    Register {
        slots: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        speed_hint: Option<f64>,
    },
    #[serde(rename = "REGISTERED")]
    Registered {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        worker_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    #[serde(rename = "REQUEST")]
    Request { worker_id: String },
    #[serde(rename = "ASSIGN")]
    Assign {
        task_id: String,
        calc_ids: Vec<String>,
        payload_ref: String,
        cost_s: f64,
    },
    #[serde(rename = "NOWORK")]
    NoWork { retry_after_s: f64 },
    #[serde(rename = "RESULT")]
    TaskResult {
        worker_id: String,
        task_id: String,
        status: TaskStatus,
        elapsed_s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    #[serde(rename = "ACK")]
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        warning: Option<String>,
    },
    #[serde(rename = "HEARTBEAT")]
    Heartbeat {
        worker_id: String,
        busy_task_ids: Vec<String>,
    },
    #[serde(rename = "DRAIN")]
    Drain,
    #[serde(rename = "SHUTDOWN")]
    Shutdown,
}

/// A message together with the protocol version it arrived under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    #[serde(flatten)]
    pub msg: Message,
}

impl Envelope {
    pub fn new(msg: Message) -> Self {
        Envelope {
            v: PROTOCOL_VERSION,
            msg,
        }
    }
}

/// Canonical body bytes: compact JSON, fields in schema order, `v` first.
pub fn encode_body(envelope: &Envelope) -> Result<Vec<u8>, ProtoError> {
    serde_json::to_vec(envelope).map_err(|e| ProtoError::Schema(e.to_string()))
}

pub fn decode_body(bytes: &[u8]) -> Result<Envelope, ProtoError> {
    serde_json::from_slice(bytes).map_err(|e| ProtoError::Schema(e.to_string()))
}
