//! Wire protocol for master-worker traffic: a length-prefixed frame codec
//! over a reliable byte stream, carrying the messages in [`message`].
//!
//! The frame layout and canonical bodies are documented with golden vectors
//! in `docs/protocol.md` at the repository root.

pub mod frame;
pub mod message;

pub use frame::{encode_envelope, encode_frame, FrameDecoder, MAX_FRAME_BYTES};
pub use message::{Envelope, Message, TaskStatus, PROTOCOL_VERSION};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("message violates the schema: {0}")]
    Schema(String),

    #[error("frame of {declared} bytes at stream offset {offset} exceeds the 16 MiB cap")]
    Oversize { declared: u64, offset: u64 },

    #[error("malformed frame body at stream offset {offset}: {detail}")]
    Malformed { offset: u64, detail: String },

    #[error("decoder already hit a protocol error; drop the connection")]
    Poisoned,
}
