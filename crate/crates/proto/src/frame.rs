//! Length-prefixed framing over a reliable byte stream.
//!
//! Wire format, bit-exact: `[len: u32 big-endian][body: UTF-8 JSON]` where
//! `len` is the body byte count. Frames above 16 MiB are a protocol error
//! and the connection must be dropped.

use crate::message::{decode_body, encode_body, Envelope, Message};
use crate::ProtoError;

/// Upper bound on a frame body; keeps a malicious peer from ballooning the
/// decoder.
pub const MAX_FRAME_BYTES: usize = 16 * 1024 * 1024;

/// Encodes one message as a frame under the current protocol version.
pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, ProtoError> {
    encode_envelope(&Envelope::new(msg.clone()))
}

pub fn encode_envelope(envelope: &Envelope) -> Result<Vec<u8>, ProtoError> {
    let body = encode_body(envelope)?;
    if body.len() > MAX_FRAME_BYTES {
        return Err(ProtoError::Oversize {
            declared: body.len() as u64,
            offset: 0,
        });
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Incremental decoder for one connection's byte stream.
///
/// Feed reads in any split; complete frames come out in order and a partial
/// trailing frame is retained until more bytes arrive. Buffered memory never
/// exceeds the frame cap plus one read. Not shared across threads.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    /// Bytes consumed off the front of `buf` so far.
    consumed: usize,
    /// Offset of `buf[0]` in the connection's byte stream.
    stream_base: u64,
    poisoned: bool,
}

impl FrameDecoder {
    pub fn new() -> Self {
        FrameDecoder::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.compact();
        self.buf.extend_from_slice(bytes);
    }

    fn compact(&mut self) {
        if self.consumed > 0 {
            self.buf.drain(..self.consumed);
            self.stream_base += self.consumed as u64;
            self.consumed = 0;
        }
    }

    pub fn buffered_len(&self) -> usize {
        self.buf.len() - self.consumed
    }

    /// Next complete message, `Ok(None)` if more bytes are needed. After an
    /// error the stream is unrecoverable and the connection must be dropped.
    pub fn try_next(&mut self) -> Result<Option<Envelope>, ProtoError> {
        if self.poisoned {
            return Err(ProtoError::Poisoned);
        }
        let avail = &self.buf[self.consumed..];
        if avail.len() < 4 {
            return Ok(None);
        }
        let frame_offset = self.stream_base + self.consumed as u64;
        let len = u32::from_be_bytes([avail[0], avail[1], avail[2], avail[3]]) as usize;
        if len > MAX_FRAME_BYTES {
            self.poisoned = true;
            return Err(ProtoError::Oversize {
                declared: len as u64,
                offset: frame_offset,
            });
        }
        if avail.len() < 4 + len {
            return Ok(None);
        }
        let body = &avail[4..4 + len];
        let result = decode_body(body).map_err(|e| ProtoError::Malformed {
            offset: frame_offset + 4,
            detail: e.to_string(),
        });
        match result {
            Ok(envelope) => {
                self.consumed += 4 + len;
                Ok(Some(envelope))
            }
            Err(e) => {
                self.poisoned = true;
                Err(e)
            }
        }
    }
}
