//! XDR encoding of monitoring datagrams.
//!
//! Layout, all integers big-endian, everything padded to 4-byte boundaries:
//!
//! ```text
//! string      = u32 byte length, bytes, zero padding to a multiple of 4
//! datagram    = version_tag ("PH1") cluster node seq:u32 count:u32 param*
//! param       = name type_code:u32 value
//! type codes  = 1 INT32 (i32 BE), 2 REAL64 (IEEE-754 BE), 3 STRING
//! ```
//!
//! Encoded datagrams are capped at 1400 bytes so they ride in a single
//! unfragmented UDP packet on common MTUs.

use thiserror::Error;

/// Format tag every datagram opens with.
pub const VERSION_TAG: &str = "PH1";

/// Encoded-size cap, bytes.
pub const MAX_DATAGRAM_BYTES: usize = 1400;

pub const TYPE_INT32: u32 = 1;
pub const TYPE_REAL64: u32 = 2;
pub const TYPE_STRING: u32 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum XdrError {
    #[error("encoded datagram is {0} bytes, over the {MAX_DATAGRAM_BYTES}-byte cap")]
    Oversize(usize),

    #[error("buffer truncated at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },

    #[error("string length {len} at offset {offset} exceeds the remaining buffer")]
    LengthOverrun { offset: usize, len: u32 },

    #[error("nonzero padding byte at offset {offset}")]
    BadPadding { offset: usize },

    #[error("invalid UTF-8 in string at offset {offset}")]
    InvalidUtf8 { offset: usize },

    #[error("unknown parameter type code {code} at offset {offset}")]
    UnknownTypeCode { offset: usize, code: u32 },

    #[error("version tag {got:?} is not {VERSION_TAG:?}")]
    TagMismatch { got: String },

    #[error("{trailing} trailing bytes after the last parameter at offset {offset}")]
    TrailingBytes { offset: usize, trailing: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum MonValue {
    Int32(i32),
    Real64(f64),
    Str(String),
}

impl MonValue {
    fn type_code(&self) -> u32 {
        match self {
            MonValue::Int32(_) => TYPE_INT32,
            MonValue::Real64(_) => TYPE_REAL64,
            MonValue::Str(_) => TYPE_STRING,
        }
    }

    /// Plain text rendering used by the CSV export.
    pub fn render(&self) -> String {
        match self {
            MonValue::Int32(v) => v.to_string(),
            MonValue::Real64(v) => v.to_string(),
            MonValue::Str(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonParam {
    pub name: String,
    pub value: MonValue,
}

impl MonParam {
    pub fn int(name: &str, v: i64) -> Self {
        MonParam {
            name: name.to_string(),
            value: MonValue::Int32(v.clamp(i32::MIN as i64, i32::MAX as i64) as i32),
        }
    }

    pub fn real(name: &str, v: f64) -> Self {
        MonParam {
            name: name.to_string(),
            value: MonValue::Real64(v),
        }
    }

    pub fn text(name: &str, v: &str) -> Self {
        MonParam {
            name: name.to_string(),
            value: MonValue::Str(v.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonDatagram {
    pub version_tag: String,
    pub cluster: String,
    pub node: String,
    pub seq: u32,
    pub params: Vec<MonParam>,
}

impl MonDatagram {
    pub fn new(cluster: &str, node: &str, seq: u32, params: Vec<MonParam>) -> Self {
        MonDatagram {
            version_tag: VERSION_TAG.to_string(),
            cluster: cluster.to_string(),
            node: node.to_string(),
            seq,
            params,
        }
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    let pad = (4 - s.len() % 4) % 4;
    out.extend_from_slice(&[0u8; 3][..pad]);
}

/// Encodes a datagram; total length is always a multiple of 4.
pub fn encode_datagram(d: &MonDatagram) -> Result<Vec<u8>, XdrError> {
    let mut out = Vec::with_capacity(128);
    put_string(&mut out, &d.version_tag);
    put_string(&mut out, &d.cluster);
    put_string(&mut out, &d.node);
    out.extend_from_slice(&d.seq.to_be_bytes());
    out.extend_from_slice(&(d.params.len() as u32).to_be_bytes());
    for p in &d.params {
        put_string(&mut out, &p.name);
        out.extend_from_slice(&p.value.type_code().to_be_bytes());
        match &p.value {
            MonValue::Int32(v) => out.extend_from_slice(&v.to_be_bytes()),
            MonValue::Real64(v) => out.extend_from_slice(&v.to_be_bytes()),
            MonValue::Str(v) => put_string(&mut out, v),
        }
    }
    if out.len() > MAX_DATAGRAM_BYTES {
        return Err(XdrError::Oversize(out.len()));
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], XdrError> {
        if self.buf.len() - self.pos < n {
            return Err(XdrError::Truncated {
                offset: self.pos,
                needed: n - (self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, XdrError> {
        Ok(u32::from_be_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String, XdrError> {
        let len_offset = self.pos;
        let len = self.u32()?;
        if len as usize > self.buf.len() - self.pos {
            return Err(XdrError::LengthOverrun {
                offset: len_offset,
                len,
            });
        }
        let str_offset = self.pos;
        let bytes = self.take(len as usize)?;
        let s = std::str::from_utf8(bytes)
            .map_err(|_| XdrError::InvalidUtf8 { offset: str_offset })?
            .to_string();
        let pad = (4 - len as usize % 4) % 4;
        let pad_offset = self.pos;
        let pad_bytes = self.take(pad)?;
        if let Some(i) = pad_bytes.iter().position(|b| *b != 0) {
            return Err(XdrError::BadPadding {
                offset: pad_offset + i,
            });
        }
        Ok(s)
    }
}

/// Decodes a datagram; inverse of [`encode_datagram`] on valid input. Never
/// panics on garbage: every length is checked against the buffer before use.
pub fn decode_datagram(bytes: &[u8]) -> Result<MonDatagram, XdrError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let version_tag = c.string()?;
    if version_tag != VERSION_TAG {
        return Err(XdrError::TagMismatch { got: version_tag });
    }
    let cluster = c.string()?;
    let node = c.string()?;
    let seq = c.u32()?;
    let count = c.u32()?;
    // cheap sanity bound: every param needs at least name-len + type + value
    let max_possible = (bytes.len() - c.pos) / 12 + 1;
    if count as usize > max_possible {
        return Err(XdrError::LengthOverrun {
            offset: c.pos - 4,
            len: count,
        });
    }
    let mut params = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name = c.string()?;
        let code_offset = c.pos;
        let code = c.u32()?;
        let value = match code {
            TYPE_INT32 => {
                MonValue::Int32(i32::from_be_bytes(c.take(4)?.try_into().expect("4 bytes")))
            }
            TYPE_REAL64 => {
                MonValue::Real64(f64::from_be_bytes(c.take(8)?.try_into().expect("8 bytes")))
            }
            TYPE_STRING => MonValue::Str(c.string()?),
            code => {
                return Err(XdrError::UnknownTypeCode {
                    offset: code_offset,
                    code,
                })
            }
        };
        params.push(MonParam { name, value });
    }
    if c.pos != bytes.len() {
        return Err(XdrError::TrailingBytes {
            offset: c.pos,
            trailing: bytes.len() - c.pos,
        });
    }
    Ok(MonDatagram {
        version_tag,
        cluster,
        node,
        seq,
        params,
    })
}
