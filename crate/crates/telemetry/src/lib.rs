//! Monitoring for pullherd campaigns: sensors push XDR-encoded UDP
//! datagrams with per-sensor sequence numbers; a collector aggregates them
//! into time series and detects loss from sequence gaps.
//!
//! The datagram layout is a golden contract, documented in
//! `docs/telemetry.md` and pinned by byte-exact vectors in the tests.

pub mod collector;
pub mod sensor;
pub mod store;
pub mod xdr;

pub use collector::Collector;
pub use sensor::Sensor;
pub use store::{Ingest, SensorTrack, SeriesStore};
pub use xdr::{
    decode_datagram, encode_datagram, MonDatagram, MonParam, MonValue, XdrError,
    MAX_DATAGRAM_BYTES, VERSION_TAG,
};
