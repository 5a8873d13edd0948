//! Core of the pullherd framework: domain model, synthetic workloads,
//! clustering, deployment manifests, the master scheduling state machine,
//! trace analytics and a deterministic campaign simulator.
//!
//! Everything here is pure computation over explicit inputs; sockets,
//! clocks and processes live in the `pullherd-runtime` crate.

pub mod analytics;
pub mod bounds;
pub mod clustering;
pub mod error;
pub mod manifest;
pub mod master;
pub mod model;
pub mod sim;
pub mod sweep;
pub mod trace;
pub mod workload;

pub use error::CoreError;
pub use model::{AnalysisType, AtomicCalculation, GranularityMap, OrderingPolicy, Task, TaskState};
pub use trace::{RunSummary, RunTrace};
