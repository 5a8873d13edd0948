//! Core domain types: analysis types, atomic calculations, tasks and the
//! granularity map that turns one into the other.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// The six kinds of compatibility analysis a calculation can belong to.
///
/// The names are part of the workload file contract and are serialized
/// verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnalysisType {
    #[serde(rename = "d2dUHF")]
    D2dUhf,
    #[serde(rename = "d2dVHF")]
    D2dVhf,
    #[serde(rename = "d2oUHF")]
    D2oUhf,
    #[serde(rename = "d2oVHF")]
    D2oVhf,
    #[serde(rename = "o2dUHF")]
    O2dUhf,
    #[serde(rename = "o2dVHF")]
    O2dVhf,
}

impl AnalysisType {
    /// All types in canonical (serialization) order.
    pub const ALL: [AnalysisType; 6] = [
        AnalysisType::D2dUhf,
        AnalysisType::D2dVhf,
        AnalysisType::D2oUhf,
        AnalysisType::D2oVhf,
        AnalysisType::O2dUhf,
        AnalysisType::O2dVhf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AnalysisType::D2dUhf => "d2dUHF",
            AnalysisType::D2dVhf => "d2dVHF",
            AnalysisType::D2oUhf => "d2oUHF",
            AnalysisType::D2oVhf => "d2oVHF",
            AnalysisType::O2dUhf => "o2dUHF",
            AnalysisType::O2dVhf => "o2dVHF",
        }
    }
}

impl fmt::Display for AnalysisType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnalysisType {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AnalysisType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| CoreError::InvalidSpec(format!("unknown analysis type {s:?}")))
    }
}

/// One indivisible unit of work.
///
/// Serialized as one JSON line of the workload file:
/// `{"calc_id":...,"type":...,"cost_s":...,"payload_ref":...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicCalculation {
    pub calc_id: String,
    #[serde(rename = "type")]
    pub analysis_type: AnalysisType,
    /// Cost in reference-slot seconds. Always positive.
    pub cost_s: f64,
    /// Opaque argument block reference handed to the executor.
    pub payload_ref: String,
}

/// Calculations-per-task, per analysis type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GranularityMap(pub BTreeMap<AnalysisType, u32>);

impl GranularityMap {
    /// Same cluster size for every type.
    pub fn uniform(g: u32) -> Self {
        GranularityMap(AnalysisType::ALL.iter().map(|&t| (t, g)).collect())
    }

    pub fn get(&self, t: AnalysisType) -> Option<u32> {
        self.0.get(&t).copied()
    }

    pub fn set(&mut self, t: AnalysisType, g: u32) {
        self.0.insert(t, g);
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        for (t, g) in &self.0 {
            if *g < 1 {
                return Err(CoreError::InvalidSpec(format!(
                    "granularity for {t} must be >= 1, got {g}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for GranularityMap {
    /// Small clusters for the two dominant types, large for the rest.
    fn default() -> Self {
        let mut m = GranularityMap::uniform(100);
        m.set(AnalysisType::D2dUhf, 3);
        m.set(AnalysisType::D2dVhf, 5);
        m
    }
}

/// Task lifecycle states.
///
/// Legal transitions: `PENDING -> ASSIGNED -> RUNNING -> DONE`, with
/// `ASSIGNED/RUNNING -> PENDING` on loss or error, and `-> FAILED` only once
/// attempts exceed the retry cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskState {
    Pending,
    Assigned,
    Running,
    Done,
    Failed,
}

impl TaskState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, TaskState::Done | TaskState::Failed)
    }
}

/// Timestamps of a task's lifecycle, seconds since campaign start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskTimestamps {
    pub created: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assigned: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished: Option<f64>,
}

/// A cluster of atomic calculations scheduled as one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    #[serde(rename = "type")]
    pub analysis_type: AnalysisType,
    pub calc_ids: Vec<String>,
    /// Sum of member costs, reference-slot seconds.
    pub total_cost: f64,
    pub payload_ref: String,
    pub state: TaskState,
    pub attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assigned_worker: Option<String>,
    #[serde(default)]
    pub timestamps: TaskTimestamps,
}

impl Task {
    pub fn new(
        task_id: String,
        analysis_type: AnalysisType,
        members: &[&AtomicCalculation],
    ) -> Self {
        let payload_ref = format!("task:{task_id}");
        Task {
            task_id,
            analysis_type,
            calc_ids: members.iter().map(|c| c.calc_id.clone()).collect(),
            total_cost: members.iter().map(|c| c.cost_s).sum(),
            payload_ref,
            state: TaskState::Pending,
            attempts: 0,
            assigned_worker: None,
            timestamps: TaskTimestamps::default(),
        }
    }
}

/// How the task queue is ordered, both at clustering time and inside the
/// master's scheduling queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OrderingPolicy {
    #[default]
    Natural,
    Random,
    LongestFirst,
    ShortestFirst,
}

impl fmt::Display for OrderingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OrderingPolicy::Natural => "NATURAL",
            OrderingPolicy::Random => "RANDOM",
            OrderingPolicy::LongestFirst => "LONGEST_FIRST",
            OrderingPolicy::ShortestFirst => "SHORTEST_FIRST",
        };
        f.write_str(s)
    }
}

impl FromStr for OrderingPolicy {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NATURAL" => Ok(OrderingPolicy::Natural),
            "RANDOM" => Ok(OrderingPolicy::Random),
            "LONGEST_FIRST" => Ok(OrderingPolicy::LongestFirst),
            "SHORTEST_FIRST" => Ok(OrderingPolicy::ShortestFirst),
            _ => Err(CoreError::InvalidSpec(format!(
                "unknown ordering policy {s:?}"
            ))),
        }
    }
}
