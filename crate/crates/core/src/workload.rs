//! Synthetic workload generation.
//!
//! Costs are drawn from a truncated exponential by default (log-uniform as an
//! alternative); both are sampled by inverse CDF so one RNG draw maps to one
//! calculation and generation is reproducible byte for byte.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::model::{AnalysisType, AtomicCalculation, OrderingPolicy};

/// Shape of the per-calculation cost distribution, seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    /// Exponential with the given mean, truncated to `[min_s, max_s]`.
    Exponential { mean_s: f64, min_s: f64, max_s: f64 },
    /// log10(cost) uniform on [log10(min_s), log10(max_s)].
    LogUniform { min_s: f64, max_s: f64 },
}

impl Default for CostModel {
    /// Spans three decades, matching the long-tailed workloads this targets.
    fn default() -> Self {
        CostModel::Exponential {
            mean_s: 86.0,
            min_s: 1.0,
            max_s: 1000.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), CoreError> {
        let (min, max) = match self {
            CostModel::Exponential {
                mean_s,
                min_s,
                max_s,
            } => {
                if *mean_s <= 0.0 {
                    return Err(CoreError::InvalidSpec(format!(
                        "exponential mean must be > 0, got {mean_s}"
                    )));
                }
                (*min_s, *max_s)
            }
            CostModel::LogUniform { min_s, max_s } => (*min_s, *max_s),
        };
        if min <= 0.0 || min >= max {
            return Err(CoreError::InvalidSpec(format!(
                "cost truncation must satisfy 0 < min < max, got [{min}, {max}]"
            )));
        }
        Ok(())
    }

    /// Inverse-CDF sample from the distribution, one uniform draw per call.
    fn sample(&self, u: f64) -> f64 {
        match self {
            CostModel::Exponential {
                mean_s,
                min_s,
                max_s,
            } => {
                // F restricted to [min, max]: invert u = (e^{-a/m} - e^{-x/m}) / (e^{-a/m} - e^{-b/m})
                let ea = (-min_s / mean_s).exp();
                let eb = (-max_s / mean_s).exp();
                let x = -mean_s * (ea - u * (ea - eb)).ln();
                x.clamp(*min_s, *max_s)
            }
            CostModel::LogUniform { min_s, max_s } => {
                let (la, lb) = (min_s.ln(), max_s.ln());
                (la + u * (lb - la)).exp()
            }
        }
    }
}

/// Declarative description of a synthetic workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Calculations to generate per analysis type. Missing types mean zero.
    pub counts: BTreeMap<AnalysisType, u64>,
    #[serde(default)]
    pub cost_model: CostModel,
    #[serde(default)]
    pub ordering: OrderingPolicy,
    pub rng_seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        self.cost_model.validate()
    }

    pub fn total_count(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Generates the workload described by `spec`. Deterministic for a given
/// seed: types are visited in canonical order and costs are drawn by inverse
/// CDF, so two runs produce identical calculation lists.
pub fn generate_workload(spec: &WorkloadSpec) -> Result<Vec<AtomicCalculation>, CoreError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut out = Vec::with_capacity(spec.total_count() as usize);
    for t in AnalysisType::ALL {
        let n = spec.counts.get(&t).copied().unwrap_or(0);
        for i in 0..n {
            let u: f64 = rng.random();
            out.push(AtomicCalculation {
                calc_id: format!("{t}-{i:06}"),
                analysis_type: t,
                cost_s: spec.cost_model.sample(u),
                payload_ref: format!("args/{t}/{i}"),
            });
        }
    }
    Ok(out)
}

/// Writes a workload as JSON Lines.
pub fn write_workload<W: Write>(mut w: W, calcs: &[AtomicCalculation]) -> Result<(), CoreError> {
    for c in calcs {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSON Lines workload.
pub fn read_workload<R: Read>(r: R) -> Result<Vec<AtomicCalculation>, CoreError> {
    let mut out = Vec::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn read_workload_file(path: &Path) -> Result<Vec<AtomicCalculation>, CoreError> {
    read_workload(std::fs::File::open(path)?)
}

pub fn write_workload_file(path: &Path, calcs: &[AtomicCalculation]) -> Result<(), CoreError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_workload(&mut f, calcs)?;
    f.flush()?;
    Ok(())
}
