//! Makespan lower bound used by analytics and the acceptance checks.

use crate::error::CoreError;
use crate::model::Task;

/// Greatest of the work bound (total cost over total speed) and the critical
/// task bound (largest task on the fastest slot), in seconds.
pub fn makespan_lower_bound(tasks: &[Task], slot_speeds: &[f64]) -> Result<f64, CoreError> {
    if slot_speeds.is_empty() {
        return Err(CoreError::EmptySlots);
    }
    if slot_speeds.iter().any(|s| *s <= 0.0) {
        return Err(CoreError::InvalidSpec("slot speeds must be > 0".into()));
    }
    let total_cost: f64 = tasks.iter().map(|t| t.total_cost).sum();
    let total_speed: f64 = slot_speeds.iter().sum();
    let max_cost = tasks.iter().map(|t| t.total_cost).fold(0.0, f64::max);
    let max_speed = slot_speeds.iter().copied().fold(f64::MIN, f64::max);
    Ok((total_cost / total_speed).max(max_cost / max_speed))
}
