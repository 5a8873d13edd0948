//! Clustering of atomic calculations into tasks and the ordering policies
//! shared with the master's scheduling queue.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::model::{AnalysisType, AtomicCalculation, GranularityMap, OrderingPolicy, Task};

/// Groups calculations into tasks of at most G members per analysis type.
///
/// Within a type the input order is preserved, so per type the result is
/// `ceil(count / G)` tasks and every calculation lands in exactly one task.
/// The final task sequence is then arranged by `ordering` (`seed` feeds the
/// RANDOM shuffle).
pub fn cluster(
    calcs: &[AtomicCalculation],
    granularity: &GranularityMap,
    ordering: OrderingPolicy,
    seed: u64,
) -> Result<Vec<Task>, CoreError> {
    granularity.validate()?;
    // open tasks: per type, the members gathered so far plus first-input position
    let mut open: BTreeMap<AnalysisType, (usize, Vec<&AtomicCalculation>)> = BTreeMap::new();
    let mut per_type_seq: BTreeMap<AnalysisType, u64> = BTreeMap::new();
    let mut built: Vec<(usize, Task)> = Vec::new();

    let close = |t: AnalysisType,
                 first_pos: usize,
                 members: &[&AtomicCalculation],
                 seq: &mut BTreeMap<AnalysisType, u64>,
                 built: &mut Vec<(usize, Task)>| {
        let k = seq.entry(t).or_insert(0);
        let task = Task::new(format!("{t}-T{:05}", *k), t, members);
        *k += 1;
        built.push((first_pos, task));
    };

    for (pos, c) in calcs.iter().enumerate() {
        let g = granularity
            .get(c.analysis_type)
            .ok_or_else(|| CoreError::MissingGranularity(c.analysis_type.to_string()))?;
        let entry = open
            .entry(c.analysis_type)
            .or_insert_with(|| (pos, Vec::new()));
        if entry.1.is_empty() {
            entry.0 = pos;
        }
        entry.1.push(c);
        if entry.1.len() as u32 >= g {
            let (first_pos, members) = std::mem::take(entry);
            close(
                c.analysis_type,
                first_pos,
                &members,
                &mut per_type_seq,
                &mut built,
            );
        }
    }
    for (t, (first_pos, members)) in open {
        if !members.is_empty() {
            close(t, first_pos, &members, &mut per_type_seq, &mut built);
        }
    }

    // natural order = order tasks were opened in the input stream
    built.sort_by_key(|(first_pos, _)| *first_pos);
    let mut tasks: Vec<Task> = built.into_iter().map(|(_, t)| t).collect();
    apply_ordering(&mut tasks, ordering, seed);
    Ok(tasks)
}

/// Reorders tasks in place according to the policy. Policies are pure
/// permutations: the task multiset is never altered.
pub fn apply_ordering(tasks: &mut [Task], ordering: OrderingPolicy, seed: u64) {
    match ordering {
        OrderingPolicy::Natural => {}
        OrderingPolicy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            tasks.shuffle(&mut rng);
        }
        OrderingPolicy::LongestFirst => {
            tasks.sort_by(|a, b| b.total_cost.total_cmp(&a.total_cost));
        }
        OrderingPolicy::ShortestFirst => {
            tasks.sort_by(|a, b| a.total_cost.total_cmp(&b.total_cost));
        }
    }
}

/// Scheduling rank of the task at queue position `index` under a policy.
/// Lower ranks are served first; the index breaks ties so ranks are total.
///
/// The master uses this to keep requeued tasks at their policy position.
pub fn queue_rank(
    ordering: OrderingPolicy,
    total_cost: f64,
    index: usize,
    shuffled: Option<&[u64]>,
) -> (u64, u64) {
    let idx = index as u64;
    match ordering {
        OrderingPolicy::Natural => (idx, idx),
        OrderingPolicy::Random => (shuffled.map(|s| s[index]).unwrap_or(idx), idx),
        // costs are positive, so the IEEE-754 bit pattern orders like the value
        OrderingPolicy::LongestFirst => (!total_cost.to_bits(), idx),
        OrderingPolicy::ShortestFirst => (total_cost.to_bits(), idx),
    }
}

/// Shuffled rank table for the RANDOM policy: `table[i]` is the scheduling
/// rank of the task at input position `i`.
pub fn random_rank_table(n: usize, seed: u64) -> Vec<u64> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut table = vec![0u64; n];
    for (rank, idx) in order.into_iter().enumerate() {
        table[idx] = rank as u64;
    }
    table
}

pub fn write_tasks<W: Write>(mut w: W, tasks: &[Task]) -> Result<(), CoreError> {
    for t in tasks {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_tasks<R: Read>(r: R) -> Result<Vec<Task>, CoreError> {
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

pub fn read_tasks_file(path: &Path) -> Result<Vec<Task>, CoreError> {
    read_tasks(std::fs::File::open(path)?)
}

pub fn write_tasks_file(path: &Path, tasks: &[Task]) -> Result<(), CoreError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tasks(&mut f, tasks)?;
    f.flush()?;
    Ok(())
}
