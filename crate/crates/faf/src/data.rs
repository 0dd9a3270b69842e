//! Data pipeline: long-format CSV ingestion, task partitioning, z-score
//! normalization fitted on training tasks only, sliding-window pair
//! construction, and support/query splitting.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FafError, Result};
use crate::numerics::Tensor;

/// One entity's univariate history, in temporal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSeries {
    pub task_id: String,
    pub values: Vec<f64>,
    pub origin_dataset: String,
}

/// Pooled training-set statistics for z-score normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub epsilon: f64,
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats { mu: 0.0, sigma: 1.0, epsilon: 0.0 }
    }
}

/// One (input window, target window) training pair.
#[derive(Debug, Clone)]
pub struct WindowPair {
    pub input: Tensor,
    pub target: Tensor,
    pub task_id: String,
    pub start_index: usize,
}

/// Disjoint train/validation/test task-id lists covering every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_tasks: Vec<String>,
    pub val_tasks: Vec<String>,
    pub test_tasks: Vec<String>,
}

/// Column names for long-format CSV input.
#[derive(Debug, Clone)]
pub struct CsvColumns {
    pub task_id: String,
    pub time_index: String,
    pub value: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        CsvColumns {
            task_id: "task_id".into(),
            time_index: "time_index".into(),
            value: "value".into(),
        }
    }
}

/// Reads a long-format CSV (`task_id,time_index,value`) into one
/// `TaskSeries` per distinct task id, values in time order. Input row
/// order does not matter. Duplicate `(task_id, time_index)` pairs are
/// rejected with the offending row number.
pub fn load_csv(path: impl AsRef<Path>, columns: &CsvColumns) -> Result<Vec<TaskSeries>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| FafError::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| FafError::Data(format!("bad header in {}: {e}", path.display())))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FafError::Data(format!("missing column `{name}` in {}", path.display())))
    };
    let task_col = col(&columns.task_id)?;
    let time_col = col(&columns.time_index)?;
    let value_col = col(&columns.value)?;

    let origin = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    // task_id -> time_index -> (value, first row number seen)
    let mut tasks: BTreeMap<String, BTreeMap<i64, (f64, usize)>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let record = record.map_err(|e| FafError::Data(format!("row {row}: {e}")))?;
        let task_id = record
            .get(task_col)
            .ok_or_else(|| FafError::Data(format!("row {row}: missing task_id field")))?
            .to_string();
        let time: i64 = record
            .get(time_col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| FafError::Data(format!("row {row}: non-integer time_index")))?;
        let value: f64 = record
            .get(value_col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| FafError::Data(format!("row {row}: non-numeric value")))?;
        if !value.is_finite() {
            return Err(FafError::Data(format!("row {row}: non-finite value")));
        }
        let entry = tasks.entry(task_id.clone()).or_default();
        if let Some((_, prev_row)) = entry.get(&time) {
            return Err(FafError::Data(format!(
                "row {row}: duplicate time_index {time} for task `{task_id}` (first seen at row {prev_row})"
            )));
        }
        entry.insert(time, (value, row));
    }

    if tasks.is_empty() {
        return Err(FafError::Data(format!("{}: no data rows", path.display())));
    }

    Ok(tasks
        .into_iter()
        .map(|(task_id, points)| TaskSeries {
            task_id,
            values: points.into_values().map(|(v, _)| v).collect(),
            origin_dataset: origin.clone(),
        })
        .collect())
}

/// 80/10/10 task split: train and validation counts use round-half-even
/// on 0.8n and 0.1n, the remainder goes to test. Assignment order is a
/// seeded shuffle of the task ids.
pub fn partition_tasks(task_ids: &[String], seed: u64) -> Result<SplitSpec> {
    let n = task_ids.len();
    if n < 3 {
        return Err(FafError::Data(format!(
            "need at least 3 tasks to populate train/val/test splits, got {n}"
        )));
    }
    let n_train = (0.8 * n as f64).round_ties_even() as usize;
    let n_val = (0.1 * n as f64).round_ties_even() as usize;
    let n_val = n_val.max(1);
    if n_train + n_val >= n {
        return Err(FafError::Data(format!(
            "split rule leaves no test tasks for n = {n}"
        )));
    }

    let mut shuffled: Vec<String> = task_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let val_start = n_train;
    let test_start = n_train + n_val;
    Ok(SplitSpec {
        train_tasks: shuffled[..val_start].to_vec(),
        val_tasks: shuffled[val_start..test_start].to_vec(),
        test_tasks: shuffled[test_start..].to_vec(),
    })
}

/// Mean and population standard deviation pooled over all observations
/// of the given (training) tasks.
pub fn fit_norm(train_series: &[&TaskSeries]) -> Result<NormStats> {
    let n: usize = train_series.iter().map(|s| s.values.len()).sum();
    if n == 0 {
        return Err(FafError::Data("fit_norm: no observations".into()));
    }
    let sum: f64 = train_series.iter().flat_map(|s| &s.values).sum();
    let mu = sum / n as f64;
    let ss: f64 = train_series
        .iter()
        .flat_map(|s| &s.values)
        .map(|v| (v - mu) * (v - mu))
        .sum();
    let sigma = (ss / n as f64).sqrt();
    Ok(NormStats { mu, sigma, epsilon: 1e-8 })
}

pub fn apply_norm(values: &[f64], stats: &NormStats) -> Vec<f64> {
    values.iter().map(|x| (x - stats.mu) / (stats.sigma + stats.epsilon)).collect()
}

pub fn inverse_norm(values: &[f64], stats: &NormStats) -> Vec<f64> {
    values.iter().map(|x| x * (stats.sigma + stats.epsilon) + stats.mu).collect()
}

/// Contiguous sliding windows: pair `i` has input `values[i .. i+l_in)`
/// and target `values[i+l_in .. i+l_in+l_out)`.
pub fn make_windows(
    task_id: &str,
    values: &[f64],
    l_in: usize,
    l_out: usize,
) -> Result<Vec<WindowPair>> {
    let need = l_in + l_out;
    if values.len() < need {
        return Err(FafError::Data(format!(
            "series `{task_id}` has {} observations; sliding windows need at least {need} (input {l_in} + target {l_out})",
            values.len()
        )));
    }
    Ok((0..=values.len() - need)
        .map(|i| WindowPair {
            input: Tensor::vector(values[i..i + l_in].to_vec()),
            target: Tensor::vector(values[i + l_in..i + need].to_vec()),
            task_id: task_id.to_string(),
            start_index: i,
        })
        .collect())
}

/// First `support_len` observations form the support segment, the next
/// `query_len` the query segment. Anything beyond is unused (test-task
/// truncation rule); the count of unused points is returned.
pub fn split_support_query(
    values: &[f64],
    support_len: usize,
    query_len: usize,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let need = support_len + query_len;
    if values.len() < need {
        return Err(FafError::Data(format!(
            "series has {} observations; support/query split needs at least {need}",
            values.len()
        )));
    }
    let support = values[..support_len].to_vec();
    let query = values[support_len..need].to_vec();
    Ok((support, query, values.len() - need))
}
