//! Preference-dataset data model, JSONL persistence, statistics, splitting,
//! and balancing.
//!
//! A dataset is an ordered collection of [`PreferenceExample`]s: one request
//! with a (better, worse) response pair, a task type, and optional per-assessor
//! votes. All length measures in this module are character counts of the
//! response texts, which keeps them tokenizer-independent.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The ten request categories used throughout the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Brainstorm,
    Chat,
    ClosedQa,
    Generation,
    OpenQa,
    Summarization,
    Rewrite,
    Translation,
    Classification,
    Extract,
}

impl TaskType {
    /// All task types, in canonical order.
    pub const ALL: [TaskType; 10] = [
        TaskType::Brainstorm,
        TaskType::Chat,
        TaskType::ClosedQa,
        TaskType::Generation,
        TaskType::OpenQa,
        TaskType::Summarization,
        TaskType::Rewrite,
        TaskType::Translation,
        TaskType::Classification,
        TaskType::Extract,
    ];

    /// Canonical serialized name (the same string used in JSONL and CSV).
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskType::Brainstorm => "brainstorm",
            TaskType::Chat => "chat",
            TaskType::ClosedQa => "closed_qa",
            TaskType::Generation => "generation",
            TaskType::OpenQa => "open_qa",
            TaskType::Summarization => "summarization",
            TaskType::Rewrite => "rewrite",
            TaskType::Translation => "translation",
            TaskType::Classification => "classification",
            TaskType::Extract => "extract",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| CorpusError::UnknownTaskType(s.to_string()))
    }
}

/// One assessor's choice in a preference example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    Better,
    Worse,
}

/// One request with a (better, worse) response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub id: String,
    pub task_type: TaskType,
    pub request: String,
    pub better: String,
    pub worse: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<Vec<Vote>>,
}

impl PreferenceExample {
    /// Checks the per-example invariants: non-empty texts and `better != worse`.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("field `id` is empty".into());
        }
        if self.request.is_empty() {
            return Err("field `request` is empty".into());
        }
        if self.better.is_empty() {
            return Err("field `better` is empty".into());
        }
        if self.worse.is_empty() {
            return Err("field `worse` is empty".into());
        }
        if self.better == self.worse {
            return Err("`better` and `worse` are identical".into());
        }
        Ok(())
    }
}

/// Errors raised by dataset loading and the corpus operations.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("unknown task_type `{0}`")]
    UnknownTaskType(String),
    #[error("invalid fractions: {0}")]
    InvalidFractions(String),
    #[error("invalid max_ratio {0}: must be >= 1")]
    InvalidMaxRatio(f64),
}

/// Ordered, id-unique collection of preference examples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PreferenceDataset {
    examples: Vec<PreferenceExample>,
}

impl PreferenceDataset {
    /// Builds a dataset, enforcing per-example invariants and id uniqueness.
    /// Reported line numbers are 1-based positions in `examples`.
    pub fn new(examples: Vec<PreferenceExample>) -> Result<Self, CorpusError> {
        let mut ids = HashSet::new();
        for (i, ex) in examples.iter().enumerate() {
            let line = i + 1;
            ex.validate()
                .map_err(|message| CorpusError::Schema { line, message })?;
            if !ids.insert(ex.id.clone()) {
                return Err(CorpusError::DuplicateId {
                    line,
                    id: ex.id.clone(),
                });
            }
        }
        Ok(Self { examples })
    }

    pub fn examples(&self) -> &[PreferenceExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PreferenceExample> {
        self.examples.iter()
    }

    /// Sub-dataset keeping the examples at `keep` (input order preserved).
    /// `keep` must contain valid, distinct indices.
    fn subset(&self, keep: &[usize]) -> PreferenceDataset {
        let mut sorted: Vec<usize> = keep.to_vec();
        sorted.sort_unstable();
        PreferenceDataset {
            examples: sorted.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    /// Examples grouped by task type, as indices in input order.
    fn indices_by_task(&self) -> BTreeMap<TaskType, Vec<usize>> {
        let mut map: BTreeMap<TaskType, Vec<usize>> = BTreeMap::new();
        for (i, ex) in self.examples.iter().enumerate() {
            map.entry(ex.task_type).or_default().push(i);
        }
        map
    }
}

/// Reads a dataset from JSONL. Malformed lines produce a positioned error;
/// blank lines are rejected (one record per line, no gaps).
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<PreferenceDataset, CorpusError> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        let ex: PreferenceExample =
            serde_json::from_str(&text).map_err(|e| CorpusError::Schema {
                line: line_no,
                message: e.to_string(),
            })?;
        ex.validate().map_err(|message| CorpusError::Schema {
            line: line_no,
            message,
        })?;
        if !ids.insert(ex.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: ex.id,
            });
        }
        examples.push(ex);
    }
    Ok(PreferenceDataset { examples })
}

/// Writes a dataset as JSONL, one record per line, fields in canonical order.
/// Output is byte-stable for a fixed input.
pub fn write_jsonl(dataset: &PreferenceDataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for ex in dataset.iter() {
        serde_json::to_writer(&mut w, ex).map_err(|e| CorpusError::Schema {
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Per-task-type counts of better-longer vs better-shorter pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LengthBiasRow {
    pub count_better_longer: usize,
    pub count_better_shorter: usize,
    pub count_equal: usize,
}

impl LengthBiasRow {
    /// Fraction of unequal-length pairs where the better response is longer.
    /// `None` when there are no unequal-length pairs.
    pub fn percent_better_longer(&self) -> Option<f64> {
        let denom = self.count_better_longer + self.count_better_shorter;
        if denom == 0 {
            None
        } else {
            Some(self.count_better_longer as f64 / denom as f64)
        }
    }

    pub fn total(&self) -> usize {
        self.count_better_longer + self.count_better_shorter + self.count_equal
    }
}

/// Length-bias statistics for a dataset, keyed by task type.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LengthBiasStats {
    rows: BTreeMap<TaskType, LengthBiasRow>,
}

impl LengthBiasStats {
    pub fn row(&self, task: TaskType) -> LengthBiasRow {
        self.rows.get(&task).copied().unwrap_or_default()
    }

    pub fn rows(&self) -> &BTreeMap<TaskType, LengthBiasRow> {
        &self.rows
    }

    /// CSV export: `task_type,better_longer,better_shorter,equal,percent_better_longer`.
    /// All ten task types appear in canonical order; the percent cell is empty
    /// when no unequal-length pairs exist for the task type.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "task_type,better_longer,better_shorter,equal,percent_better_longer\n",
        );
        for task in TaskType::ALL {
            let row = self.row(task);
            let pct = row
                .percent_better_longer()
                .map(|p| format!("{p:.4}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                task, row.count_better_longer, row.count_better_shorter, row.count_equal, pct
            ));
        }
        out
    }
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Whether the better response of `ex` is longer, shorter, or equal in
/// character count to the worse response.
fn length_class(ex: &PreferenceExample) -> std::cmp::Ordering {
    char_len(&ex.better).cmp(&char_len(&ex.worse))
}

/// Per-task-type tallies of better-longer / better-shorter / equal-length
/// pairs, by character count of the response texts.
pub fn length_bias_stats(dataset: &PreferenceDataset) -> LengthBiasStats {
    let mut stats = LengthBiasStats::default();
    for ex in dataset.iter() {
        let row = stats.rows.entry(ex.task_type).or_default();
        match length_class(ex) {
            std::cmp::Ordering::Greater => row.count_better_longer += 1,
            std::cmp::Ordering::Less => row.count_better_shorter += 1,
            std::cmp::Ordering::Equal => row.count_equal += 1,
        }
    }
    stats
}

/// Shuffles `candidates` with `rng` and keeps the first `n`.
fn downsample(candidates: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = candidates.to_vec();
    pool.shuffle(rng);
    pool.truncate(n);
    pool
}

/// Per task type, downsamples the majority of {better-longer, better-shorter}
/// to the minority size. Equal-length examples pass through unchanged. Output
/// preserves input order and is deterministic for a fixed seed.
pub fn balance_by_length(dataset: &PreferenceDataset, seed: u64) -> PreferenceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = Vec::new();
    for (_, indices) in dataset.indices_by_task() {
        let mut longer = Vec::new();
        let mut shorter = Vec::new();
        for &i in &indices {
            match length_class(&dataset.examples[i]) {
                std::cmp::Ordering::Greater => longer.push(i),
                std::cmp::Ordering::Less => shorter.push(i),
                std::cmp::Ordering::Equal => keep.push(i),
            }
        }
        let n = longer.len().min(shorter.len());
        keep.extend(downsample(&longer, n, &mut rng));
        keep.extend(downsample(&shorter, n, &mut rng));
    }
    dataset.subset(&keep)
}

/// Downsamples oversized task-type subsets so that, among non-empty subsets,
/// `max size / min size <= max_ratio`. The cap is
/// `floor(max_ratio * smallest non-empty subset size)`; no subset grows.
pub fn balance_by_task_type(
    dataset: &PreferenceDataset,
    max_ratio: f64,
    seed: u64,
) -> Result<PreferenceDataset, CorpusError> {
    if !(max_ratio >= 1.0) {
        return Err(CorpusError::InvalidMaxRatio(max_ratio));
    }
    let by_task = dataset.indices_by_task();
    let min_size = by_task.values().map(Vec::len).filter(|&n| n > 0).min();
    let Some(min_size) = min_size else {
        return Ok(PreferenceDataset::default());
    };
    let cap = ((max_ratio * min_size as f64).floor() as usize).max(min_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for (_, indices) in by_task {
        if indices.len() > cap {
            keep.extend(downsample(&indices, cap, &mut rng));
        } else {
            keep.extend(indices);
        }
    }
    Ok(dataset.subset(&keep))
}

/// Splits a dataset into parts with the given fractions, stratified by task
/// type. Partitions are disjoint, cover the input, and are deterministic for a
/// fixed seed. Per task type, part sizes use largest-remainder allocation, so
/// each differs from exact proportionality by less than 1.
pub fn split(
    dataset: &PreferenceDataset,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<PreferenceDataset>, CorpusError> {
    if fractions.is_empty() {
        return Err(CorpusError::InvalidFractions("no fractions given".into()));
    }
    if fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(CorpusError::InvalidFractions(
            "fractions must be positive".into(),
        ));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidFractions(format!(
            "fractions sum to {total}, expected 1"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
    for (_, indices) in dataset.indices_by_task() {
        let mut pool = indices;
        pool.shuffle(&mut rng);
        let sizes = largest_remainder(pool.len(), fractions);
        let mut offset = 0;
        for (part, &size) in parts.iter_mut().zip(&sizes) {
            part.extend_from_slice(&pool[offset..offset + size]);
            offset += size;
        }
    }
    Ok(parts.iter().map(|keep| dataset.subset(keep)).collect())
}

/// Allocates `n` items to parts proportionally to `fractions`, distributing
/// the remainder to the largest fractional parts (ties to the lower index).
fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut sizes: Vec<usize> = Vec::with_capacity(fractions.len());
    let mut rema: Vec<(usize, f64)> = Vec::with_capacity(fractions.len());
    for (j, &f) in fractions.iter().enumerate() {
        let exact = f * n as f64;
        let base = exact.floor() as usize;
        sizes.push(base);
        rema.push((j, exact - base as f64));
    }
    let assigned: usize = sizes.iter().sum();
    rema.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..(n - assigned) {
        sizes[rema[k].0] += 1;
    }
    sizes
}

/// A bare request (no responses), used for rollout pools and threshold
/// estimation. JSONL record: `{"id", "task_type", "request"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: String,
    pub task_type: TaskType,
    pub request: String,
}

/// Reads request records from JSONL with positioned errors.
pub fn load_requests_jsonl(path: impl AsRef<Path>) -> Result<Vec<RequestRecord>, CorpusError> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        let rec: RequestRecord = serde_json::from_str(&text).map_err(|e| CorpusError::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// Writes request records as JSONL.
pub fn write_requests_jsonl(
    records: &[RequestRecord],
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec).map_err(|e| CorpusError::Schema {
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
