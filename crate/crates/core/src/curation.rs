//! Dataset-construction procedures: per-task-type perplexity thresholds and
//! on-distribution filtering, anti-repeat preference assembly,
//! most-different-pair selection, and consensus markup filtering.
//!
//! The filtering idea: a (request, better, worse) example is on-distribution
//! for a model when both responses have perplexity strictly below the
//! 95th-percentile perplexity of that model's own generations for the same
//! task type. Thresholds use a percentile rather than the maximum so random
//! unlikely generations do not inflate the bound.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    balance_by_task_type, CorpusError, PreferenceDataset, PreferenceExample, RequestRecord,
    TaskType, Vote,
};
use crate::ppo::derive_seed;
use crate::scalar::Scalar;
use crate::textscan::{response_distance, scan_response, RepeatConfig};
use crate::tinylm::{perplexity, sample, LmParams, SampleOptions};

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("empty value list")]
    EmptyValues,
    #[error("percentile {0} out of range (0, 1]")]
    InvalidPercentile(f64),
    #[error("need at least 2 responses, got {0}")]
    TooFewResponses(usize),
    #[error("duplicate id `{0}` across merged datasets")]
    DuplicateId(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed threshold table: {0}")]
    TableFormat(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Nearest-rank percentile: sort ascending, return the element at index
/// `ceil(p * n) - 1`. Always an observed value; `percentile(v, 1.0)` is the
/// maximum.
pub fn percentile<T: Scalar>(values: &[T], p: f64) -> Result<T, CurationError> {
    if values.is_empty() {
        return Err(CurationError::EmptyValues);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(CurationError::InvalidPercentile(p));
    }
    let mut sorted: Vec<T> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = (p * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

/// One per-task-type filtering bound with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    /// Perplexity bound; examples pass with strictly smaller perplexity.
    pub bound: f64,
    /// Number of sampled perplexities behind the bound.
    pub samples: usize,
}

/// Per-task-type perplexity bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    rows: BTreeMap<TaskType, ThresholdRow>,
    percentile: f64,
}

impl ThresholdTable {
    pub fn new(rows: BTreeMap<TaskType, ThresholdRow>, percentile: f64) -> Self {
        Self { rows, percentile }
    }

    /// A table that passes everything (bounds at +inf for all task types).
    pub fn unbounded() -> Self {
        let rows = TaskType::ALL
            .iter()
            .map(|&t| {
                (
                    t,
                    ThresholdRow {
                        bound: f64::INFINITY,
                        samples: 0,
                    },
                )
            })
            .collect();
        Self {
            rows,
            percentile: 1.0,
        }
    }

    pub fn bound(&self, task: TaskType) -> Option<f64> {
        self.rows.get(&task).map(|r| r.bound)
    }

    pub fn rows(&self) -> &BTreeMap<TaskType, ThresholdRow> {
        &self.rows
    }

    pub fn percentile(&self) -> f64 {
        self.percentile
    }

    /// CSV export: `task_type,bound,samples,percentile`. Bounds use the
    /// shortest round-trip float representation, so a written table reloads
    /// bit-exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_type,bound,samples,percentile\n");
        for (task, row) in &self.rows {
            out.push_str(&format!(
                "{task},{},{},{}\n",
                row.bound, row.samples, self.percentile
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), CurationError> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        w.write_all(self.to_csv().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, CurationError> {
        let reader = BufReader::new(File::open(path.as_ref())?);
        let mut rows = BTreeMap::new();
        let mut percentile = 0.95;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if idx == 0 {
                if line != "task_type,bound,samples,percentile" {
                    return Err(CurationError::TableFormat(format!(
                        "unexpected header `{line}`"
                    )));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(CurationError::TableFormat(format!(
                    "line {}: expected 4 fields",
                    idx + 1
                )));
            }
            let task: TaskType = fields[0]
                .parse()
                .map_err(|e: CorpusError| CurationError::TableFormat(e.to_string()))?;
            let bound: f64 = fields[1]
                .parse()
                .map_err(|e| CurationError::TableFormat(format!("line {}: {e}", idx + 1)))?;
            let samples: usize = fields[2]
                .parse()
                .map_err(|e| CurationError::TableFormat(format!("line {}: {e}", idx + 1)))?;
            percentile = fields[3]
                .parse()
                .map_err(|e| CurationError::TableFormat(format!("line {}: {e}", idx + 1)))?;
            rows.insert(task, ThresholdRow { bound, samples });
        }
        Ok(Self { rows, percentile })
    }
}

/// Generates `samples_per_request` responses per request with the model,
/// computes each response's perplexity, and sets the per-task-type bound at
/// the requested percentile of the pooled perplexities. Task types with no
/// requests (or with only empty generations, whose perplexity is undefined)
/// are omitted from the table. Deterministic for a fixed seed.
pub fn compute_thresholds<T: Scalar>(
    lm: &LmParams<T>,
    requests: &[RequestRecord],
    samples_per_request: usize,
    percentile_p: f64,
    options: SampleOptions,
    seed: u64,
) -> Result<ThresholdTable, CurationError> {
    if !(percentile_p > 0.0 && percentile_p <= 1.0) {
        return Err(CurationError::InvalidPercentile(percentile_p));
    }
    let mut by_task: BTreeMap<TaskType, Vec<f64>> = BTreeMap::new();
    for (req_idx, req) in requests.iter().enumerate() {
        let pool = by_task.entry(req.task_type).or_default();
        for s in 0..samples_per_request {
            let sample_seed = derive_seed(seed, (req_idx * samples_per_request + s) as u64);
            let generated = sample(lm, &req.request, options, sample_seed);
            if generated.text.is_empty() {
                continue;
            }
            let ppl = perplexity(lm, &req.request, &generated.text)
                .expect("non-empty response")
                .to_f64_lossy();
            pool.push(ppl);
        }
    }
    let mut rows = BTreeMap::new();
    for (task, ppls) in by_task {
        if ppls.is_empty() {
            continue;
        }
        let bound = percentile(&ppls, percentile_p)?;
        rows.insert(
            task,
            ThresholdRow {
                bound,
                samples: ppls.len(),
            },
        );
    }
    Ok(ThresholdTable {
        rows,
        percentile: percentile_p,
    })
}

/// Per-task-type in/kept counts of a filtering pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterStats {
    rows: BTreeMap<TaskType, (usize, usize)>,
    /// Examples dropped because their task type had no threshold.
    pub uncovered: usize,
}

impl FilterStats {
    pub fn row(&self, task: TaskType) -> (usize, usize) {
        self.rows.get(&task).copied().unwrap_or((0, 0))
    }

    pub fn total_in(&self) -> usize {
        self.rows.values().map(|(i, _)| i).sum()
    }

    pub fn total_kept(&self) -> usize {
        self.rows.values().map(|(_, k)| k).sum()
    }

    pub fn kept_fraction(&self) -> f64 {
        let total = self.total_in();
        if total == 0 {
            0.0
        } else {
            self.total_kept() as f64 / total as f64
        }
    }

    /// CSV export: `task_type,examples_in,examples_kept` plus an overall row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_type,examples_in,examples_kept\n");
        for (task, (i, k)) in &self.rows {
            out.push_str(&format!("{task},{i},{k}\n"));
        }
        out.push_str(&format!("overall,{},{}\n", self.total_in(), self.total_kept()));
        out
    }
}

/// Keeps the examples whose both responses have perplexity strictly below
/// the task type's bound. Examples of uncovered task types are dropped and
/// counted. Input order is preserved.
pub fn filter_by_perplexity<T: Scalar>(
    lm: &LmParams<T>,
    dataset: &PreferenceDataset,
    thresholds: &ThresholdTable,
) -> (PreferenceDataset, FilterStats) {
    let mut stats = FilterStats::default();
    let mut kept = Vec::new();
    for ex in dataset.iter() {
        let Some(bound) = thresholds.bound(ex.task_type) else {
            stats.uncovered += 1;
            continue;
        };
        let row = stats.rows.entry(ex.task_type).or_insert((0, 0));
        row.0 += 1;
        let ppl_better = perplexity(lm, &ex.request, &ex.better)
            .expect("non-empty response")
            .to_f64_lossy();
        let ppl_worse = perplexity(lm, &ex.request, &ex.worse)
            .expect("non-empty response")
            .to_f64_lossy();
        if ppl_better < bound && ppl_worse < bound {
            row.1 += 1;
            kept.push(ex.clone());
        }
    }
    (
        PreferenceDataset::new(kept).expect("subset of a valid dataset"),
        stats,
    )
}

/// Merges an own dataset with an external one (deduplicating exact
/// (request, better, worse) triples, first occurrence wins), filters the
/// union by perplexity, then balances task-type subset sizes to within
/// `max_ratio`. Ids must stay unique across the merge.
pub fn build_filtered_pref_dataset<T: Scalar>(
    lm: &LmParams<T>,
    own: &PreferenceDataset,
    external: &PreferenceDataset,
    thresholds: &ThresholdTable,
    max_ratio: f64,
    seed: u64,
) -> Result<(PreferenceDataset, FilterStats), CurationError> {
    let mut seen_triples: HashSet<(String, String, String)> = HashSet::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut merged = Vec::new();
    for ex in own.iter().chain(external.iter()) {
        let triple = (ex.request.clone(), ex.better.clone(), ex.worse.clone());
        if !seen_triples.insert(triple) {
            continue;
        }
        if !seen_ids.insert(ex.id.clone()) {
            return Err(CurationError::DuplicateId(ex.id.clone()));
        }
        merged.push(ex.clone());
    }
    let merged = PreferenceDataset::new(merged).expect("validated above");
    let (filtered, stats) = filter_by_perplexity(lm, &merged, thresholds);
    let balanced = balance_by_task_type(&filtered, max_ratio, seed)?;
    Ok((balanced, stats))
}

/// One generated response in an archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveResponse {
    pub text: String,
    pub hit_cap: bool,
}

/// A request with several archived generations.
/// JSONL record: `{"id", "task_type", "request", "responses": [{"text", "hit_cap"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub id: String,
    pub task_type: TaskType,
    pub request: String,
    pub responses: Vec<ArchiveResponse>,
}

/// Reads archive entries from JSONL with positioned errors.
pub fn load_archive_jsonl(path: impl AsRef<Path>) -> Result<Vec<ArchiveEntry>, CorpusError> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let text = line?;
        let entry: ArchiveEntry = serde_json::from_str(&text).map_err(|e| CorpusError::Schema {
            line: idx + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Writes archive entries as JSONL.
pub fn write_archive_jsonl(
    entries: &[ArchiveEntry],
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for entry in entries {
        serde_json::to_writer(&mut w, entry).map_err(|e| CorpusError::Schema {
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Builds an anti-repeat preference dataset from an archive of generations:
/// for every request with at least one clean and one pathological response
/// (per the scan config), pairs a clean response as better with a
/// pathological one as worse — the first of each in archive order, or every
/// clean x pathological combination with `all_pairs` — then keeps only
/// on-distribution pairs via the perplexity filter.
pub fn build_antirepeat_dataset<T: Scalar>(
    archive: &[ArchiveEntry],
    scan_config: &RepeatConfig,
    lm: &LmParams<T>,
    thresholds: &ThresholdTable,
    all_pairs: bool,
) -> (PreferenceDataset, FilterStats) {
    let mut examples = Vec::new();
    for entry in archive {
        let mut clean = Vec::new();
        let mut pathological = Vec::new();
        for resp in &entry.responses {
            if resp.text.is_empty() {
                continue;
            }
            if scan_response(&resp.text, resp.hit_cap, scan_config).is_pathological() {
                pathological.push(&resp.text);
            } else {
                clean.push(&resp.text);
            }
        }
        if clean.is_empty() || pathological.is_empty() {
            continue;
        }
        let pairs: Vec<(&String, &String)> = if all_pairs {
            clean
                .iter()
                .flat_map(|c| pathological.iter().map(move |p| (*c, *p)))
                .collect()
        } else {
            vec![(clean[0], pathological[0])]
        };
        for (i, (better, worse)) in pairs.into_iter().enumerate() {
            if better == worse {
                continue;
            }
            examples.push(PreferenceExample {
                id: format!("{}-ar{}", entry.id, i),
                task_type: entry.task_type,
                request: entry.request.clone(),
                better: better.clone(),
                worse: worse.clone(),
                source: "antirepeat".into(),
                votes: None,
            });
        }
    }
    let dataset = PreferenceDataset::new(examples).expect("constructed examples are valid");
    filter_by_perplexity(lm, &dataset, thresholds)
}

/// Indices of the two most different responses by trigram distance, ties
/// broken toward the lexicographically smallest index pair.
pub fn select_most_different_pair(responses: &[String]) -> Result<(usize, usize), CurationError> {
    if responses.len() < 2 {
        return Err(CurationError::TooFewResponses(responses.len()));
    }
    let mut best = (0, 1);
    let mut best_distance = f64::NEG_INFINITY;
    for i in 0..responses.len() {
        for j in (i + 1)..responses.len() {
            let d = response_distance(&responses[i], &responses[j]);
            if d > best_distance {
                best_distance = d;
                best = (i, j);
            }
        }
    }
    Ok(best)
}

/// Keeps examples with exactly `required_overlap` votes that all agree, and
/// writes the agreed choice into the better/worse orientation (a unanimous
/// "worse" vote swaps the pair). Votes are consumed: kept examples carry no
/// votes, since the consensus has been applied.
pub fn consensus_filter(dataset: &PreferenceDataset, required_overlap: usize) -> PreferenceDataset {
    let mut kept = Vec::new();
    for ex in dataset.iter() {
        let Some(votes) = &ex.votes else { continue };
        if votes.len() != required_overlap {
            continue;
        }
        let first = votes[0];
        if !votes.iter().all(|&v| v == first) {
            continue;
        }
        let mut out = ex.clone();
        out.votes = None;
        if first == Vote::Worse {
            std::mem::swap(&mut out.better, &mut out.worse);
        }
        kept.push(out);
    }
    PreferenceDataset::new(kept).expect("subset of a valid dataset")
}

/// Recomputes both perplexities of every example and checks them against the
/// table (the soundness oracle used by the acceptance suite).
pub fn verify_filter_soundness<T: Scalar>(
    lm: &LmParams<T>,
    dataset: &PreferenceDataset,
    thresholds: &ThresholdTable,
) -> bool {
    dataset.iter().all(|ex| {
        thresholds.bound(ex.task_type).is_some_and(|bound| {
            let pb = perplexity(lm, &ex.request, &ex.better)
                .expect("non-empty response")
                .to_f64_lossy();
            let pw = perplexity(lm, &ex.request, &ex.worse)
                .expect("non-empty response")
                .to_f64_lossy();
            pb < bound && pw < bound
        })
    })
}
