//! Preference Model: a scalar head over the tiny LM, pairwise ranking
//! training, slice-based accuracy evaluation, and markup auditing.
//!
//! The head reads the hidden state at the terminal EOT position of
//! `BOS + request + SEP + response + EOT` and maps it to one scalar score.
//! Scores are only ever compared *within* a request: the training loss, the
//! ranking metric, and the audit all consume the difference
//! `r(x, better) - r(x, worse)` and no operation here ranks raw scores across
//! requests — scores from different requests live on different scales.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PreferenceDataset, PreferenceExample, TaskType};
use crate::linalg::dot;
use crate::scalar::{neg_log_sigmoid, sigmoid, Scalar};
use crate::tinylm::vocab::{full_sequence, Token};
use crate::tinylm::{
    adam_update_slices, decode_f64s, encode_f64s, params_from_json, params_to_json, AdamHyper,
    AdamState, CheckpointError, Gradients, LmParams,
};

pub const PM_FORMAT: &str = "pm-checkpoint";

/// Preference-model parameters: an LM base plus a scalar head.
#[derive(Debug, Clone, PartialEq)]
pub struct PmParams<T> {
    pub base: LmParams<T>,
    /// `hidden_dim` weights of the scalar head.
    pub head_weights: Vec<T>,
    pub head_bias: T,
}

impl<T: Scalar> PmParams<T> {
    /// Wraps an LM base with a seeded uniform `(-1/sqrt(h), 1/sqrt(h))` head.
    pub fn init(base: LmParams<T>, seed: u64) -> Self {
        let h = base.config.hidden_dim;
        let s = 1.0 / (h as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head_weights = (0..h)
            .map(|_| T::from_f64_lossy(rng.gen_range(-s..s)))
            .collect();
        Self {
            base,
            head_weights,
            head_bias: T::from_f64_lossy(rng.gen_range(-s..s)),
        }
    }

    fn hidden_at_eot(&self, tokens: &[Token]) -> Vec<T> {
        let mut x = vec![T::zero(); self.base.config.input_dim()];
        self.base.hidden_at(tokens, tokens.len() - 1, &mut x)
    }
}

/// Scalar preference score of `response` for `request`, read at the EOT
/// position. Scores for different requests are not comparable.
pub fn pm_score<T: Scalar>(pm: &PmParams<T>, request: &str, response: &str) -> T {
    pm_score_tokens(pm, &full_sequence(request, response))
}

/// Score read at the terminal position of a pre-tokenized full sequence.
/// Rollout scoring uses this so raw sampled bytes never round-trip through
/// lossy text decoding.
pub fn pm_score_tokens<T: Scalar>(pm: &PmParams<T>, tokens: &[Token]) -> T {
    let hidden = pm.hidden_at_eot(tokens);
    dot(&pm.head_weights, &hidden) + pm.head_bias
}

/// Pairwise ranking loss `-log sigmoid(r(x, better) - r(x, worse))` for one
/// example. Exactly `ln 2` at equal scores; finite for any score gap.
pub fn pm_pair_loss<T: Scalar>(pm: &PmParams<T>, example: &PreferenceExample) -> T {
    let r_b = pm_score(pm, &example.request, &example.better);
    let r_w = pm_score(pm, &example.request, &example.worse);
    neg_log_sigmoid(r_b - r_w)
}

/// Gradients for a preference model, shape-congruent with [`PmParams`].
#[derive(Debug, Clone)]
pub struct PmGradients<T> {
    pub base: Gradients<T>,
    pub head_weights: Vec<T>,
    pub head_bias: T,
}

impl<T: Scalar> PmGradients<T> {
    pub fn zeros(pm: &PmParams<T>) -> Self {
        Self {
            base: Gradients::zeros(&pm.base.config),
            head_weights: vec![T::zero(); pm.head_weights.len()],
            head_bias: T::zero(),
        }
    }
}

/// Adds `dscore * d score / d params` for one (request, response) to `grads`
/// and returns the score. With `head_only`, base gradients are skipped.
fn accumulate_score_grad<T: Scalar>(
    pm: &PmParams<T>,
    request: &str,
    response: &str,
    dscore: T,
    grads: &mut PmGradients<T>,
    head_only: bool,
) -> T {
    let tokens = full_sequence(request, response);
    let pos = tokens.len() - 1;
    let config = &pm.base.config;
    let mut x = vec![T::zero(); config.input_dim()];
    let hidden = pm.base.hidden_at(&tokens, pos, &mut x);
    let score = dot(&pm.head_weights, &hidden) + pm.head_bias;

    crate::linalg::axpy(dscore, &hidden, &mut grads.head_weights);
    grads.head_bias += dscore;

    if !head_only {
        // d score / d hidden = head_weights; back through tanh into the base.
        let mut dpre = vec![T::zero(); hidden.len()];
        for ((dp, &w), &h) in dpre.iter_mut().zip(&pm.head_weights).zip(&hidden) {
            *dp = dscore * w * (T::one() - h * h);
        }
        crate::linalg::axpy(T::one(), &dpre, &mut grads.base.b_in);
        grads.base.w_in.outer_accum(&x, &dpre);
        let mut dx = vec![T::zero(); x.len()];
        pm.base.w_in.mat_vec_accum(&dpre, &mut dx);
        let (k, d) = (config.context_window, config.embed_dim);
        for slot in 0..k {
            let p = pos as isize - k as isize + slot as isize;
            let tok = if p < 0 {
                crate::tinylm::vocab::PAD
            } else {
                tokens[p as usize]
            };
            let row = grads.base.embedding.row_mut(tok as usize);
            crate::linalg::axpy(T::one(), &dx[slot * d..(slot + 1) * d], row);
        }
    }
    score
}

fn pm_loss_and_grad_impl<T: Scalar>(
    pm: &PmParams<T>,
    batch: &[PreferenceExample],
    head_only: bool,
) -> (T, PmGradients<T>) {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let mut grads = PmGradients::zeros(pm);
    let inv_batch = T::one() / T::from_f64_lossy(batch.len() as f64);
    let mut loss = T::zero();
    for ex in batch {
        let r_b = pm_score(pm, &ex.request, &ex.better);
        let r_w = pm_score(pm, &ex.request, &ex.worse);
        let delta = r_b - r_w;
        loss += neg_log_sigmoid(delta) * inv_batch;
        // d(-log sigmoid(delta))/d delta = -sigmoid(-delta)
        let ddelta = -sigmoid(-delta) * inv_batch;
        accumulate_score_grad(pm, &ex.request, &ex.better, ddelta, &mut grads, head_only);
        accumulate_score_grad(pm, &ex.request, &ex.worse, -ddelta, &mut grads, head_only);
    }
    (loss, grads)
}

/// Mean pairwise loss over a batch with its exact gradient. The log-sigmoid
/// is computed through the stable branch, so gradients stay finite for score
/// gaps up to at least 1e3 in either direction.
pub fn pm_loss_and_grad<T: Scalar>(
    pm: &PmParams<T>,
    batch: &[PreferenceExample],
) -> (T, PmGradients<T>) {
    pm_loss_and_grad_impl(pm, batch, false)
}

/// Training settings for [`train_pm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Optimizer steps during which only the head is trained. Training the
    /// whole model while the freshly added head is still untrained degrades
    /// the base, so the head gets a warmup phase first.
    pub head_only_warmup_steps: usize,
}

impl Default for PmTrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            head_only_warmup_steps: 50,
        }
    }
}

impl PmTrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr > 0.0) {
            return Err(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be >= 1".into());
        }
        Ok(())
    }
}

/// Per-epoch training telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmEpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_accuracy: Option<f64>,
}

/// Adam state for a preference model: the base group and the head group keep
/// separate step counters so bias correction matches when each group actually
/// starts updating.
struct PmAdamState<T> {
    base: AdamState<T>,
    head_m: Vec<T>,
    head_v: Vec<T>,
    head_step: u64,
}

impl<T: Scalar> PmAdamState<T> {
    fn new(pm: &PmParams<T>) -> Self {
        Self {
            base: AdamState::new(&pm.base.config),
            // +1 slot for the bias.
            head_m: vec![T::zero(); pm.head_weights.len() + 1],
            head_v: vec![T::zero(); pm.head_weights.len() + 1],
            head_step: 0,
        }
    }
}

fn pm_adam_step<T: Scalar>(
    pm: &mut PmParams<T>,
    grads: &PmGradients<T>,
    state: &mut PmAdamState<T>,
    hyper: AdamHyper,
    head_only: bool,
) {
    state.head_step += 1;
    let h = pm.head_weights.len();
    let mut head_params: Vec<T> = pm.head_weights.clone();
    head_params.push(pm.head_bias);
    let mut head_grads: Vec<T> = grads.head_weights.clone();
    head_grads.push(grads.head_bias);
    adam_update_slices(
        &mut [&mut head_params],
        &[&head_grads],
        &mut [&mut state.head_m],
        &mut [&mut state.head_v],
        state.head_step,
        hyper,
    );
    pm.head_weights.copy_from_slice(&head_params[..h]);
    pm.head_bias = head_params[h];

    if !head_only {
        crate::tinylm::adam_step(&mut pm.base, &grads.base, &mut state.base, hyper);
    }
}

/// Trains a preference model from an LM base. During the first
/// `head_only_warmup_steps` optimizer steps only the head updates and the
/// base parameters stay bit-identical; afterwards the whole model trains.
/// Deterministic for a fixed seed.
pub fn train_pm<T: Scalar>(
    basic: &LmParams<T>,
    dataset: &PreferenceDataset,
    eval: Option<&PreferenceDataset>,
    config: &PmTrainConfig,
) -> (PmParams<T>, Vec<PmEpochStats>) {
    assert!(!dataset.is_empty(), "dataset must be non-empty");
    config.validate().expect("valid PmTrainConfig");
    let mut pm = PmParams::init(basic.clone(), config.seed);
    let mut state = PmAdamState::new(&pm);
    let hyper = AdamHyper::with_lr(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut steps_done = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<PreferenceExample> = chunk
                .iter()
                .map(|&i| dataset.examples()[i].clone())
                .collect();
            let head_only = steps_done < config.head_only_warmup_steps;
            let (loss, grads) = pm_loss_and_grad_impl(&pm, &batch, head_only);
            pm_adam_step(&mut pm, &grads, &mut state, hyper, head_only);
            epoch_loss += loss.to_f64_lossy();
            batches += 1;
            steps_done += 1;
        }
        let eval_accuracy = eval.map(|ds| ranking_accuracy(&pm, ds).overall);
        history.push(PmEpochStats {
            epoch,
            train_loss: epoch_loss / batches as f64,
            eval_accuracy,
        });
    }
    (pm, history)
}

/// Which side of the length split an unequal-length example falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LengthSlice {
    BetterLonger,
    BetterShorter,
}

impl fmt::Display for LengthSlice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LengthSlice::BetterLonger => "better_longer",
            LengthSlice::BetterShorter => "better_shorter",
        })
    }
}

/// Credit sum and support for one evaluation slice.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SliceRow {
    pub credit: f64,
    pub support: usize,
}

impl SliceRow {
    /// Mean credit; `None` when the slice is empty.
    pub fn accuracy(&self) -> Option<f64> {
        (self.support > 0).then(|| self.credit / self.support as f64)
    }
}

/// Ranking accuracy sliced by task type and length direction. Equal-length
/// examples count toward the overall accuracy but belong to no slice.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SliceAccuracy {
    rows: BTreeMap<(TaskType, LengthSlice), SliceRow>,
}

impl SliceAccuracy {
    pub fn row(&self, task: TaskType, slice: LengthSlice) -> SliceRow {
        self.rows.get(&(task, slice)).copied().unwrap_or_default()
    }

    pub fn rows(&self) -> &BTreeMap<(TaskType, LengthSlice), SliceRow> {
        &self.rows
    }

    /// Total support across slices (dataset size minus equal-length pairs).
    pub fn total_support(&self) -> usize {
        self.rows.values().map(|r| r.support).sum()
    }

    /// Aggregated accuracy over one length direction across all task types.
    pub fn direction_accuracy(&self, slice: LengthSlice) -> Option<f64> {
        let mut credit = 0.0;
        let mut support = 0usize;
        for ((_, s), row) in &self.rows {
            if *s == slice {
                credit += row.credit;
                support += row.support;
            }
        }
        (support > 0).then(|| credit / support as f64)
    }

    /// CSV export: `task_type,slice,accuracy,support`, all 20 slices in
    /// canonical order, empty accuracy cell when the slice has no support.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_type,slice,accuracy,support\n");
        for task in TaskType::ALL {
            for slice in [LengthSlice::BetterLonger, LengthSlice::BetterShorter] {
                let row = self.row(task, slice);
                let acc = row
                    .accuracy()
                    .map(|a| format!("{a:.4}"))
                    .unwrap_or_default();
                out.push_str(&format!("{task},{slice},{acc},{}\n", row.support));
            }
        }
        out
    }
}

/// Overall plus sliced ranking accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingAccuracy {
    pub overall: f64,
    pub slices: SliceAccuracy,
    pub examples: usize,
}

/// Ranking accuracy with credit 1 for `r(better) > r(worse)`, 0.5 for a tie,
/// 0 otherwise; sliced by task type and length direction.
pub fn ranking_accuracy<T: Scalar>(pm: &PmParams<T>, dataset: &PreferenceDataset) -> RankingAccuracy {
    ranking_accuracy_with(|req, resp| pm_score(pm, req, resp), dataset)
}

/// Same metric over an arbitrary scorer. Only within-request score
/// differences are consumed, so the result is invariant under adding any
/// per-request constant to all scores.
pub fn ranking_accuracy_with<T: Scalar>(
    mut scorer: impl FnMut(&str, &str) -> T,
    dataset: &PreferenceDataset,
) -> RankingAccuracy {
    let mut slices = SliceAccuracy::default();
    let mut credit_sum = 0.0;
    for ex in dataset.iter() {
        let r_b = scorer(&ex.request, &ex.better);
        let r_w = scorer(&ex.request, &ex.worse);
        let credit = match r_b.partial_cmp(&r_w).expect("finite scores") {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Equal => 0.5,
            std::cmp::Ordering::Less => 0.0,
        };
        credit_sum += credit;
        let len_b = ex.better.chars().count();
        let len_w = ex.worse.chars().count();
        let slice = match len_b.cmp(&len_w) {
            std::cmp::Ordering::Greater => Some(LengthSlice::BetterLonger),
            std::cmp::Ordering::Less => Some(LengthSlice::BetterShorter),
            std::cmp::Ordering::Equal => None,
        };
        if let Some(slice) = slice {
            let row = slices.rows.entry((ex.task_type, slice)).or_default();
            row.credit += credit;
            row.support += 1;
        }
    }
    let examples = dataset.len();
    RankingAccuracy {
        overall: if examples == 0 {
            0.0
        } else {
            credit_sum / examples as f64
        },
        slices,
        examples,
    }
}

/// One flagged example from a markup audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditFlag {
    pub id: String,
    /// `r(x, worse) - r(x, better)`; positive means the model contradicts
    /// the recorded markup.
    pub gap: f64,
}

/// Flags examples whose worse response outscores the better one by more than
/// `tau`, sorted by gap descending (ties by id).
pub fn audit_markup<T: Scalar>(
    pm: &PmParams<T>,
    dataset: &PreferenceDataset,
    tau: f64,
) -> Vec<AuditFlag> {
    let mut flags: Vec<AuditFlag> = dataset
        .iter()
        .filter_map(|ex| {
            let r_b = pm_score(pm, &ex.request, &ex.better).to_f64_lossy();
            let r_w = pm_score(pm, &ex.request, &ex.worse).to_f64_lossy();
            let gap = r_w - r_b;
            (gap > tau).then(|| AuditFlag {
                id: ex.id.clone(),
                gap,
            })
        })
        .collect();
    flags.sort_by(|a, b| b.gap.partial_cmp(&a.gap).unwrap().then(a.id.cmp(&b.id)));
    flags
}

/// Writes a PM checkpoint: the LM checkpoint document plus head arrays.
pub fn save_pm<T: Scalar>(pm: &PmParams<T>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let mut doc = serde_json::Map::new();
    doc.insert("format".into(), PM_FORMAT.into());
    doc.insert("version".into(), crate::tinylm::FORMAT_VERSION.into());
    doc.insert("lm".into(), params_to_json(&pm.base));
    doc.insert("head_weights".into(), encode_f64s(&pm.head_weights).into());
    doc.insert(
        "head_bias".into(),
        serde_json::Number::from_f64(pm.head_bias.to_f64_lossy())
            .ok_or_else(|| CheckpointError::Format("non-finite head bias".into()))?
            .into(),
    );
    let json = serde_json::to_string(&serde_json::Value::Object(doc))
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

/// Reads a PM checkpoint, validating the format tag and head dimension.
pub fn load_pm<T: Scalar>(path: impl AsRef<Path>) -> Result<PmParams<T>, CheckpointError> {
    let text = fs::read_to_string(path)?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CheckpointError::Format(e.to_string()))?;
    let format = value["format"].as_str().unwrap_or_default().to_string();
    if format != PM_FORMAT {
        return Err(CheckpointError::Format(format!(
            "format tag `{format}`, expected `{PM_FORMAT}`"
        )));
    }
    let head_b64 = value["head_weights"]
        .as_str()
        .ok_or_else(|| CheckpointError::Format("missing head_weights".into()))?
        .to_string();
    let head_bias = value["head_bias"]
        .as_f64()
        .ok_or_else(|| CheckpointError::Format("missing head_bias".into()))?;
    let base: LmParams<T> = params_from_json(value["lm"].take())?;
    let head_weights = decode_f64s(&head_b64, base.config.hidden_dim, "head_weights")?;
    Ok(PmParams {
        base,
        head_weights,
        head_bias: T::from_f64_lossy(head_bias),
    })
}
