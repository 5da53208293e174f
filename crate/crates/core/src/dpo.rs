//! Direct Preference Optimization: preference-pair training of a policy
//! against a frozen reference.
//!
//! The loss for one example is `-log sigmoid(beta * (d_b - d_w))` where
//! `d_y = log pi_policy(y|x) - log pi_ref(y|x)` and the sequence
//! log-likelihood is the raw (unnormalized) sum over response tokens plus the
//! terminal EOT. At `policy == reference` every log-ratio vanishes and the
//! loss is exactly `ln 2`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PreferenceDataset, PreferenceExample};
use crate::scalar::{neg_log_sigmoid, sigmoid, Scalar};
use crate::tinylm::{
    adam_step, sequence_logprob, sequence_logprob_grad, AdamHyper, AdamState, Gradients, LmParams,
};

/// DPO training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    /// Penalty coefficient on the policy/reference log-ratio.
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lr: 1e-3,
            batch_size: 16,
            epochs: 1,
            seed: 0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.beta > 0.0) {
            return Err(format!("beta must be > 0, got {}", self.beta));
        }
        if !(self.lr > 0.0) {
            return Err(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be >= 1".into());
        }
        Ok(())
    }

    /// Reference hyperparameter presets for full-scale runs (epochs, lr,
    /// batch size); desk-scale experiments use their own settings.
    ///
    /// * `ood`       - 1 epoch,  lr 1e-7, batch 256
    /// * `filtered`  - 2 epochs, lr 1e-8, batch 256
    /// * `generated` - 6 epochs, lr 1e-7, batch 256
    pub fn preset(name: &str) -> Option<Self> {
        let (epochs, lr) = match name {
            "ood" => (1, 1e-7),
            "filtered" => (2, 1e-8),
            "generated" => (6, 1e-7),
            _ => return None,
        };
        Some(Self {
            beta: 0.1,
            lr,
            batch_size: 256,
            epochs,
            seed: 0,
        })
    }
}

/// Implicit reward margin of one example:
/// `beta * [(log-ratio of better) - (log-ratio of worse)]`.
pub fn implicit_reward_margin<T: Scalar>(
    policy: &LmParams<T>,
    reference: &LmParams<T>,
    example: &PreferenceExample,
    beta: f64,
) -> T {
    let d_b = sequence_logprob(policy, &example.request, &example.better)
        - sequence_logprob(reference, &example.request, &example.better);
    let d_w = sequence_logprob(policy, &example.request, &example.worse)
        - sequence_logprob(reference, &example.request, &example.worse);
    T::from_f64_lossy(beta) * (d_b - d_w)
}

/// Mean DPO loss over a batch. The reference is treated as constants.
pub fn dpo_loss<T: Scalar>(
    policy: &LmParams<T>,
    reference: &LmParams<T>,
    batch: &[PreferenceExample],
    beta: f64,
) -> T {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let n = T::from_f64_lossy(batch.len() as f64);
    batch
        .iter()
        .map(|ex| neg_log_sigmoid(implicit_reward_margin(policy, reference, ex, beta)))
        .sum::<T>()
        / n
}

/// Mean DPO loss with its exact gradient on the policy. The reference enters
/// only through constants, so no reference gradient exists by construction.
pub fn dpo_loss_and_grad<T: Scalar>(
    policy: &LmParams<T>,
    reference: &LmParams<T>,
    batch: &[PreferenceExample],
    beta: f64,
) -> (T, Gradients<T>) {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let mut grads = Gradients::zeros(&policy.config);
    let inv_n = T::one() / T::from_f64_lossy(batch.len() as f64);
    let beta_t = T::from_f64_lossy(beta);
    let mut loss = T::zero();
    for ex in batch {
        let margin = implicit_reward_margin(policy, reference, ex, beta);
        loss += neg_log_sigmoid(margin) * inv_n;
        // d(-log sigmoid(m))/dm = -sigmoid(-m); m depends on the policy
        // through beta * (log pi(better) - log pi(worse)).
        let dmargin = -sigmoid(-margin) * inv_n;
        sequence_logprob_grad(policy, &ex.request, &ex.better, dmargin * beta_t, &mut grads);
        sequence_logprob_grad(policy, &ex.request, &ex.worse, -dmargin * beta_t, &mut grads);
    }
    (loss, grads)
}

/// Per-step training telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoStepStats {
    pub step: usize,
    pub loss: f64,
    /// Mean implicit reward margin over the step's batch.
    pub margin: f64,
    /// Fraction of the batch with positive margin.
    pub implicit_accuracy: f64,
}

/// Per-epoch aggregates of the step telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoEpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_margin: f64,
    pub implicit_accuracy: f64,
}

/// Full DPO training history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DpoHistory {
    pub steps: Vec<DpoStepStats>,
    pub epochs: Vec<DpoEpochStats>,
}

impl DpoHistory {
    /// CSV export: `step,loss,margin,implicit_accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,margin,implicit_accuracy\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.4}\n",
                s.step, s.loss, s.margin, s.implicit_accuracy
            ));
        }
        out
    }
}

/// Trains a policy initialized from `basic` against a frozen deep copy of
/// `basic` as the reference. Adam updates, shuffled batches, deterministic
/// for a fixed seed. The reference is never touched by the optimizer.
pub fn train_dpo<T: Scalar>(
    basic: &LmParams<T>,
    dataset: &PreferenceDataset,
    config: &DpoConfig,
) -> (LmParams<T>, DpoHistory) {
    assert!(!dataset.is_empty(), "dataset must be non-empty");
    config.validate().expect("valid DpoConfig");
    let reference = basic.clone();
    let mut policy = basic.clone();
    let mut state = AdamState::new(&policy.config);
    let hyper = AdamHyper::with_lr(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = DpoHistory::default();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut acc = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<PreferenceExample> = chunk
                .iter()
                .map(|&i| dataset.examples()[i].clone())
                .collect();
            let (loss, grads) = dpo_loss_and_grad(&policy, &reference, &batch, config.beta);
            let margins: Vec<f64> = batch
                .iter()
                .map(|ex| {
                    implicit_reward_margin(&policy, &reference, ex, config.beta).to_f64_lossy()
                })
                .collect();
            let mean_margin = margins.iter().sum::<f64>() / margins.len() as f64;
            let implicit_accuracy =
                margins.iter().filter(|&&m| m > 0.0).count() as f64 / margins.len() as f64;
            adam_step(&mut policy, &grads, &mut state, hyper);
            history.steps.push(DpoStepStats {
                step,
                loss: loss.to_f64_lossy(),
                margin: mean_margin,
                implicit_accuracy,
            });
            acc = (
                acc.0 + loss.to_f64_lossy(),
                acc.1 + mean_margin,
                acc.2 + implicit_accuracy,
                acc.3 + 1,
            );
            step += 1;
        }
        let n = acc.3 as f64;
        history.epochs.push(DpoEpochStats {
            epoch,
            mean_loss: acc.0 / n,
            mean_margin: acc.1 / n,
            implicit_accuracy: acc.2 / n,
        });
    }
    (policy, history)
}
