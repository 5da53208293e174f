//! End-to-end desk-scale experiments over synthetic data.
//!
//! Each driver wires the library stages into one deterministic run keyed by a
//! single seed. The CLI recipes serialize the artifacts these return; the
//! acceptance suite asserts on the returned numbers. Settings live here, in
//! one place, so the two always agree.

use crate::corpus::{balance_by_length, split, PreferenceDataset, RequestRecord};
use crate::curation::{
    build_antirepeat_dataset, compute_thresholds, ThresholdTable,
};
use crate::dpo::{train_dpo, DpoConfig, DpoHistory};
use crate::ppo::{derive_seed, train_ppo, PpoConfig, PpoHistory};
use crate::prefmodel::{ranking_accuracy, train_pm, PmParams, PmTrainConfig, RankingAccuracy};
use crate::report::{aggregate_sbs, SbsRecord, SbsReport};
use crate::scalar::Scalar;
use crate::synth::{
    self, clean_corpus, generation_archive, length_biased_pairs, on_distribution_pairs,
    oracle_sbs, repetitive_corpus, sample_responses, synthetic_pairs, synthetic_requests,
    HiddenOracle, TARGET_CHAR,
};
use crate::textscan::{repeat_rate, RepeatConfig, RepeatRates};
use crate::tinylm::{init, train_lm, LmConfig, LmParams, LmTrainConfig, SampleOptions};

/// Model dimensions shared by all experiments. The 16-token window covers a
/// whole short response plus the separator, which the preference head needs
/// to see response-level features at the EOT position.
pub fn experiment_lm_config(seed: u64) -> LmConfig {
    LmConfig {
        context_window: 16,
        embed_dim: 12,
        hidden_dim: 32,
        seed,
    }
}

fn sample_short() -> SampleOptions {
    SampleOptions {
        max_len: 12,
        temperature: 1.0,
        greedy: false,
    }
}

/// An LM briefly pretrained on the clean synthetic corpus, so that sampling
/// produces in-alphabet text with varied lengths and genuine stops.
pub fn pretrained_lm<T: Scalar>(seed: u64) -> LmParams<T> {
    let mut lm = init(experiment_lm_config(derive_seed(seed, 100))).expect("valid config");
    let corpus = clean_corpus(600, derive_seed(seed, 101));
    train_lm(
        &mut lm,
        &corpus,
        &LmTrainConfig {
            lr: 3e-3,
            batch_size: 16,
            epochs: 4,
            seed: derive_seed(seed, 102),
        },
    );
    lm
}

/// Outcome of the synthetic preference-recovery experiment.
pub struct PmRecoveryOutcome<T> {
    pub pm: PmParams<T>,
    pub train: PreferenceDataset,
    pub heldout: PreferenceDataset,
    pub heldout_accuracy: RankingAccuracy,
    pub history: Vec<crate::prefmodel::PmEpochStats>,
}

/// Trains a preference model on pairs labeled by a hidden target-character
/// oracle and evaluates ranking accuracy on a held-out split.
pub fn pm_synthetic_recovery<T: Scalar>(seed: u64) -> PmRecoveryOutcome<T> {
    let pairs = synthetic_pairs(
        2500,
        HiddenOracle::CharCount(TARGET_CHAR),
        3..=12,
        derive_seed(seed, 1),
    );
    let parts = split(&pairs, &[0.8, 0.2], derive_seed(seed, 2)).expect("valid fractions");
    let (train, heldout) = (parts[0].clone(), parts[1].clone());
    let basic: LmParams<T> = init(experiment_lm_config(derive_seed(seed, 3))).expect("valid");
    let config = PmTrainConfig {
        lr: 3e-3,
        batch_size: 16,
        epochs: 8,
        seed: derive_seed(seed, 4),
        head_only_warmup_steps: 60,
    };
    let (pm, history) = train_pm(&basic, &train, Some(&heldout), &config);
    let heldout_accuracy = ranking_accuracy(&pm, &heldout);
    PmRecoveryOutcome {
        pm,
        train,
        heldout,
        heldout_accuracy,
        history,
    }
}

/// Outcome of the balanced-vs-unbalanced length-bias contrast.
pub struct LengthBiasOutcome<T> {
    pub balanced_pm: PmParams<T>,
    pub unbalanced_pm: PmParams<T>,
    pub train: PreferenceDataset,
    pub balanced_train: PreferenceDataset,
    pub heldout: PreferenceDataset,
    pub balanced_eval: RankingAccuracy,
    pub unbalanced_eval: RankingAccuracy,
}

impl<T> LengthBiasOutcome<T> {
    /// Better-shorter slice accuracy of the two models (balanced, unbalanced).
    pub fn shorter_slice_accuracies(&self) -> (f64, f64) {
        use crate::prefmodel::LengthSlice;
        (
            self.balanced_eval
                .slices
                .direction_accuracy(LengthSlice::BetterShorter)
                .unwrap_or(0.0),
            self.unbalanced_eval
                .slices
                .direction_accuracy(LengthSlice::BetterShorter)
                .unwrap_or(0.0),
        )
    }
}

/// Trains one PM on a 70%-better-longer dataset as-is and one on its
/// length-balanced version, then evaluates both on a common held-out split.
/// The dataset's true signal is the target-character count, so the balanced
/// model has to recover it instead of leaning on length.
pub fn pm_length_bias_contrast<T: Scalar>(seed: u64) -> LengthBiasOutcome<T> {
    let pairs = length_biased_pairs(1500, 0.7, derive_seed(seed, 1));
    let parts = split(&pairs, &[0.8, 0.2], derive_seed(seed, 2)).expect("valid fractions");
    // Training labels carry markup noise; the held-out labels stay clean.
    let train = synth::flip_labels(&parts[0], 0.15, derive_seed(seed, 6));
    let heldout = parts[1].clone();
    let balanced_train = balance_by_length(&train, derive_seed(seed, 3));
    let basic: LmParams<T> = init(experiment_lm_config(derive_seed(seed, 4))).expect("valid");
    // Deliberately short training: the contrast between the two models lives
    // in the regime where the length shortcut still competes with the real
    // criterion.
    let config = PmTrainConfig {
        lr: 3e-3,
        batch_size: 16,
        epochs: 3,
        seed: derive_seed(seed, 5),
        head_only_warmup_steps: 60,
    };
    let (unbalanced_pm, _) = train_pm(&basic, &train, None, &config);
    let (balanced_pm, _) = train_pm(&basic, &balanced_train, None, &config);
    let balanced_eval = ranking_accuracy(&balanced_pm, &heldout);
    let unbalanced_eval = ranking_accuracy(&unbalanced_pm, &heldout);
    LengthBiasOutcome {
        balanced_pm,
        unbalanced_pm,
        train,
        balanced_train,
        heldout,
        balanced_eval,
        unbalanced_eval,
    }
}

/// Outcome of the on-distribution DPO experiment.
pub struct DpoOutcome<T> {
    pub basic: LmParams<T>,
    pub policy: LmParams<T>,
    pub dataset: PreferenceDataset,
    pub history: DpoHistory,
    pub heldout_requests: Vec<RequestRecord>,
    pub sbs: Vec<SbsRecord>,
    pub sbs_report: SbsReport,
}

impl<T> DpoOutcome<T> {
    /// Tie-excluded win share of the trained policy (side B).
    pub fn trained_win_share(&self) -> f64 {
        self.sbs_report.overall.shares().map_or(0.0, |(_, b)| b)
    }
}

/// DPO on a dataset of the basic model's own paired generations, labeled by
/// the hidden oracle; the same oracle judges basic-vs-trained side by side on
/// held-out requests afterwards.
pub fn dpo_on_distribution<T: Scalar>(seed: u64) -> DpoOutcome<T> {
    let basic: LmParams<T> = pretrained_lm(derive_seed(seed, 1));
    let oracle = HiddenOracle::CharCount(TARGET_CHAR);
    let all_requests = synthetic_requests(30, derive_seed(seed, 2));
    // Held out: the last 5 requests of every task type.
    let (train_requests, heldout_requests): (Vec<_>, Vec<_>) = all_requests
        .iter()
        .cloned()
        .partition(|r| r.id.rsplit('-').next().unwrap().parse::<usize>().unwrap() < 25);
    let dataset = on_distribution_pairs(
        &basic,
        &train_requests,
        oracle,
        sample_short(),
        8,
        derive_seed(seed, 3),
    );
    let config = DpoConfig {
        beta: 0.2,
        lr: 1.5e-3,
        batch_size: 16,
        epochs: 4,
        seed: derive_seed(seed, 4),
    };
    let (policy, history) = train_dpo(&basic, &dataset, &config);
    let sbs = oracle_sbs(
        &basic,
        &policy,
        &heldout_requests,
        oracle,
        sample_short(),
        derive_seed(seed, 5),
    );
    let sbs_report = aggregate_sbs(&sbs);
    DpoOutcome {
        basic,
        policy,
        dataset,
        history,
        heldout_requests,
        sbs,
        sbs_report,
    }
}

/// Outcome of the toy PPO run.
pub struct PpoOutcome<T> {
    pub basic: LmParams<T>,
    pub pm: PmParams<T>,
    pub policy: LmParams<T>,
    pub history: PpoHistory,
}

impl<T> PpoOutcome<T> {
    /// Mean PM score of the first and last `k` batches.
    pub fn edge_means(&self, k: usize) -> (f64, f64) {
        let rows = &self.history.rows;
        let head: f64 =
            rows.iter().take(k).map(|r| r.mean_pm_score).sum::<f64>() / k.min(rows.len()) as f64;
        let tail: f64 = rows.iter().rev().take(k).map(|r| r.mean_pm_score).sum::<f64>()
            / k.min(rows.len()) as f64;
        (head, tail)
    }
}

/// The toy PPO task: a PM is first trained on the basic model's own paired
/// generations labeled by response length, then PPO fine-tunes the policy
/// against it with per-batch advantage normalization. A working loop shows
/// rising PM scores and rising response lengths together.
pub fn ppo_toy<T: Scalar>(seed: u64) -> PpoOutcome<T> {
    let basic: LmParams<T> = pretrained_lm(derive_seed(seed, 1));
    let pm_requests = synthetic_requests(20, derive_seed(seed, 2));
    let pm_pairs = on_distribution_pairs(
        &basic,
        &pm_requests,
        HiddenOracle::Length,
        sample_short(),
        8,
        derive_seed(seed, 3),
    );
    let pm_config = PmTrainConfig {
        lr: 3e-3,
        batch_size: 16,
        epochs: 6,
        seed: derive_seed(seed, 4),
        head_only_warmup_steps: 40,
    };
    let (pm, _) = train_pm(&basic, &pm_pairs, None, &pm_config);

    let pool = synthetic_requests(10, derive_seed(seed, 5));
    let proxy_eval = clean_corpus(60, derive_seed(seed, 6));
    let config = PpoConfig {
        lr_policy: 4e-4,
        lr_critic: 1e-2,
        rollouts_per_batch: 16,
        update_epochs: 4,
        max_len: 12,
        num_batches: 40,
        beta_kl: 0.02,
        seed: derive_seed(seed, 7),
        ..Default::default()
    };
    let (policy, history) = train_ppo(&basic, &pm, &pool, &proxy_eval, &config);
    PpoOutcome {
        basic,
        pm,
        policy,
        history,
    }
}

/// Scan thresholds scaled to desk-size generations (the full-scale defaults
/// never fire on 12-40 character samples).
pub fn desk_scan_config() -> RepeatConfig {
    RepeatConfig {
        multi_min_len: 4,
        multi_min_count: 4,
        tandem_min_len: 6,
        tandem_min_count: 2,
    }
}

/// Outcome of the anti-repeat pipeline.
pub struct AntirepeatOutcome<T> {
    pub repetitive_lm: LmParams<T>,
    pub policy: LmParams<T>,
    pub thresholds: ThresholdTable,
    pub dataset: PreferenceDataset,
    pub history: DpoHistory,
    pub rates_before: RepeatRates,
    pub rates_after: RepeatRates,
}

/// The full anti-repeat loop: overfit a model toward repetitive
/// continuations, archive its generations, pair clean with pathological
/// responses per request, filter the pairs to on-distribution ones, DPO the
/// model on the result, and measure held-out repetition+cycle rates before
/// and after.
pub fn antirepeat_pipeline<T: Scalar>(seed: u64) -> AntirepeatOutcome<T> {
    let mut repetitive_lm: LmParams<T> =
        init(experiment_lm_config(derive_seed(seed, 1))).expect("valid");
    let corpus = repetitive_corpus(600, 0.75, derive_seed(seed, 2));
    train_lm(
        &mut repetitive_lm,
        &corpus,
        &LmTrainConfig {
            lr: 3e-3,
            batch_size: 16,
            epochs: 12,
            seed: derive_seed(seed, 3),
        },
    );

    let scan = desk_scan_config();
    // Cap below the training response lengths so persistent loops run into
    // the cap and register as cycles.
    let archive_opts = SampleOptions {
        max_len: 32,
        temperature: 0.9,
        greedy: false,
    };
    let archive_requests = synthetic_requests(12, derive_seed(seed, 4));
    let archive = generation_archive(
        &repetitive_lm,
        &archive_requests,
        6,
        archive_opts,
        derive_seed(seed, 5),
    );
    let thresholds = compute_thresholds(
        &repetitive_lm,
        &archive_requests,
        4,
        0.95,
        archive_opts,
        derive_seed(seed, 6),
    )
    .expect("valid percentile");
    let (dataset, _) =
        build_antirepeat_dataset(&archive, &scan, &repetitive_lm, &thresholds, false);

    let config = DpoConfig {
        beta: 0.15,
        lr: 1.5e-3,
        batch_size: 16,
        epochs: 4,
        seed: derive_seed(seed, 7),
    };
    let (policy, history) = train_dpo(&repetitive_lm, &dataset, &config);

    let heldout = synthetic_requests(15, derive_seed(seed, 8));
    let before = sample_responses(&repetitive_lm, &heldout, archive_opts, derive_seed(seed, 9));
    let after = sample_responses(&policy, &heldout, archive_opts, derive_seed(seed, 9));
    let rates_before = repeat_rate(before.iter().map(|(t, c)| (t.as_str(), *c)), &scan);
    let rates_after = repeat_rate(after.iter().map(|(t, c)| (t.as_str(), *c)), &scan);
    AntirepeatOutcome {
        repetitive_lm,
        policy,
        thresholds,
        dataset,
        history,
        rates_before,
        rates_after,
    }
}

/// Planted-subset merge fixture: an "own" on-distribution dataset drawn from
/// the model itself plus an out-of-distribution "external" dataset of
/// held-out-alphabet text (characters the model never saw in training, which
/// its perplexity punishes hard).
pub fn planted_merge_fixture<T: Scalar>(
    lm: &LmParams<T>,
    seed: u64,
) -> (PreferenceDataset, PreferenceDataset) {
    let requests = synthetic_requests(6, derive_seed(seed, 1));
    let own = on_distribution_pairs(
        lm,
        &requests,
        HiddenOracle::CharCount(TARGET_CHAR),
        sample_short(),
        8,
        derive_seed(seed, 2),
    );
    let external_requests = synthetic_requests(6, derive_seed(seed, 3));
    let external = PreferenceDataset::new(
        external_requests
            .iter()
            .enumerate()
            .map(|(i, r)| crate::corpus::PreferenceExample {
                id: format!("ext-{i}"),
                task_type: r.task_type,
                request: r.request.clone(),
                better: format!("ZZXQWVZZXQWV{i}"),
                worse: format!("QWZZVXQWZZVX{i}"),
                source: "external".into(),
                votes: None,
            })
            .collect(),
    )
    .expect("valid examples");
    (own, external)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pretrained_lm_is_deterministic() {
        let a: LmParams<f64> = pretrained_lm(5);
        let b: LmParams<f64> = pretrained_lm(5);
        assert_eq!(a, b);
    }

    #[test]
    fn planted_fixture_separates_by_perplexity() {
        let lm: LmParams<f64> = pretrained_lm(9);
        let (own, external) = planted_merge_fixture(&lm, 10);
        assert!(own.len() >= 20, "own size {}", own.len());
        assert_eq!(external.len(), 60);
        // Out-of-alphabet text must carry far higher perplexity.
        let mean_ppl = |ds: &PreferenceDataset| {
            ds.iter()
                .map(|e| {
                    crate::tinylm::perplexity(&lm, &e.request, &e.better)
                        .unwrap()
                        .ln()
                })
                .sum::<f64>()
                / ds.len() as f64
        };
        assert!(mean_ppl(&external) > mean_ppl(&own) + 1.0);
    }
}
