//! Cross-module pipeline checks over the public API, with everything round-
//! tripping through real files.

use prefkit::corpus::{load_jsonl, write_jsonl, TaskType};
use prefkit::curation::{compute_thresholds, filter_by_perplexity, ThresholdTable};
use prefkit::dpo::{train_dpo, DpoConfig};
use prefkit::experiments::{experiment_lm_config, pretrained_lm};
use prefkit::prefmodel::{load_pm, pm_score, ranking_accuracy, save_pm, train_pm, PmTrainConfig};
use prefkit::synth::{
    on_distribution_pairs, synthetic_pairs, synthetic_requests, HiddenOracle, TARGET_CHAR,
};
use prefkit::tinylm::{load_lm, sample, save_lm, SampleOptions};
use prefkit::Real;

#[test]
fn dataset_round_trip_through_disk_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.jsonl");
    let ds = synthetic_pairs(40, HiddenOracle::CharCount(TARGET_CHAR), 3..=10, 3);
    write_jsonl(&ds, &path).unwrap();
    let reloaded = load_jsonl(&path).unwrap();
    assert_eq!(ds, reloaded);
}

#[test]
fn checkpoints_preserve_behavior_not_just_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let lm = pretrained_lm::<Real>(4);
    let lm_path = dir.path().join("lm.json");
    save_lm(&lm, &lm_path).unwrap();
    let reloaded: prefkit::LmParams = load_lm(&lm_path).unwrap();
    let opts = SampleOptions {
        max_len: 10,
        ..Default::default()
    };
    assert_eq!(sample(&lm, "abc", opts, 9), sample(&reloaded, "abc", opts, 9));

    let ds = synthetic_pairs(60, HiddenOracle::CharCount(TARGET_CHAR), 3..=10, 5);
    let (pm, _) = train_pm(
        &lm,
        &ds,
        None,
        &PmTrainConfig {
            epochs: 2,
            ..Default::default()
        },
    );
    let pm_path = dir.path().join("pm.json");
    save_pm(&pm, &pm_path).unwrap();
    let pm_back: prefkit::PmParams = load_pm(&pm_path).unwrap();
    assert_eq!(
        pm_score(&pm, "request", "response"),
        pm_score(&pm_back, "request", "response")
    );
}

#[test]
fn threshold_filter_dpo_chain_runs_end_to_end() {
    let lm = pretrained_lm::<Real>(6);
    let requests = synthetic_requests(4, 7);
    let opts = SampleOptions {
        max_len: 12,
        ..Default::default()
    };
    let thresholds = compute_thresholds(&lm, &requests, 4, 0.95, opts, 8).unwrap();
    assert_eq!(thresholds.rows().len(), TaskType::ALL.len());

    let dir = tempfile::tempdir().unwrap();
    let tpath = dir.path().join("thresholds.csv");
    thresholds.write_csv(&tpath).unwrap();
    let thresholds = ThresholdTable::read_csv(&tpath).unwrap();

    let own = on_distribution_pairs(
        &lm,
        &requests,
        HiddenOracle::CharCount(TARGET_CHAR),
        opts,
        8,
        9,
    );
    assert!(!own.is_empty());
    let (filtered, stats) = filter_by_perplexity(&lm, &own, &thresholds);
    assert_eq!(stats.total_in(), own.len());
    assert!(stats.total_kept() >= own.len() / 2, "filter kept too little");

    let (policy, history) = train_dpo(
        &lm,
        &filtered,
        &DpoConfig {
            epochs: 2,
            lr: 1e-3,
            ..Default::default()
        },
    );
    assert!(history.epochs.last().unwrap().mean_margin > 0.0);
    // Trained policy still evaluates cleanly on the same pairs.
    let (pm, _) = train_pm(
        &policy,
        &filtered,
        None,
        &PmTrainConfig {
            epochs: 1,
            ..Default::default()
        },
    );
    let acc = ranking_accuracy(&pm, &filtered);
    assert!(acc.examples == filtered.len());
}
