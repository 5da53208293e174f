//! End-to-end recipes: deterministic artifact trees for each experiment,
//! listed in a hash manifest so reruns can be compared byte for byte.

use std::path::Path;

use prefkit::corpus::{write_jsonl, PreferenceDataset, PreferenceExample, Vote};
use prefkit::curation::{
    build_filtered_pref_dataset, compute_thresholds, consensus_filter, select_most_different_pair,
    write_archive_jsonl,
};
use prefkit::dpo::{train_dpo, DpoConfig};
use prefkit::experiments::{
    antirepeat_pipeline, pm_length_bias_contrast,
    pm_synthetic_recovery, ppo_toy, pretrained_lm,
};
use prefkit::ppo::derive_seed;
use prefkit::prefmodel::save_pm;
use prefkit::report::{aggregate_sbs, curves_svg, sbs_csv, sbs_svg, write_sbs_jsonl};
use prefkit::synth::{
    generation_archive, oracle_sbs, synthetic_pairs, synthetic_requests,
    HiddenOracle, TARGET_CHAR,
};
use prefkit::textscan::RepeatRates;
use prefkit::tinylm::{save_lm, SampleOptions};
use prefkit::Real;

use crate::manifest::Manifest;
use crate::CliError;

pub const RECIPES: [&str; 6] = [
    "pm-balanced-vs-unbalanced",
    "dpo-ood",
    "dpo-filtered",
    "dpo-generated",
    "dpo-antirepeat",
    "ppo-toy",
];

/// Runs one recipe into `out_dir`, writing `manifest.json` last.
pub fn run_recipe(name: &str, out_dir: &Path, seed: u64) -> Result<(), CliError> {
    match name {
        "pm-balanced-vs-unbalanced" => pm_balanced_vs_unbalanced(out_dir, seed),
        "dpo-ood" => dpo_ood(out_dir, seed),
        "dpo-filtered" => dpo_filtered(out_dir, seed),
        "dpo-generated" => dpo_generated(out_dir, seed),
        "dpo-antirepeat" => dpo_antirepeat(out_dir, seed),
        "ppo-toy" => ppo_toy_recipe(out_dir, seed),
        other => Err(CliError::Usage(format!(
            "unknown recipe `{other}` (expected one of: {})",
            RECIPES.join(", ")
        ))),
    }
}

fn write_dataset(m: &mut Manifest, name: &str, ds: &PreferenceDataset) -> Result<(), CliError> {
    write_jsonl(ds, m.path(name)).map_err(|e| CliError::Data(e.to_string()))?;
    m.record(name)
}

fn rates_csv(before: &RepeatRates, after: &RepeatRates) -> String {
    format!(
        "model,cycle_rate,repetition_rate\nbase,{:.4},{:.4}\ndpo,{:.4},{:.4}\n",
        before.cycle_rate(),
        before.repetition_rate(),
        after.cycle_rate(),
        after.repetition_rate()
    )
}

/// Trains one PM on the length-biased dataset as-is and one on its balanced
/// version; emits both checkpoints plus slice-accuracy tables. Also runs the
/// plain synthetic-recovery training as a sanity artifact.
fn pm_balanced_vs_unbalanced(out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let mut m = Manifest::new("pm-balanced-vs-unbalanced", seed, out_dir)?;
    let out = pm_length_bias_contrast::<Real>(seed);
    write_dataset(&mut m, "train.jsonl", &out.train)?;
    write_dataset(&mut m, "train_balanced.jsonl", &out.balanced_train)?;
    write_dataset(&mut m, "heldout.jsonl", &out.heldout)?;
    save_pm(&out.unbalanced_pm, m.path("pm_unbalanced.json"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    m.record("pm_unbalanced.json")?;
    save_pm(&out.balanced_pm, m.path("pm_balanced.json"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    m.record("pm_balanced.json")?;
    m.write("eval_unbalanced.csv", out.unbalanced_eval.slices.to_csv())?;
    m.write("eval_balanced.csv", out.balanced_eval.slices.to_csv())?;

    let recovery = pm_synthetic_recovery::<Real>(derive_seed(seed, 50));
    m.write(
        "recovery_heldout_eval.csv",
        recovery.heldout_accuracy.slices.to_csv(),
    )?;
    m.finish()
}

/// DPO on an out-of-distribution dataset (random synthetic text the model
/// never produced), with an oracle side-by-side against the base afterwards.
fn dpo_ood(out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let mut m = Manifest::new("dpo-ood", seed, out_dir)?;
    let basic = pretrained_lm::<Real>(derive_seed(seed, 1));
    save_lm(&basic, m.path("basic.json")).map_err(|e| CliError::Data(e.to_string()))?;
    m.record("basic.json")?;

    let dataset = synthetic_pairs(
        300,
        HiddenOracle::CharCount(TARGET_CHAR),
        3..=12,
        derive_seed(seed, 2),
    );
    write_dataset(&mut m, "dataset.jsonl", &dataset)?;
    let config = DpoConfig {
        beta: 0.2,
        lr: 1.5e-3,
        batch_size: 16,
        epochs: 2,
        seed: derive_seed(seed, 3),
    };
    let (policy, history) = train_dpo(&basic, &dataset, &config);
    save_lm(&policy, m.path("policy.json")).map_err(|e| CliError::Data(e.to_string()))?;
    m.record("policy.json")?;
    m.write("history.csv", history.to_csv())?;

    let heldout = synthetic_requests(5, derive_seed(seed, 4));
    let sbs = oracle_sbs(
        &basic,
        &policy,
        &heldout,
        HiddenOracle::CharCount(TARGET_CHAR),
        SampleOptions {
            max_len: 12,
            ..Default::default()
        },
        derive_seed(seed, 5),
    );
    write_sbs_jsonl(&sbs, m.path("sbs.jsonl")).map_err(|e| CliError::Data(e.to_string()))?;
    m.record("sbs.jsonl")?;
    let report = aggregate_sbs(&sbs);
    m.write("sbs.csv", sbs_csv(&report))?;
    m.write("sbs.svg", sbs_svg(&report, "basic", "dpo-ood"))?;
    m.finish()
}

/// The perplexity-filtering pipeline: merge an own on-distribution dataset
/// with an out-of-distribution external one, filter at the per-task
/// 95-percentile thresholds, balance, and DPO on the result.
fn dpo_filtered(out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let mut m = Manifest::new("dpo-filtered", seed, out_dir)?;
    let basic = pretrained_lm::<Real>(derive_seed(seed, 1));
    save_lm(&basic, m.path("basic.json")).map_err(|e| CliError::Data(e.to_string()))?;
    m.record("basic.json")?;

    let (own, external) =
        prefkit::experiments::planted_merge_fixture(&basic, derive_seed(seed, 2));
    write_dataset(&mut m, "own.jsonl", &own)?;
    write_dataset(&mut m, "external.jsonl", &external)?;

    let threshold_requests = synthetic_requests(6, derive_seed(seed, 3));
    let thresholds = compute_thresholds(
        &basic,
        &threshold_requests,
        4,
        0.95,
        SampleOptions {
            max_len: 12,
            ..Default::default()
        },
        derive_seed(seed, 4),
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    m.write("thresholds.csv", thresholds.to_csv())?;

    let (filtered, stats) = build_filtered_pref_dataset(
        &basic,
        &own,
        &external,
        &thresholds,
        2.0,
        derive_seed(seed, 5),
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    write_dataset(&mut m, "filtered.jsonl", &filtered)?;
    m.write("filter_stats.csv", stats.to_csv())?;

    let config = DpoConfig {
        beta: 0.2,
        lr: 1.5e-3,
        batch_size: 16,
        epochs: 4,
        seed: derive_seed(seed, 6),
    };
    let (policy, history) = train_dpo(&basic, &filtered, &config);
    save_lm(&policy, m.path("policy.json")).map_err(|e| CliError::Data(e.to_string()))?;
    m.record("policy.json")?;
    m.write("history.csv", history.to_csv())?;

    let heldout = synthetic_requests(5, derive_seed(seed, 7));
    let sbs = oracle_sbs(
        &basic,
        &policy,
        &heldout,
        HiddenOracle::CharCount(TARGET_CHAR),
        SampleOptions {
            max_len: 12,
            ..Default::default()
        },
        derive_seed(seed, 8),
    );
    let report = aggregate_sbs(&sbs);
    m.write("sbs.csv", sbs_csv(&report))?;
    m.write("sbs.svg", sbs_svg(&report, "basic", "dpo-filtered"))?;
    m.finish()
}

/// The generated-pairs pipeline: sample several responses per request from
/// the base model, keep the two most different, mark them up with a
/// synthetic 3-vote overlap, apply the consensus filter, and DPO-train.
fn dpo_generated(out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let mut m = Manifest::new("dpo-generated", seed, out_dir)?;
    let basic = pretrained_lm::<Real>(derive_seed(seed, 1));
    save_lm(&basic, m.path("basic.json")).map_err(|e| CliError::Data(e.to_string()))?;
    m.record("basic.json")?;

    let requests = synthetic_requests(25, derive_seed(seed, 2));
    let opts = SampleOptions {
        max_len: 12,
        ..Default::default()
    };
    let archive = generation_archive(&basic, &requests, 4, opts, derive_seed(seed, 3));
    write_archive_jsonl(&archive, m.path("archive.jsonl"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    m.record("archive.jsonl")?;

    // Most-different pair per request; oracle votes with overlap 3, with an
    // occasional dissenting vote so the consensus filter has work to do.
    let oracle = HiddenOracle::CharCount(TARGET_CHAR);
    let mut marked = Vec::new();
    for (i, entry) in archive.iter().enumerate() {
        let texts: Vec<String> = entry
            .responses
            .iter()
            .map(|r| r.text.clone())
            .filter(|t| !t.is_empty())
            .collect();
        if texts.len() < 2 {
            continue;
        }
        let (a, b) = select_most_different_pair(&texts).map_err(|e| CliError::Data(e.to_string()))?;
        let (ra, rb) = (&texts[a], &texts[b]);
        if ra == rb || oracle.score(ra) == oracle.score(rb) {
            continue;
        }
        let majority = if oracle.score(ra) > oracle.score(rb) {
            Vote::Better
        } else {
            Vote::Worse
        };
        // Every seventh pair gets one dissenting vote and is dropped later.
        let votes = if i % 7 == 3 {
            let dissent = if majority == Vote::Better {
                Vote::Worse
            } else {
                Vote::Better
            };
            vec![majority, majority, dissent]
        } else {
            vec![majority; 3]
        };
        marked.push(PreferenceExample {
            id: format!("gen-{}", entry.id),
            task_type: entry.task_type,
            request: entry.request.clone(),
            better: ra.clone(),
            worse: rb.clone(),
            source: "generated".into(),
            votes: Some(votes),
        });
    }
    let marked = PreferenceDataset::new(marked).map_err(|e| CliError::Data(e.to_string()))?;
    write_dataset(&mut m, "marked.jsonl", &marked)?;
    let dataset = consensus_filter(&marked, 3);
    write_dataset(&mut m, "dataset.jsonl", &dataset)?;

    let config = DpoConfig {
        beta: 0.2,
        lr: 1.5e-3,
        batch_size: 16,
        epochs: 4,
        seed: derive_seed(seed, 4),
    };
    let (policy, history) = train_dpo(&basic, &dataset, &config);
    save_lm(&policy, m.path("policy.json")).map_err(|e| CliError::Data(e.to_string()))?;
    m.record("policy.json")?;
    m.write("history.csv", history.to_csv())?;

    let heldout = synthetic_requests(5, derive_seed(seed, 5));
    let sbs = oracle_sbs(&basic, &policy, &heldout, oracle, opts, derive_seed(seed, 6));
    let report = aggregate_sbs(&sbs);
    m.write("sbs.csv", sbs_csv(&report))?;
    m.write("sbs.svg", sbs_svg(&report, "basic", "dpo-generated"))?;
    m.finish()
}

/// The anti-repeat pipeline with before/after repeat-rate tables.
fn dpo_antirepeat(out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let mut m = Manifest::new("dpo-antirepeat", seed, out_dir)?;
    let out = antirepeat_pipeline::<Real>(seed);
    save_lm(&out.repetitive_lm, m.path("basic.json"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    m.record("basic.json")?;
    m.write("thresholds.csv", out.thresholds.to_csv())?;
    write_dataset(&mut m, "antirepeat.jsonl", &out.dataset)?;
    save_lm(&out.policy, m.path("policy.json")).map_err(|e| CliError::Data(e.to_string()))?;
    m.record("policy.json")?;
    m.write("history.csv", out.history.to_csv())?;
    m.write(
        "repeat_rates.csv",
        rates_csv(&out.rates_before, &out.rates_after),
    )?;
    m.finish()
}

/// The toy PPO run with score/length curves.
fn ppo_toy_recipe(out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let mut m = Manifest::new("ppo-toy", seed, out_dir)?;
    let out = ppo_toy::<Real>(seed);
    save_lm(&out.basic, m.path("basic.json")).map_err(|e| CliError::Data(e.to_string()))?;
    m.record("basic.json")?;
    save_pm(&out.pm, m.path("pm.json")).map_err(|e| CliError::Data(e.to_string()))?;
    m.record("pm.json")?;
    save_lm(&out.policy, m.path("policy.json")).map_err(|e| CliError::Data(e.to_string()))?;
    m.record("policy.json")?;
    let history_csv = out.history.to_csv();
    m.write("history.csv", &history_csv)?;
    let score_curves = curves_svg(&history_csv, &["mean_pm_score", "mean_pm_score_minus_kl"])
        .map_err(|e| CliError::Data(e.to_string()))?;
    m.write("score_curves.svg", score_curves)?;
    let len_curve = curves_svg(&history_csv, &["mean_response_len"])
        .map_err(|e| CliError::Data(e.to_string()))?;
    m.write("length_curve.svg", len_curve)?;
    m.finish()
}

/// Smoke-level sanity used by tests: the artifacts a recipe must leave.
pub fn expected_artifacts(name: &str) -> &'static [&'static str] {
    match name {
        "pm-balanced-vs-unbalanced" => &[
            "train.jsonl",
            "train_balanced.jsonl",
            "heldout.jsonl",
            "pm_unbalanced.json",
            "pm_balanced.json",
            "eval_unbalanced.csv",
            "eval_balanced.csv",
            "recovery_heldout_eval.csv",
        ],
        "dpo-ood" => &[
            "basic.json",
            "dataset.jsonl",
            "policy.json",
            "history.csv",
            "sbs.jsonl",
            "sbs.csv",
            "sbs.svg",
        ],
        "dpo-filtered" => &[
            "basic.json",
            "own.jsonl",
            "external.jsonl",
            "thresholds.csv",
            "filtered.jsonl",
            "filter_stats.csv",
            "policy.json",
            "history.csv",
            "sbs.csv",
            "sbs.svg",
        ],
        "dpo-generated" => &[
            "basic.json",
            "archive.jsonl",
            "marked.jsonl",
            "dataset.jsonl",
            "policy.json",
            "history.csv",
            "sbs.csv",
            "sbs.svg",
        ],
        "dpo-antirepeat" => &[
            "basic.json",
            "thresholds.csv",
            "antirepeat.jsonl",
            "policy.json",
            "history.csv",
            "repeat_rates.csv",
        ],
        "ppo-toy" => &[
            "basic.json",
            "pm.json",
            "policy.json",
            "history.csv",
            "score_curves.svg",
            "length_curve.svg",
        ],
        _ => &[],
    }
}
