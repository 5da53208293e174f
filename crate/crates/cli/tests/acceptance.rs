//! Acceptance suite: one test per criterion, each printing a PASS line once
//! its assertions hold. Run with `cargo test -p prefkit-cli --test acceptance`
//! (add `-- --nocapture` to see the PASS lines).

use prefkit::corpus::PreferenceDataset;
use prefkit::curation::{percentile, verify_filter_soundness};
use prefkit::dpo::{dpo_loss, dpo_loss_and_grad};
use prefkit::experiments::{
    antirepeat_pipeline, dpo_on_distribution, experiment_lm_config, planted_merge_fixture,
    pm_length_bias_contrast, pm_synthetic_recovery, ppo_toy, pretrained_lm,
};
use prefkit::ppo::{gae_advantages, normalize_advantages};
use prefkit::prefmodel::{pm_loss_and_grad, pm_pair_loss, PmParams};
use prefkit::textscan::{find_multiple_repetition, find_tandem_repetition};
use prefkit::tinylm::{finite_diff_check, init, nll_loss_and_grad, perplexity};
use prefkit::Real;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LN2: f64 = std::f64::consts::LN_2;

fn tiny_batch() -> Vec<prefkit::corpus::PreferenceExample> {
    use prefkit::corpus::{PreferenceExample, TaskType};
    vec![
        PreferenceExample {
            id: "a".into(),
            task_type: TaskType::Chat,
            request: "hello".into(),
            better: "good day".into(),
            worse: "grmbl".into(),
            source: "acc".into(),
            votes: None,
        },
        PreferenceExample {
            id: "b".into(),
            task_type: TaskType::OpenQa,
            request: "sum".into(),
            better: "three".into(),
            worse: "banana".into(),
            source: "acc".into(),
            votes: None,
        },
    ]
}

#[test]
fn criterion_01_analytic_ln2_losses() {
    // PM pair loss at equal scores.
    let basic = init::<Real>(experiment_lm_config(1)).unwrap();
    let mut pm = PmParams::init(basic.clone(), 2);
    pm.head_weights.iter_mut().for_each(|w| *w = 0.0);
    for ex in &tiny_batch() {
        assert!((pm_pair_loss(&pm, ex) - LN2).abs() < 1e-9);
    }
    // DPO loss at policy == reference, for several betas and datasets.
    for beta in [0.05, 0.1, 0.7] {
        let loss = dpo_loss(&basic, &basic, &tiny_batch(), beta);
        assert!((loss - LN2).abs() < 1e-9, "beta {beta}: {loss}");
    }
    println!("acceptance 1 (analytic ln 2 losses): PASS");
}

#[test]
fn criterion_02_gradient_suite() {
    let coords = 220;
    let tol = 1e-4;
    let nll_batch: Vec<(String, String)> = tiny_batch()
        .into_iter()
        .map(|e| (e.request, e.better))
        .collect();

    // Tiny-LM NLL gradient.
    let lm = init::<Real>(experiment_lm_config(11)).unwrap();
    let (_, grads) = nll_loss_and_grad(&lm, &nll_batch);
    let report = finite_diff_check(&lm, &grads, |p| nll_loss_and_grad(p, &nll_batch).0, 1e-5, coords, 1);
    assert!(report.max_rel_error < tol, "nll: {report:?}");
    println!(
        "  nll gradient: max rel err {:.3e} over {} coords",
        report.max_rel_error, report.coords_checked
    );

    // Pairwise preference-loss gradient (base parameters).
    let pm = PmParams::init(init::<Real>(experiment_lm_config(12)).unwrap(), 3);
    let batch = tiny_batch();
    let (_, pm_grads) = pm_loss_and_grad(&pm, &batch);
    let head = (pm.head_weights.clone(), pm.head_bias);
    let report = finite_diff_check(
        &pm.base,
        &pm_grads.base,
        |base| {
            let probe = PmParams {
                base: base.clone(),
                head_weights: head.0.clone(),
                head_bias: head.1,
            };
            pm_loss_and_grad(&probe, &batch).0
        },
        1e-5,
        coords,
        2,
    );
    assert!(report.max_rel_error < tol, "pm: {report:?}");
    println!(
        "  preference-loss gradient: max rel err {:.3e} over {} coords",
        report.max_rel_error, report.coords_checked
    );

    // DPO gradient on a policy perturbed away from the reference.
    let reference = init::<Real>(experiment_lm_config(13)).unwrap();
    let mut policy = reference.clone();
    for i in 0..policy.coord_count() {
        let v = policy.get_coord(i);
        policy.set_coord(i, v + 0.01 * ((i % 5) as f64 - 2.0));
    }
    let (_, dpo_grads) = dpo_loss_and_grad(&policy, &reference, &batch, 0.2);
    let report = finite_diff_check(
        &policy,
        &dpo_grads,
        |p| dpo_loss(p, &reference, &batch, 0.2),
        1e-5,
        coords,
        3,
    );
    assert!(report.max_rel_error < tol, "dpo: {report:?}");
    println!(
        "  dpo gradient: max rel err {:.3e} over {} coords",
        report.max_rel_error, report.coords_checked
    );
    println!("acceptance 2 (gradient suite vs central finite differences): PASS");
}

/// Brute-force repetition oracle at the reduction length.
fn multiple_oracle(chars: &[char], min_len: usize, min_count: usize) -> bool {
    let len = min_len + 1;
    if chars.len() < len {
        return false;
    }
    for i in 0..=chars.len() - len {
        let mut count = 0;
        for j in 0..=chars.len() - len {
            if chars[i..i + len] == chars[j..j + len] {
                count += 1;
            }
        }
        if count >= min_count {
            return true;
        }
    }
    false
}

/// Brute-force tandem oracle trying every (period, start).
fn tandem_oracle(chars: &[char], min_len: usize, min_count: usize) -> bool {
    let n = chars.len();
    for period in (min_len + 1)..=(n / min_count.max(1)) {
        'starts: for start in 0..=(n.saturating_sub(period * min_count)) {
            for i in 0..period * min_count {
                if chars[start + i] != chars[start + i % period] {
                    continue 'starts;
                }
            }
            return true;
        }
    }
    false
}

#[test]
fn criterion_03_detector_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let cases = 1000;
    for case in 0..cases {
        let len = rng.gen_range(1..=200);
        let alphabet = rng.gen_range(2..=4u8);
        let text: String = (0..len)
            .map(|_| (b'a' + rng.gen_range(0..alphabet)) as char)
            .collect();
        let chars: Vec<char> = text.chars().collect();
        // Plant structure in a third of the cases so positives are frequent.
        let text = if case % 3 == 0 && len >= 12 {
            let unit_len = rng.gen_range(2..=5);
            let unit: String = (0..unit_len)
                .map(|_| (b'a' + rng.gen_range(0..alphabet)) as char)
                .collect();
            format!("{}{}", text, unit.repeat(rng.gen_range(2..=6)))
        } else {
            text
        };
        let chars_planted: Vec<char> = text.chars().collect();
        let _ = chars;

        let m_len = rng.gen_range(1..=6);
        let m_count = rng.gen_range(2..=5);
        let got = find_multiple_repetition(&text, m_len, m_count);
        assert_eq!(
            got.is_some(),
            multiple_oracle(&chars_planted, m_len, m_count),
            "multiple mismatch on case {case}: {text:?} ({m_len},{m_count})"
        );
        if let Some(w) = got {
            assert!(w.verify(&text, m_len, m_count), "multiple witness failed on {case}");
        }

        let t_len = rng.gen_range(1..=6);
        let t_count = rng.gen_range(2..=3);
        let got = find_tandem_repetition(&text, t_len, t_count);
        assert_eq!(
            got.is_some(),
            tandem_oracle(&chars_planted, t_len, t_count),
            "tandem mismatch on case {case}: {text:?} ({t_len},{t_count})"
        );
        if let Some(w) = got {
            assert!(w.verify(&text, t_len, t_count), "tandem witness failed on {case}");
        }
    }
    println!("acceptance 3 (detector oracle equivalence, {cases} strings, zero disagreements): PASS");
}

/// Counting-based percentile oracle, independent of sorting.
fn percentile_oracle(values: &[f64], p: f64) -> f64 {
    let need = (p * values.len() as f64).ceil() as usize;
    let mut best = f64::INFINITY;
    for &candidate in values {
        let count = values.iter().filter(|&&x| x <= candidate).count();
        if count >= need.max(1) && candidate < best {
            best = candidate;
        }
    }
    best
}

#[test]
fn criterion_04_percentile_and_filter_soundness() {
    // Nearest-rank percentile vs the counting oracle on 1,000 random lists.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=80);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let p: f64 = rng.gen_range(0.001..=1.0);
        assert_eq!(percentile(&values, p).unwrap(), percentile_oracle(&values, p));
    }

    // Planted-subset merge: thresholds from the model's own generations must
    // recover exactly the on-distribution ids from the merged dataset.
    let lm = pretrained_lm::<Real>(21);
    let (own, external) = planted_merge_fixture(&lm, 22);
    let requests = prefkit::synth::synthetic_requests(8, 23);
    let thresholds = prefkit::curation::compute_thresholds(
        &lm,
        &requests,
        6,
        0.95,
        prefkit::tinylm::SampleOptions {
            max_len: 12,
            temperature: 1.0,
            greedy: false,
        },
        24,
    )
    .unwrap();
    // Independent per-example expectation: both perplexities strictly below
    // the task-type bound.
    let passes = |ds: &PreferenceDataset| -> Vec<String> {
        ds.iter()
            .filter(|ex| {
                thresholds.bound(ex.task_type).is_some_and(|bound| {
                    perplexity(&lm, &ex.request, &ex.better).unwrap() < bound
                        && perplexity(&lm, &ex.request, &ex.worse).unwrap() < bound
                })
            })
            .map(|ex| ex.id.clone())
            .collect()
    };
    let mut expected: Vec<String> = passes(&own);
    expected.extend(passes(&external));
    expected.sort();

    let (kept, _) = prefkit::curation::build_filtered_pref_dataset(
        &lm, &own, &external, &thresholds, 100.0, 25,
    )
    .unwrap();
    let mut kept_ids: Vec<String> = kept.iter().map(|e| e.id.clone()).collect();
    kept_ids.sort();
    assert!(!kept_ids.is_empty(), "filter kept nothing");
    assert_eq!(kept_ids, expected, "kept set differs from the planted expectation");
    assert!(
        kept.iter().all(|e| e.source == "on-distribution"),
        "an out-of-distribution example survived the filter"
    );
    // 100% of kept examples re-verify under independent recomputation.
    assert!(verify_filter_soundness(&lm, &kept, &thresholds));
    println!(
        "acceptance 4 (percentile oracle x1000; planted-subset filter recovered {} ids): PASS",
        kept_ids.len()
    );
}

#[test]
fn criterion_05_advantage_normalization_and_gae_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Normalization postconditions over random batches.
    for _ in 0..200 {
        let n = rng.gen_range(2..=400);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (out, degenerate) = normalize_advantages(&values);
        if degenerate {
            continue;
        }
        let mean: f64 = out.iter().sum::<f64>() / out.len() as f64;
        let std = (out.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / out.len() as f64)
            .sqrt();
        assert!(mean.abs() < 1e-9, "|mean| = {}", mean.abs());
        assert!((std - 1.0).abs() < 1e-9, "|std-1| = {}", (std - 1.0).abs());
    }

    // GAE vs the quadratic oracle on random instances of length <= 50.
    for _ in 0..500 {
        let n = rng.gen_range(1..=50);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let gamma: f64 = rng.gen_range(0.0..=1.0);
        let lambda: f64 = rng.gen_range(0.0..=1.0);
        let (adv, targets) = gae_advantages(&rewards, &values, gamma, lambda);
        let delta: Vec<f64> = (0..n)
            .map(|t| {
                let next = if t + 1 < n { values[t + 1] } else { 0.0 };
                rewards[t] + gamma * next - values[t]
            })
            .collect();
        for t in 0..n {
            let mut acc = 0.0;
            let mut w = 1.0;
            for l in t..n {
                acc += w * delta[l];
                w *= gamma * lambda;
            }
            assert!((adv[t] - acc).abs() < 1e-9);
            assert!((targets[t] - (adv[t] + values[t])).abs() < 1e-12);
        }
    }
    println!("acceptance 5 (advantage normalization tolerances; GAE = O(n^2) oracle): PASS");
}

#[test]
fn criterion_06_synthetic_preference_recovery() {
    let start = std::time::Instant::now();
    let out = pm_synthetic_recovery::<Real>(1);
    let acc = out.heldout_accuracy.overall;
    assert!(out.train.len() >= 2000, "train size {}", out.train.len());
    assert!(acc >= 0.9, "held-out ranking accuracy {acc:.4} < 0.9");
    assert!(start.elapsed().as_secs() < 300, "exceeded the 5-minute budget");
    println!(
        "acceptance 6 (synthetic preference recovery, held-out accuracy {acc:.4} in {:?}): PASS",
        start.elapsed()
    );
}

#[test]
fn criterion_07_length_bias_direction() {
    let seeds = [1u64, 2, 3, 4, 5];
    let mut balanced = Vec::new();
    let mut unbalanced = Vec::new();
    for &seed in &seeds {
        let out = pm_length_bias_contrast::<Real>(seed);
        let (b, u) = out.shorter_slice_accuracies();
        println!("  seed {seed}: balanced shorter {b:.4}, unbalanced shorter {u:.4}");
        balanced.push(b);
        unbalanced.push(u);
    }
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let (mb, mu) = (median(balanced), median(unbalanced));
    assert!(
        mb > mu,
        "median better-shorter accuracy: balanced {mb:.4} must exceed unbalanced {mu:.4}"
    );
    println!(
        "acceptance 7 (length-bias direction, medians over {} seeds: balanced {mb:.4} > unbalanced {mu:.4}): PASS",
        seeds.len()
    );
}

#[test]
fn criterion_08_dpo_improvement() {
    let start = std::time::Instant::now();
    let out = dpo_on_distribution::<Real>(1);
    let last = out.history.epochs.last().unwrap();
    let win = out.trained_win_share();
    assert!(last.mean_margin > 0.0, "implicit margin {}", last.mean_margin);
    assert!(
        last.implicit_accuracy > 0.5,
        "implicit accuracy {}",
        last.implicit_accuracy
    );
    assert!(win > 0.55, "hidden-oracle win share {win:.4} <= 0.55");
    assert!(start.elapsed().as_secs() < 600, "exceeded the 10-minute budget");
    println!(
        "acceptance 8 (dpo margin {:.4}, implicit accuracy {:.4}, win share {win:.4}): PASS",
        last.mean_margin, last.implicit_accuracy
    );
}

#[test]
fn criterion_09_ppo_improvement() {
    let start = std::time::Instant::now();
    let out = ppo_toy::<Real>(1);
    let (head, tail) = out.edge_means(10);
    assert!(out.history.rows.len() >= 20);
    assert!(
        tail > head,
        "final-10-batch mean PM score {tail:.4} must exceed first-10-batch {head:.4}"
    );
    let csv = out.history.to_csv();
    let header = csv.lines().next().unwrap();
    assert!(header.split(',').any(|c| c == "mean_response_len"));
    assert!(start.elapsed().as_secs() < 900, "exceeded the 15-minute budget");
    println!(
        "acceptance 9 (ppo mean PM score {head:.4} -> {tail:.4}, history records response length): PASS"
    );
}

#[test]
fn criterion_10_antirepeat_pipeline() {
    let start = std::time::Instant::now();
    let out = antirepeat_pipeline::<Real>(1);
    let before = out.rates_before.pathological_rate();
    let after = out.rates_after.pathological_rate();
    assert!(
        before > 0.05,
        "base model is not repetition-prone enough to measure ({before:.4})"
    );
    assert!(
        before >= 2.0 * after,
        "repetition+cycle rate {before:.4} -> {after:.4} is less than a 2x reduction"
    );
    assert!(start.elapsed().as_secs() < 900, "exceeded the 15-minute budget");
    println!(
        "acceptance 10 (anti-repeat rate {before:.4} -> {after:.4}, factor >= 2): PASS"
    );
}

#[test]
fn criterion_11_recipe_determinism() {
    for name in prefkit_cli::recipes::RECIPES {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        prefkit_cli::recipes::run_recipe(name, dir_a.path(), 7).unwrap();
        prefkit_cli::recipes::run_recipe(name, dir_b.path(), 7).unwrap();
        let manifest_a = std::fs::read(dir_a.path().join("manifest.json")).unwrap();
        let manifest_b = std::fs::read(dir_b.path().join("manifest.json")).unwrap();
        assert_eq!(
            manifest_a, manifest_b,
            "recipe {name}: reruns with one seed must produce byte-identical manifests"
        );
        // The manifest lists every expected artifact, and the artifact bytes
        // themselves match too.
        let listing = String::from_utf8(manifest_a).unwrap();
        for artifact in prefkit_cli::recipes::expected_artifacts(name) {
            assert!(listing.contains(artifact), "{name}: manifest lacks {artifact}");
            let a = std::fs::read(dir_a.path().join(artifact)).unwrap();
            let b = std::fs::read(dir_b.path().join(artifact)).unwrap();
            assert_eq!(a, b, "{name}/{artifact} differs across reruns");
        }
        println!("  recipe {name}: byte-identical manifest");
    }
    println!("acceptance 11 (end-to-end recipe determinism): PASS");
}
