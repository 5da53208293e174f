//! Synthetic corpora, hidden-oracle preference data, and generation archives.
//!
//! Real preference data needs human markup; the experiments here replace the
//! assessor with a *hidden programmatic oracle* (a scoring rule the models
//! never see) so that learning effects stay measurable end to end: the oracle
//! labels the training pairs and later judges held-out generations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{PreferenceDataset, PreferenceExample, RequestRecord, TaskType};
use crate::curation::{ArchiveEntry, ArchiveResponse};
use crate::ppo::derive_seed;
use crate::report::{SbsRecord, Verdict};
use crate::scalar::Scalar;
use crate::tinylm::{sample, LmParams, SampleOptions};

/// Alphabet used by the synthetic text generators. Small on purpose: the
/// tiny LM has to learn its statistics within seconds.
pub const ALPHABET: &[u8] = b"abcdef";

/// Target character of the default quality oracle.
pub const TARGET_CHAR: char = 'e';

/// A scoring rule hidden from the models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HiddenOracle {
    /// Quality = number of occurrences of the target character.
    CharCount(char),
    /// Quality = response length in characters.
    Length,
}

impl HiddenOracle {
    pub fn score(&self, response: &str) -> f64 {
        match self {
            HiddenOracle::CharCount(c) => response.chars().filter(|x| x == c).count() as f64,
            HiddenOracle::Length => response.chars().count() as f64,
        }
    }
}

fn random_word(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char)
        .collect()
}

fn random_text(rng: &mut ChaCha8Rng, len_range: std::ops::RangeInclusive<usize>) -> String {
    let len = rng.gen_range(*len_range.start()..=*len_range.end());
    random_word(rng, len)
}

/// `per_task` random requests for every task type, in canonical task order.
pub fn synthetic_requests(per_task: usize, seed: u64) -> Vec<RequestRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_task * TaskType::ALL.len());
    for task in TaskType::ALL {
        for i in 0..per_task {
            out.push(RequestRecord {
                id: format!("{task}-{i}"),
                task_type: task,
                request: random_text(&mut rng, 4..=8),
            });
        }
    }
    out
}

/// A clean (request, response) corpus: varied short texts with no planted
/// repetition structure.
pub fn clean_corpus(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let request = random_text(&mut rng, 4..=8);
            let response = random_text(&mut rng, 1..=8);
            (request, response)
        })
        .collect()
}

/// A corpus that teaches the model to loop: `repetitive_fraction` of the
/// responses are a 4-character phrase repeated many times, the rest are
/// clean. The period is fixed so the copy rule ("emit the character from 4
/// positions back") is cleanly learnable by a fixed-window model.
pub fn repetitive_corpus(n: usize, repetitive_fraction: f64, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let request = random_text(&mut rng, 4..=8);
            let response = if (i as f64) < repetitive_fraction * n as f64 {
                let phrase = random_word(&mut rng, 4);
                phrase.repeat(rng.gen_range(6..=12))
            } else {
                random_text(&mut rng, 2..=8)
            };
            (request, response)
        })
        .collect()
}

/// `n` preference pairs of random responses, labeled by the oracle. Pairs
/// whose oracle scores tie are regenerated, so every label carries signal.
pub fn synthetic_pairs(
    n: usize,
    oracle: HiddenOracle,
    len_range: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> PreferenceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(n);
    while examples.len() < n {
        let request = random_text(&mut rng, 4..=8);
        let a = random_text(&mut rng, len_range.clone());
        let b = random_text(&mut rng, len_range.clone());
        let (sa, sb) = (oracle.score(&a), oracle.score(&b));
        if sa == sb || a == b {
            continue;
        }
        let (better, worse) = if sa > sb { (a, b) } else { (b, a) };
        examples.push(PreferenceExample {
            id: format!("syn-{}", examples.len()),
            task_type: TaskType::ALL[examples.len() % TaskType::ALL.len()],
            request,
            better,
            worse,
            source: "synthetic".into(),
            votes: None,
        });
    }
    PreferenceDataset::new(examples).expect("generated examples are valid")
}

/// Oracle-labeled pairs with a controlled length bias: exactly
/// `round(better_longer_fraction * n)` pairs have the longer response as the
/// better one. The oracle (target-character count) is the true signal; the
/// length mix is imposed by rejection on top of it. The signal is kept subtle
/// on purpose — the oracle scores differ by exactly 1 while the lengths
/// differ by at least 3 — so a model trained on the biased mix has a blatant
/// length shortcut competing with the real criterion. Equal-length pairs are
/// rejected so every example lands in one length slice.
pub fn length_biased_pairs(
    n: usize,
    better_longer_fraction: f64,
    seed: u64,
) -> PreferenceDataset {
    let oracle = HiddenOracle::CharCount(TARGET_CHAR);
    let want_longer = (better_longer_fraction * n as f64).round() as usize;
    let want_shorter = n - want_longer;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(n);
    let (mut longer, mut shorter) = (0usize, 0usize);
    while examples.len() < n {
        let request = random_text(&mut rng, 4..=8);
        let a = random_text(&mut rng, 3..=13);
        let b = random_text(&mut rng, 3..=13);
        let (sa, sb) = (oracle.score(&a), oracle.score(&b));
        if (sa - sb).abs() != 1.0 || a.len().abs_diff(b.len()) < 4 {
            continue;
        }
        let (better, worse) = if sa > sb { (a, b) } else { (b, a) };
        let is_longer = better.len() > worse.len();
        if is_longer {
            if longer == want_longer {
                continue;
            }
            longer += 1;
        } else {
            if shorter == want_shorter {
                continue;
            }
            shorter += 1;
        }
        examples.push(PreferenceExample {
            id: format!("lb-{}", examples.len()),
            task_type: TaskType::ALL[examples.len() % TaskType::ALL.len()],
            request,
            better,
            worse,
            source: "synthetic-length-biased".into(),
            votes: None,
        });
    }
    PreferenceDataset::new(examples).expect("generated examples are valid")
}

/// Swaps better/worse in a seeded `fraction` of the examples, imitating
/// markup noise. Ids and everything else stay put.
pub fn flip_labels(dataset: &PreferenceDataset, fraction: f64, seed: u64) -> PreferenceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flipped = dataset
        .iter()
        .map(|ex| {
            let mut out = ex.clone();
            if rng.gen_bool(fraction) {
                std::mem::swap(&mut out.better, &mut out.worse);
            }
            out
        })
        .collect();
    PreferenceDataset::new(flipped).expect("flipping preserves validity")
}

/// On-distribution preference pairs: both responses are sampled from the
/// model itself and labeled by the oracle. Requests whose samples keep tying
/// (or come out empty) after `attempts` tries are skipped.
pub fn on_distribution_pairs<T: Scalar>(
    lm: &LmParams<T>,
    requests: &[RequestRecord],
    oracle: HiddenOracle,
    options: SampleOptions,
    attempts: usize,
    seed: u64,
) -> PreferenceDataset {
    let mut examples = Vec::new();
    for (i, req) in requests.iter().enumerate() {
        for attempt in 0..attempts {
            let base = derive_seed(seed, (i * attempts + attempt) as u64);
            let a = sample(lm, &req.request, options, derive_seed(base, 0));
            let b = sample(lm, &req.request, options, derive_seed(base, 1));
            if a.text.is_empty() || b.text.is_empty() || a.text == b.text {
                continue;
            }
            let (sa, sb) = (oracle.score(&a.text), oracle.score(&b.text));
            if sa == sb {
                continue;
            }
            let (better, worse) = if sa > sb {
                (a.text, b.text)
            } else {
                (b.text, a.text)
            };
            examples.push(PreferenceExample {
                id: format!("ond-{}", req.id),
                task_type: req.task_type,
                request: req.request.clone(),
                better,
                worse,
                source: "on-distribution".into(),
                votes: None,
            });
            break;
        }
    }
    PreferenceDataset::new(examples).expect("generated examples are valid")
}

/// Samples `samples_per_request` responses per request into an archive
/// (texts plus cap flags), the raw material of the anti-repeat pipeline.
pub fn generation_archive<T: Scalar>(
    lm: &LmParams<T>,
    requests: &[RequestRecord],
    samples_per_request: usize,
    options: SampleOptions,
    seed: u64,
) -> Vec<ArchiveEntry> {
    requests
        .iter()
        .enumerate()
        .map(|(i, req)| ArchiveEntry {
            id: req.id.clone(),
            task_type: req.task_type,
            request: req.request.clone(),
            responses: (0..samples_per_request)
                .map(|s| {
                    let generated = sample(
                        lm,
                        &req.request,
                        options,
                        derive_seed(seed, (i * samples_per_request + s) as u64),
                    );
                    ArchiveResponse {
                        text: generated.text,
                        hit_cap: generated.hit_cap,
                    }
                })
                .collect(),
        })
        .collect()
}

/// Judges one sample from each policy per request with the oracle:
/// verdict A when policy A's response scores higher, B when lower, tie on
/// equal scores.
pub fn oracle_sbs<T: Scalar>(
    policy_a: &LmParams<T>,
    policy_b: &LmParams<T>,
    requests: &[RequestRecord],
    oracle: HiddenOracle,
    options: SampleOptions,
    seed: u64,
) -> Vec<SbsRecord> {
    requests
        .iter()
        .enumerate()
        .map(|(i, req)| {
            let sample_seed = derive_seed(seed, i as u64);
            let a = sample(policy_a, &req.request, options, sample_seed);
            let b = sample(policy_b, &req.request, options, sample_seed);
            let (sa, sb) = (oracle.score(&a.text), oracle.score(&b.text));
            let verdict = if sa > sb {
                Verdict::A
            } else if sb > sa {
                Verdict::B
            } else {
                Verdict::Tie
            };
            SbsRecord {
                id: req.id.clone(),
                task_type: req.task_type,
                verdict,
            }
        })
        .collect()
}

/// Held-out responses sampled from a policy, with cap flags, for repeat-rate
/// evaluation.
pub fn sample_responses<T: Scalar>(
    lm: &LmParams<T>,
    requests: &[RequestRecord],
    options: SampleOptions,
    seed: u64,
) -> Vec<(String, bool)> {
    requests
        .iter()
        .enumerate()
        .map(|(i, req)| {
            let generated = sample(lm, &req.request, options, derive_seed(seed, i as u64));
            (generated.text, generated.hit_cap)
        })
        .collect()
}
