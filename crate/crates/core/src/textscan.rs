//! Detection of generation pathologies in response text: multiple
//! repetitions, tandem repetitions, and cycles, plus a trigram response
//! distance.
//!
//! All thresholds are character counts. Detection uses a 64-bit polynomial
//! rolling hash (modulus 2^61 - 1, fixed base) as a filter only: every
//! returned witness is verified by direct character comparison before it
//! leaves this module, so verdicts are exact, not probabilistic, and any
//! witness re-checked literally against the text satisfies its own claim.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

/// Detector thresholds.
///
/// Defaults follow the repetition definitions used for full-scale response
/// audits: a multiple repetition is a substring of more than 20 characters
/// occurring 7 or more times; a tandem repetition is 2 or more adjacent
/// copies of a substring of more than 100 characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatConfig {
    /// Multiple repetition: substring length must exceed this (strict).
    pub multi_min_len: usize,
    /// Multiple repetition: minimum number of occurrences (inclusive).
    pub multi_min_count: usize,
    /// Tandem repetition: period length must exceed this (strict).
    pub tandem_min_len: usize,
    /// Tandem repetition: minimum number of adjacent copies (inclusive).
    pub tandem_min_count: usize,
}

impl Default for RepeatConfig {
    fn default() -> Self {
        Self {
            multi_min_len: 20,
            multi_min_count: 7,
            tandem_min_len: 100,
            tandem_min_count: 2,
        }
    }
}

impl RepeatConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.multi_min_len == 0
            || self.multi_min_count == 0
            || self.tandem_min_len == 0
            || self.tandem_min_count == 0
        {
            return Err("all repeat thresholds must be >= 1".into());
        }
        Ok(())
    }
}

/// Witness of a multiple repetition: a substring and every start offset
/// (char indices, ascending; overlapping occurrences count).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultipleWitness {
    pub substring: String,
    pub offsets: Vec<usize>,
}

impl MultipleWitness {
    /// Re-checks the claim literally against `text`.
    pub fn verify(&self, text: &str, min_len: usize, min_count: usize) -> bool {
        let chars: Vec<char> = text.chars().collect();
        let sub: Vec<char> = self.substring.chars().collect();
        if sub.len() <= min_len || self.offsets.len() < min_count {
            return false;
        }
        let distinct: HashSet<usize> = self.offsets.iter().copied().collect();
        if distinct.len() != self.offsets.len() || !self.offsets.windows(2).all(|w| w[0] < w[1]) {
            return false;
        }
        self.offsets.iter().all(|&off| {
            off + sub.len() <= chars.len() && chars[off..off + sub.len()] == sub[..]
        })
    }
}

/// Witness of a tandem repetition: `copies` adjacent copies of `period`
/// starting at char offset `offset`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TandemWitness {
    pub period: String,
    pub offset: usize,
    pub copies: usize,
}

impl TandemWitness {
    /// Re-checks the claim literally against `text`.
    pub fn verify(&self, text: &str, min_len: usize, min_count: usize) -> bool {
        let chars: Vec<char> = text.chars().collect();
        let period: Vec<char> = self.period.chars().collect();
        if period.len() <= min_len || self.copies < min_count {
            return false;
        }
        let total = period.len() * self.copies;
        if self.offset + total > chars.len() {
            return false;
        }
        (0..total).all(|i| chars[self.offset + i] == period[i % period.len()])
    }
}

/// Combined verdict for one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub multiple: Option<MultipleWitness>,
    pub tandem: Option<TandemWitness>,
    pub cycle: bool,
}

impl RepeatReport {
    /// True when any pathology was detected.
    pub fn is_pathological(&self) -> bool {
        self.cycle || self.multiple.is_some() || self.tandem.is_some()
    }
}

const MOD: u64 = (1 << 61) - 1;
const BASE: u64 = 1_684_530_247_912_339;

fn mul(x: u64, y: u64) -> u64 {
    let t = x as u128 * y as u128;
    let t = (t >> 61) + (t & MOD as u128);
    reduce(t as u64)
}

fn reduce(x: u64) -> u64 {
    if x >= MOD {
        x - MOD
    } else {
        x
    }
}

/// Prefix hashes over a char slice; `get(l, r)` is the hash of `s[l..r]`.
struct PrefixHash {
    hash: Vec<u64>,
    pow: Vec<u64>,
}

impl PrefixHash {
    fn new(s: &[char]) -> Self {
        let n = s.len();
        let mut hash = Vec::with_capacity(n + 1);
        let mut pow = Vec::with_capacity(n + 1);
        hash.push(0);
        pow.push(1);
        for (i, &c) in s.iter().enumerate() {
            hash.push(reduce(mul(hash[i], BASE) + c as u64 + 1));
            pow.push(mul(pow[i], BASE));
        }
        Self { hash, pow }
    }

    fn get(&self, l: usize, r: usize) -> u64 {
        reduce(self.hash[r] + MOD - mul(self.hash[l], self.pow[r - l]))
    }
}

/// Finds a substring of length `> min_len` occurring at `>= min_count`
/// distinct start positions (overlaps allowed). By monotonicity it suffices
/// to scan windows of length exactly `min_len + 1`: any longer repeat implies
/// a repeat of its prefix at that length. Windows are grouped by rolling
/// hash, every group is confirmed by direct character comparison, and the
/// qualifying group with the smallest first offset wins.
pub fn find_multiple_repetition(
    text: &str,
    min_len: usize,
    min_count: usize,
) -> Option<MultipleWitness> {
    assert!(min_len >= 1 && min_count >= 1, "thresholds must be >= 1");
    let chars: Vec<char> = text.chars().collect();
    let len = min_len + 1;
    if chars.len() < len {
        return None;
    }
    let ph = PrefixHash::new(&chars);
    let mut windows: Vec<(u64, usize)> = (0..=chars.len() - len)
        .map(|pos| (ph.get(pos, pos + len), pos))
        .collect();
    windows.sort_unstable();

    let mut best: Option<MultipleWitness> = None;
    let mut run_start = 0;
    for i in 0..=windows.len() {
        let run_ends = i == windows.len() || windows[i].0 != windows[run_start].0;
        if !run_ends {
            continue;
        }
        let run = &windows[run_start..i];
        run_start = i;
        if run.len() < min_count {
            continue;
        }
        // Split the hash bucket into groups of literally equal windows
        // (hash collisions land in separate groups).
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for &(_, pos) in run {
            let slot = groups.iter_mut().find(|g| {
                let rep = g[0];
                chars[rep..rep + len] == chars[pos..pos + len]
            });
            match slot {
                Some(g) => g.push(pos),
                None => groups.push(vec![pos]),
            }
        }
        for offsets in groups {
            if offsets.len() < min_count {
                continue;
            }
            let first = offsets[0];
            if best.as_ref().map_or(true, |b| first < b.offsets[0]) {
                best = Some(MultipleWitness {
                    substring: chars[first..first + len].iter().collect(),
                    offsets,
                });
            }
        }
    }
    debug_assert!(best
        .as_ref()
        .map_or(true, |w| w.verify(text, min_len, min_count)));
    best
}

/// Longest common extension helpers over a prefix-hash table, with direct
/// character fallback used when a witness fails verification (hash collision).
struct Lce<'a> {
    chars: &'a [char],
    ph: PrefixHash,
}

impl<'a> Lce<'a> {
    fn new(chars: &'a [char]) -> Self {
        Self {
            chars,
            ph: PrefixHash::new(chars),
        }
    }

    /// Longest `m` with `chars[a..a+m] == chars[b..b+m]` (binary search on
    /// hashes).
    fn forward(&self, a: usize, b: usize) -> usize {
        let cap = self.chars.len() - a.max(b);
        let (mut lo, mut hi) = (0, cap);
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if self.ph.get(a, a + mid) == self.ph.get(b, b + mid) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Longest `m` with `chars[a-m..a] == chars[b-m..b]`.
    fn backward(&self, a: usize, b: usize) -> usize {
        let cap = a.min(b);
        let (mut lo, mut hi) = (0, cap);
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if self.ph.get(a - mid, a) == self.ph.get(b - mid, b) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Collision-proof variants: direct character loops.
    fn forward_exact(&self, a: usize, b: usize) -> usize {
        let cap = self.chars.len() - a.max(b);
        (0..cap)
            .take_while(|&m| self.chars[a + m] == self.chars[b + m])
            .count()
    }

    fn backward_exact(&self, a: usize, b: usize) -> usize {
        let cap = a.min(b);
        (1..=cap)
            .take_while(|&m| self.chars[a - m] == self.chars[b - m])
            .count()
    }
}

/// Finds `min_count` or more adjacent copies of a period longer than
/// `min_len`. For each candidate period length `l`, anchors are placed every
/// `l` positions; a common extension backward/forward around an anchor pair
/// `(a, a+l)` of combined length `>= (min_count - 1) * l` pins an
/// `l`-periodic region long enough to contain the required copies. Anchor
/// pairs per period sum to `O(n log n)` and each costs one LCE query.
pub fn find_tandem_repetition(
    text: &str,
    min_len: usize,
    min_count: usize,
) -> Option<TandemWitness> {
    assert!(min_len >= 1 && min_count >= 1, "thresholds must be >= 1");
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    if min_count == 1 {
        // Degenerate: a single "copy" is just any long-enough substring.
        if n > min_len {
            return Some(TandemWitness {
                period: chars[..min_len + 1].iter().collect(),
                offset: 0,
                copies: 1,
            });
        }
        return None;
    }
    if n < (min_len + 1) * min_count {
        return None;
    }
    let lce = Lce::new(&chars);
    let needed = min_count - 1;
    for period in (min_len + 1)..=(n / min_count) {
        let mut a = 0;
        while a + period < n {
            let b = a + period;
            let mut bl = lce.backward(a, b);
            let mut fl = lce.forward(a, b);
            if bl + fl >= needed * period {
                let witness = tandem_witness(&chars, a - bl, period, bl + fl + period);
                if witness.verify(text, min_len, min_count) {
                    return Some(witness);
                }
                // Hash collision inflated an extension: redo this pair
                // exactly and re-evaluate.
                bl = lce.backward_exact(a, b);
                fl = lce.forward_exact(a, b);
                if bl + fl >= needed * period {
                    let witness = tandem_witness(&chars, a - bl, period, bl + fl + period);
                    debug_assert!(witness.verify(text, min_len, min_count));
                    return Some(witness);
                }
            }
            a += period;
        }
    }
    None
}

fn tandem_witness(chars: &[char], start: usize, period: usize, region_len: usize) -> TandemWitness {
    TandemWitness {
        period: chars[start..start + period].iter().collect(),
        offset: start,
        copies: region_len / period,
    }
}

/// A generation is a cycle when it ran into the length cap while repeating:
/// the cap flag is set and a tandem repetition (period longer than the
/// config's tandem threshold, 2 copies) ends exactly at the final character.
/// Truncated trailing copies are covered automatically: the rotated period
/// still yields a suffix square inside the periodic region.
pub fn detect_cycle(text: &str, hit_generation_cap: bool, config: &RepeatConfig) -> bool {
    if !hit_generation_cap {
        return false;
    }
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let min_len = config.tandem_min_len;
    if n < 2 * (min_len + 1) {
        return false;
    }
    let ph = PrefixHash::new(&chars);
    for period in (min_len + 1)..=(n / 2) {
        if ph.get(n - 2 * period, n - period) == ph.get(n - period, n)
            && (0..period).all(|i| chars[n - 2 * period + i] == chars[n - period + i])
        {
            return true;
        }
    }
    false
}

/// Runs all three detectors on one response.
pub fn scan_response(text: &str, hit_generation_cap: bool, config: &RepeatConfig) -> RepeatReport {
    RepeatReport {
        multiple: find_multiple_repetition(text, config.multi_min_len, config.multi_min_count),
        tandem: find_tandem_repetition(text, config.tandem_min_len, config.tandem_min_count),
        cycle: detect_cycle(text, hit_generation_cap, config),
    }
}

/// Aggregate shares of cycles and (non-cycle) repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatRates {
    pub total: usize,
    pub cycles: usize,
    pub repetitions: usize,
}

impl RepeatRates {
    pub fn cycle_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.cycles as f64 / self.total as f64
        }
    }

    pub fn repetition_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.repetitions as f64 / self.total as f64
        }
    }

    /// Combined share of pathological responses.
    pub fn pathological_rate(&self) -> f64 {
        self.cycle_rate() + self.repetition_rate()
    }

    /// CSV export: `total,cycles,repetitions,cycle_rate,repetition_rate`.
    pub fn to_csv(&self) -> String {
        format!(
            "total,cycles,repetitions,cycle_rate,repetition_rate\n{},{},{},{:.4},{:.4}\n",
            self.total,
            self.cycles,
            self.repetitions,
            self.cycle_rate(),
            self.repetition_rate()
        )
    }
}

/// Scans a set of responses: a response counts as a cycle when
/// [`detect_cycle`] fires, and as a repetition when either repetition
/// detector fires and it is not already counted as a cycle. The two counts
/// are disjoint by construction.
pub fn repeat_rate<'a>(
    responses: impl IntoIterator<Item = (&'a str, bool)>,
    config: &RepeatConfig,
) -> RepeatRates {
    let mut rates = RepeatRates {
        total: 0,
        cycles: 0,
        repetitions: 0,
    };
    for (text, hit_cap) in responses {
        rates.total += 1;
        let report = scan_response(text, hit_cap, config);
        if report.cycle {
            rates.cycles += 1;
        } else if report.multiple.is_some() || report.tandem.is_some() {
            rates.repetitions += 1;
        }
    }
    rates
}

/// One response record for batch scanning:
/// JSONL `{"id", "text", "hit_cap"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub id: String,
    pub text: String,
    pub hit_cap: bool,
}

/// Trigram distance: `1 - Jaccard(trigram set of a, trigram set of b)`.
/// Symmetric, in `[0, 1]`, zero exactly when the trigram sets coincide.
/// Texts shorter than 3 chars have empty trigram sets; two empty sets are
/// identical (distance 0), one empty set against a non-empty one is fully
/// distant (1).
pub fn response_distance(a: &str, b: &str) -> f64 {
    let ta = trigrams(a);
    let tb = trigrams(b);
    if ta.is_empty() && tb.is_empty() {
        return 0.0;
    }
    let inter = ta.intersection(&tb).count();
    let union = ta.len() + tb.len() - inter;
    1.0 - inter as f64 / union as f64
}

fn trigrams(s: &str) -> HashSet<[char; 3]> {
    let chars: Vec<char> = s.chars().collect();
    chars
        .windows(3)
        .map(|w| [w[0], w[1], w[2]])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle at the reduction length: checks whether any window
    /// of length `min_len + 1` occurs at `min_count` distinct starts.
    fn multiple_oracle(text: &str, min_len: usize, min_count: usize) -> bool {
        let chars: Vec<char> = text.chars().collect();
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

    /// Exhaustive oracle over ALL substring lengths (no reduction assumed).
    fn multiple_oracle_all_lengths(text: &str, min_len: usize, min_count: usize) -> bool {
        let chars: Vec<char> = text.chars().collect();
        for len in (min_len + 1)..=chars.len() {
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
        }
        false
    }

    /// Brute-force tandem oracle: tries every (period, start).
    fn tandem_oracle(text: &str, min_len: usize, min_count: usize) -> bool {
        let chars: Vec<char> = text.chars().collect();
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

    fn random_text(rng: &mut ChaCha8Rng, len: usize, alphabet: usize) -> String {
        (0..len)
            .map(|_| (b'a' + rng.gen_range(0..alphabet) as u8) as char)
            .collect()
    }

    #[test]
    fn short_text_yields_no_multiple_witness() {
        assert!(find_multiple_repetition("abc", 3, 2).is_none());
        assert!(find_multiple_repetition("", 1, 1).is_none());
    }

    #[test]
    fn repeated_block_is_found_with_offsets() {
        let text = "abcX".repeat(9);
        let w = find_multiple_repetition(&text, 3, 7).expect("witness");
        assert!(w.verify(&text, 3, 7));
        assert!(w.offsets.len() >= 7);
        assert_eq!(w.substring.chars().count(), 4);
    }

    #[test]
    fn multiple_detector_matches_oracle_on_random_strings() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for case in 0..400 {
            let len = rng.gen_range(1..=200);
            let alphabet = rng.gen_range(2..=4);
            let text = random_text(&mut rng, len, alphabet);
            let min_len = rng.gen_range(1..=6);
            let min_count = rng.gen_range(2..=5);
            let got = find_multiple_repetition(&text, min_len, min_count);
            let expected = multiple_oracle(&text, min_len, min_count);
            assert_eq!(got.is_some(), expected, "case {case}: {text:?}");
            if let Some(w) = got {
                assert!(w.verify(&text, min_len, min_count), "case {case}");
            }
        }
    }

    #[test]
    fn length_reduction_agrees_with_all_length_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..300 {
            let len = rng.gen_range(1..=30);
            let text = random_text(&mut rng, len, 2);
            let min_len = rng.gen_range(1..=4);
            let min_count = rng.gen_range(2..=4);
            assert_eq!(
                multiple_oracle_all_lengths(&text, min_len, min_count),
                find_multiple_repetition(&text, min_len, min_count).is_some(),
                "{text:?} min_len={min_len} min_count={min_count}"
            );
        }
    }

    #[test]
    fn minimal_tandem_square_is_found() {
        let p = "abcd"; // |p| = min_len + 1 with min_len = 3
        let text = format!("{p}{p}");
        let w = find_tandem_repetition(&text, 3, 2).expect("witness");
        assert_eq!(w.offset, 0);
        assert!(w.copies >= 2);
        assert!(w.verify(&text, 3, 2));
    }

    #[test]
    fn non_adjacent_copies_do_not_count_as_tandem() {
        let text = "abcdeXYZWVabcde";
        assert!(find_tandem_repetition(text, 4, 2).is_none());
    }

    #[test]
    fn tandem_detector_matches_oracle_on_random_strings() {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        for case in 0..400 {
            let len = rng.gen_range(1..=200);
            let alphabet = rng.gen_range(2..=4);
            let mut text = random_text(&mut rng, len, alphabet);
            // Plant a tandem array in half the cases.
            if rng.gen_bool(0.5) && len >= 8 {
                let period = rng.gen_range(2..=len / 4);
                let copies = rng.gen_range(2..=3);
                let unit = random_text(&mut rng, period, alphabet);
                let insert_at = rng.gen_range(0..=text.len().min(len / 2));
                let planted: String = unit.repeat(copies);
                text.insert_str(insert_at, &planted);
            }
            let min_len = rng.gen_range(1..=6);
            let min_count = rng.gen_range(2..=3);
            let got = find_tandem_repetition(&text, min_len, min_count);
            let expected = tandem_oracle(&text, min_len, min_count);
            assert_eq!(got.is_some(), expected, "case {case}: {text:?}");
            if let Some(w) = got {
                assert!(w.verify(&text, min_len, min_count), "case {case}");
            }
        }
    }

    #[test]
    fn raising_thresholds_never_flips_negative_to_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        for _ in 0..100 {
            let len = rng.gen_range(10..=120);
            let text = random_text(&mut rng, len, 2);
            for min_len in 1..=4 {
                for min_count in 2..=4 {
                    let base = find_multiple_repetition(&text, min_len, min_count).is_some();
                    let longer = find_multiple_repetition(&text, min_len + 1, min_count).is_some();
                    let more = find_multiple_repetition(&text, min_len, min_count + 1).is_some();
                    assert!(base || !longer);
                    assert!(base || !more);

                    let tbase = find_tandem_repetition(&text, min_len, min_count).is_some();
                    let tlonger = find_tandem_repetition(&text, min_len + 1, min_count).is_some();
                    let tmore = find_tandem_repetition(&text, min_len, min_count + 1).is_some();
                    assert!(tbase || !tlonger);
                    assert!(tbase || !tmore);
                }
            }
        }
    }

    #[test]
    fn cycle_requires_cap_and_terminal_repeat() {
        let config = RepeatConfig {
            tandem_min_len: 4,
            ..Default::default()
        };
        let cyclic = format!("intro {}", "pattern!".repeat(5));
        assert!(detect_cycle(&cyclic, true, &config));
        assert!(!detect_cycle(&cyclic, false, &config));

        // Tandem present but ending well before the cap: not a cycle. The
        // tail must itself be repetition-free, so use distinct characters.
        let tail: String = ('A'..='Z').chain('0'..='9').collect();
        let early = format!("{}{}", "pattern!".repeat(5), tail);
        assert!(!detect_cycle(&early, true, &config));
        // The tandem itself is still found.
        assert!(find_tandem_repetition(&early, 4, 2).is_some());
    }

    #[test]
    fn cycle_detects_truncated_final_copy() {
        let config = RepeatConfig {
            tandem_min_len: 4,
            ..Default::default()
        };
        // The cap cut the generation mid-copy; the rotated period still forms
        // a terminal square.
        let text = format!("start {}{}", "repeatme ".repeat(4), "repea");
        assert!(detect_cycle(&text, true, &config));
    }

    #[test]
    fn repeat_rates_on_a_constructed_fixture() {
        let config = RepeatConfig {
            multi_min_len: 3,
            multi_min_count: 4,
            tandem_min_len: 5,
            tandem_min_count: 2,
        };
        let mut responses: Vec<(String, bool)> = Vec::new();
        // 2 cycles out of 100.
        for _ in 0..2 {
            responses.push(("cycling ".repeat(8), true));
        }
        // 11 repetitions out of 100 (no cap).
        for _ in 0..11 {
            responses.push(("abcdef".repeat(3), false));
        }
        // 87 clean.
        for i in 0..87 {
            responses.push((format!("unique and clean response {i}"), false));
        }
        let rates = repeat_rate(responses.iter().map(|(t, c)| (t.as_str(), *c)), &config);
        assert_eq!(rates.total, 100);
        assert_eq!(rates.cycles, 2);
        assert_eq!(rates.repetitions, 11);
        assert!((rates.cycle_rate() - 0.02).abs() < 1e-12);
        assert!((rates.repetition_rate() - 0.11).abs() < 1e-12);
    }

    #[test]
    fn all_clean_responses_rate_zero() {
        let config = RepeatConfig::default();
        let responses = [("a perfectly ordinary response", false)];
        let rates = repeat_rate(responses.iter().copied(), &config);
        assert_eq!((rates.cycles, rates.repetitions), (0, 0));
    }

    #[test]
    fn distance_identity_and_disjoint() {
        assert_eq!(response_distance("same text", "same text"), 0.0);
        assert_eq!(response_distance("aaaa", "bbbb"), 1.0);
        assert_eq!(response_distance("", ""), 0.0);
        assert_eq!(response_distance("", "something"), 1.0);
    }

    #[test]
    fn distance_hand_computation() {
        // "abcd" -> {abc, bcd}; "abce" -> {abc, bce}
        // intersection 1, union 3 => distance 2/3.
        let d = response_distance("abcd", "abce");
        assert!((d - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn distance_is_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..200 {
            let la = rng.gen_range(0..40);
            let lb = rng.gen_range(0..40);
            let a = random_text(&mut rng, la, 3);
            let b = random_text(&mut rng, lb, 3);
            let d1 = response_distance(&a, &b);
            let d2 = response_distance(&b, &a);
            assert_eq!(d1, d2);
            assert!((0.0..=1.0).contains(&d1));
        }
    }

    #[test]
    fn scan_response_combines_detectors() {
        let config = RepeatConfig {
            multi_min_len: 3,
            multi_min_count: 4,
            tandem_min_len: 5,
            tandem_min_count: 2,
        };
        let report = scan_response(&"looong repeated ".repeat(6), true, &config);
        assert!(report.multiple.is_some());
        assert!(report.tandem.is_some());
        assert!(report.cycle);
        assert!(report.is_pathological());

        let clean = scan_response("nothing to see here", false, &config);
        assert!(!clean.is_pathological());
    }
}
