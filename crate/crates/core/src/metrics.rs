//! Reconstruction quality metrics and compression ratios.
//!
//! Character-level metrics (Levenshtein, Hamming) work on Unicode scalar
//! values. Word-level metrics (ROUGE, BLEU) split on the same whitespace as
//! the segmenter. Comparing two empty texts scores 1.0 everywhere.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmenter::is_separator_char;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("original token count must be positive")]
    EmptyOriginal,
    #[error("cannot aggregate an empty list of reports")]
    EmptyAggregate,
}

/// Column order used for CSV output.
pub const METRIC_COLUMNS: [&str; 9] = [
    "exact_match",
    "levenshtein",
    "hamming",
    "rouge1_recall",
    "rouge1_f1",
    "rougeL_recall",
    "rougeL_f1",
    "bleu",
    "string_presence",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub original_tokens: usize,
    pub compressed_tokens: usize,
    pub dictionary_tokens: usize,
    /// `1 - compressed / original`
    pub cr: f64,
    /// `1 - (compressed + dictionary) / original`; negative when the
    /// dictionary costs more than it saves.
    pub cr_input: f64,
}

pub fn compression_ratio(
    original_tokens: usize,
    compressed_tokens: usize,
    dictionary_tokens: usize,
) -> Result<RatioReport, MetricsError> {
    if original_tokens == 0 {
        return Err(MetricsError::EmptyOriginal);
    }
    let orig = original_tokens as f64;
    Ok(RatioReport {
        original_tokens,
        compressed_tokens,
        dictionary_tokens,
        cr: 1.0 - compressed_tokens as f64 / orig,
        cr_input: 1.0 - (compressed_tokens + dictionary_tokens) as f64 / orig,
    })
}

fn words(text: &str) -> Vec<&str> {
    text.split(is_separator_char).filter(|w| !w.is_empty()).collect()
}

/// Classic two-row dynamic-programming edit distance over chars.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / max_len as f64
}

/// Position-wise matches over the shorter length, divided by the longer
/// length, so any length difference counts as mismatches.
pub fn hamming_similarity(a: &str, b: &str) -> f64 {
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 1.0;
    }
    let matches = a.chars().zip(b.chars()).filter(|(x, y)| x == y).count();
    matches as f64 / max_len as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_overlap(overlap: usize, cand_len: usize, ref_len: usize) -> Self {
        if cand_len == 0 && ref_len == 0 {
            return Self { recall: 1.0, precision: 1.0, f1: 1.0 };
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let recall = ratio(overlap, ref_len);
        let precision = ratio(overlap, cand_len);
        let f1 = if recall + precision == 0.0 {
            0.0
        } else {
            2.0 * recall * precision / (recall + precision)
        };
        Self { recall, precision, f1 }
    }
}

fn counts<'a>(items: impl Iterator<Item = &'a [&'a str]>) -> HashMap<&'a [&'a str], usize> {
    let mut map = HashMap::new();
    for item in items {
        *map.entry(item).or_insert(0) += 1;
    }
    map
}

fn clipped_overlap<'a>(cand: &'a [&'a str], reference: &'a [&'a str], n: usize) -> usize {
    let ref_counts = counts(reference.windows(n));
    counts(cand.windows(n))
        .into_iter()
        .map(|(gram, c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum()
}

/// Clipped unigram overlap.
pub fn rouge1(candidate: &str, reference: &str) -> RougeScore {
    let (c, r) = (words(candidate), words(reference));
    let overlap = if c.is_empty() || r.is_empty() { 0 } else { clipped_overlap(&c, &r, 1) };
    RougeScore::from_overlap(overlap, c.len(), r.len())
}

/// Longest common word subsequence.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let (c, r) = (words(candidate), words(reference));
    RougeScore::from_overlap(lcs_len(&c, &r), c.len(), r.len())
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const BLEU_MAX_ORDER: usize = 4;
pub const BLEU_EPSILON: f64 = 1e-9;

/// Sentence BLEU over word units.
///
/// Uses orders `1..=min(4, |cand|, |ref|)` so short identical texts still
/// score 1.0. An order with no clipped matches contributes `ε / total`
/// instead of zero. Brevity penalty `exp(1 - r/c)` applies when the
/// candidate is shorter.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let (c, r) = (words(candidate), words(reference));
    match (c.is_empty(), r.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let max_order = BLEU_MAX_ORDER.min(c.len()).min(r.len());
    let mut log_sum = 0.0;
    for n in 1..=max_order {
        let matches = clipped_overlap(&c, &r, n);
        let total = c.len() + 1 - n;
        let numerator = if matches == 0 { BLEU_EPSILON } else { matches as f64 };
        log_sum += (numerator / total as f64).ln();
    }
    let brevity = if c.len() < r.len() {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    } else {
        1.0
    };
    brevity * (log_sum / max_order as f64).exp()
}

pub fn exact_match(a: &str, b: &str) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// Fraction of `expected` substrings found in `output`; 1.0 when nothing
/// is expected.
pub fn string_presence<S: AsRef<str>>(expected: &[S], output: &str) -> f64 {
    if expected.is_empty() {
        return 1.0;
    }
    let hits = expected.iter().filter(|e| output.contains(e.as_ref())).count();
    hits as f64 / expected.len() as f64
}

/// Substrings a faithful reconstruction of `original` must contain: its
/// non-blank lines.
pub fn expected_substrings(original: &str) -> Vec<&str> {
    original.lines().filter(|l| !l.trim().is_empty()).collect()
}

/// One value per metric; used for means as well as dispersions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub exact_match: f64,
    pub levenshtein: f64,
    pub hamming: f64,
    pub rouge1_recall: f64,
    pub rouge1_f1: f64,
    #[serde(rename = "rougeL_recall")]
    pub rouge_l_recall: f64,
    #[serde(rename = "rougeL_f1")]
    pub rouge_l_f1: f64,
    pub bleu: f64,
    pub string_presence: f64,
}

impl MetricScores {
    pub fn to_array(self) -> [f64; 9] {
        [
            self.exact_match,
            self.levenshtein,
            self.hamming,
            self.rouge1_recall,
            self.rouge1_f1,
            self.rouge_l_recall,
            self.rouge_l_f1,
            self.bleu,
            self.string_presence,
        ]
    }

    pub fn from_array(v: [f64; 9]) -> Self {
        Self {
            exact_match: v[0],
            levenshtein: v[1],
            hamming: v[2],
            rouge1_recall: v[3],
            rouge1_f1: v[4],
            rouge_l_recall: v[5],
            rouge_l_f1: v[6],
            bleu: v[7],
            string_presence: v[8],
        }
    }

    /// The single "rouge" figure reported in summaries: ROUGE-1 recall.
    pub fn rouge(&self) -> f64 {
        self.rouge1_recall
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispersionKind {
    /// Standard error of the mean; used for per-log scores.
    Sem,
    /// Sample standard deviation; used for per-batch scores.
    Std,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub kind: DispersionKind,
    pub values: MetricScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    #[serde(flatten)]
    pub scores: MetricScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<Dispersion>,
}

/// Scores `candidate` against `reference` with every metric.
pub fn score_pair<S: AsRef<str>>(reference: &str, candidate: &str, expected: &[S]) -> MetricReport {
    let r1 = rouge1(candidate, reference);
    let rl = rouge_l(candidate, reference);
    MetricReport {
        n: 1,
        scores: MetricScores {
            exact_match: exact_match(reference, candidate),
            levenshtein: levenshtein_similarity(reference, candidate),
            hamming: hamming_similarity(reference, candidate),
            rouge1_recall: r1.recall,
            rouge1_f1: r1.f1,
            rouge_l_recall: rl.recall,
            rouge_l_f1: rl.f1,
            bleu: bleu(candidate, reference),
            string_presence: string_presence(expected, candidate),
        },
        dispersion: None,
    }
}

/// Scores a reconstruction using the original's non-blank lines as the
/// expected substrings.
pub fn score_reconstruction(original: &str, candidate: &str) -> MetricReport {
    score_pair(original, candidate, &expected_substrings(original))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregateMode {
    PerLog,
    PerBatch,
}

/// Means of every metric (weighting each item once) with SEM for per-log
/// mode or sample standard deviation for per-batch mode.
pub fn aggregate(items: &[MetricReport], mode: AggregateMode) -> Result<MetricReport, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptyAggregate);
    }
    let n = items.len() as f64;
    let mut mean = [0.0; 9];
    for item in items {
        for (m, v) in mean.iter_mut().zip(item.scores.to_array()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut spread = [0.0; 9];
    if items.len() > 1 {
        for item in items {
            for ((s, v), m) in spread.iter_mut().zip(item.scores.to_array()).zip(mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in spread.iter_mut() {
            let std = (*s / (n - 1.0)).sqrt();
            *s = match mode {
                AggregateMode::PerBatch => std,
                AggregateMode::PerLog => std / n.sqrt(),
            };
        }
    }
    let kind = match mode {
        AggregateMode::PerLog => DispersionKind::Sem,
        AggregateMode::PerBatch => DispersionKind::Std,
    };
    Ok(MetricReport {
        n: items.len(),
        scores: MetricScores::from_array(mean),
        dispersion: Some(Dispersion { kind, values: MetricScores::from_array(spread) }),
    })
}
