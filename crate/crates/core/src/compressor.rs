//! Hierarchical dictionary-encoding compression.
//!
//! Window lengths are processed from `l_max` down to `l_min`. At each length
//! every window free of meta-tokens is grouped by its exact rendered text,
//! candidates are ranked by frequency, and each candidate keeps the
//! leftmost non-overlapping occurrences not already claimed at this length.
//! A candidate is admitted only when its surviving occurrence count `f`
//! satisfies
//!
//! ```text
//! (1 + f) * n(meta) + n(span) < f * n(span)
//! ```
//!
//! i.e. the meta-token occurrences plus the dictionary entry cost fewer
//! tokens than the repeated span itself. Admitted candidates are then
//! replaced in one sweep, and the next (shorter) length works on the result.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::dictionary::{Dictionary, DictionaryError, ParamsRecord};
use crate::metrics::{compression_ratio, MetricsError, RatioReport};
use crate::segmenter::{CostModel, WordSequence};

/// A placeholder `<M{index}>` standing for a dictionary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MetaToken(u64);

impl MetaToken {
    /// `None` for index 0.
    pub fn new(index: u64) -> Option<Self> {
        (index > 0).then_some(Self(index))
    }

    pub fn index(self) -> u64 {
        self.0
    }

    pub fn label(self) -> String {
        format!("<M{}>", self.0)
    }

    /// Parses a canonical label: `<M` + a positive index without leading
    /// zeros + `>`.
    pub fn parse(label: &str) -> Option<Self> {
        let digits = label.strip_prefix("<M")?.strip_suffix('>')?;
        if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok().and_then(Self::new)
    }
}

impl fmt::Display for MetaToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<M{}>", self.0)
    }
}

/// An occurrence of the pattern `<M[0-9]+>` inside some text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoundLabel {
    pub range: Range<usize>,
    /// Parsed index; saturates at `u64::MAX` for oversized digit runs.
    pub index: u64,
}

/// Iterates over all non-overlapping `<M[0-9]+>` matches, left to right.
pub fn find_meta_labels(text: &str) -> impl Iterator<Item = FoundLabel> + '_ {
    let bytes = text.as_bytes();
    let mut pos = 0;
    std::iter::from_fn(move || {
        while let Some(off) = text[pos..].find("<M") {
            let start = pos + off;
            let digits_start = start + 2;
            let digits_end = bytes[digits_start..]
                .iter()
                .position(|b| !b.is_ascii_digit())
                .map_or(bytes.len(), |p| digits_start + p);
            if digits_end > digits_start && bytes.get(digits_end) == Some(&b'>') {
                pos = digits_end + 1;
                let index = bytes[digits_start..digits_end].iter().fold(0u64, |acc, b| {
                    acc.saturating_mul(10).saturating_add(u64::from(b - b'0'))
                });
                return Some(FoundLabel { range: start..pos, index });
            }
            pos = start + 1;
        }
        None
    })
}

fn contains_meta_label(word: &str) -> bool {
    find_meta_labels(word).next().is_some()
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CompressError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("input contains a meta label with the maximum index; no labels left to assign")]
    ReservedIndexOverflow,
    #[error("selections overlap at word position {0}")]
    OverlappingSelections(usize),
    #[error("selection position {position} with length {length} exceeds sequence of {len} words")]
    SelectionOutOfRange { position: usize, length: usize, len: usize },
    #[error("dictionary invariant violated: {0}")]
    Dictionary(#[from] DictionaryError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressionParams {
    pub l_max: usize,
    pub l_min: usize,
    pub f_min: usize,
    pub cost_model: CostModel,
}

impl Default for CompressionParams {
    fn default() -> Self {
        Self { l_max: 10, l_min: 2, f_min: 2, cost_model: CostModel::WordUnit }
    }
}

impl CompressionParams {
    pub fn new(l_max: usize, f_min: usize, cost_model: CostModel) -> Self {
        Self { l_max, l_min: 2, f_min, cost_model }
    }

    pub fn validate(&self) -> Result<(), CompressError> {
        if self.l_min < 2 {
            return Err(CompressError::InvalidParams(format!("l_min must be >= 2, got {}", self.l_min)));
        }
        if self.l_max < self.l_min {
            return Err(CompressError::InvalidParams(format!(
                "l_max ({}) must be >= l_min ({})",
                self.l_max, self.l_min
            )));
        }
        if self.f_min < 2 {
            return Err(CompressError::InvalidParams(format!("f_min must be >= 2, got {}", self.f_min)));
        }
        Ok(())
    }

    pub fn record(&self) -> ParamsRecord {
        ParamsRecord { l_max: self.l_max, l_min: self.l_min, f_min: self.f_min }
    }
}

/// A subsequence chosen for replacement at one window length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Rendered span: words plus the whitespace between them.
    pub subsequence: String,
    /// Sorted, pairwise non-overlapping start positions.
    pub positions: Vec<usize>,
    pub meta: MetaToken,
    /// Span length in words.
    pub length: usize,
}

/// Whether replacing a span of `n_s` tokens occurring `f` times by a meta
/// token of `n_m` tokens saves tokens once the dictionary entry is paid for.
pub fn savings_holds(f: usize, n_s: usize, n_m: usize) -> bool {
    let (f, n_s, n_m) = (f as u128, n_s as u128, n_m as u128);
    (1 + f) * n_m + n_s < f * n_s
}

/// Selects the subsequences of `length` words to replace in `seq`.
///
/// `next_index` is the next meta index to hand out; it is advanced once per
/// admitted selection.
pub fn find_subsequences_at_length(
    seq: &WordSequence,
    length: usize,
    f_min: usize,
    next_index: &mut u64,
    model: &CostModel,
) -> Vec<Selection> {
    let n = seq.len();
    if length == 0 || n < length {
        return Vec::new();
    }
    let words = seq.words();
    let seps = seq.separators();

    // Interleaved ids: word k at 2k, the separator after it at 2k + 1. A
    // window starting at i spans ids[2i .. 2(i + length) - 1], so equal id
    // slices mean byte-identical rendered text.
    let mut interner: HashMap<&str, u32> = HashMap::new();
    let mut ids = Vec::with_capacity(2 * n);
    for k in 0..n {
        for part in [words[k].as_str(), seps[k + 1].as_str()] {
            let next = interner.len() as u32;
            ids.push(*interner.entry(part).or_insert(next));
        }
    }

    let mut meta_prefix = Vec::with_capacity(n + 1);
    meta_prefix.push(0usize);
    for w in words {
        meta_prefix.push(meta_prefix.last().unwrap() + usize::from(contains_meta_label(w)));
    }

    let mut group_of: HashMap<&[u32], usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..=n - length {
        if meta_prefix[i + length] != meta_prefix[i] {
            continue;
        }
        let key = &ids[2 * i..2 * (i + length) - 1];
        let g = *group_of.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }

    let span_bytes = |start: usize| -> usize {
        words[start..start + length].iter().map(String::len).sum::<usize>()
            + seps[start + 1..start + length].iter().map(String::len).sum::<usize>()
    };
    let mut candidates: Vec<(usize, Vec<usize>)> = groups
        .into_iter()
        .filter(|positions| positions.len() >= f_min)
        .map(|positions| (span_bytes(positions[0]), positions))
        .collect();
    // Frequency descending, then longer rendered text, then earlier first
    // occurrence. First occurrences are distinct, so the order is total.
    candidates.sort_by(|(bytes_a, pos_a), (bytes_b, pos_b)| {
        pos_b
            .len()
            .cmp(&pos_a.len())
            .then(bytes_b.cmp(bytes_a))
            .then(pos_a[0].cmp(&pos_b[0]))
    });

    let mut used = vec![false; n];
    let mut selected = Vec::new();
    for (_, positions) in candidates {
        let mut valid = Vec::with_capacity(positions.len());
        let mut next_free = 0;
        for p in positions {
            if p >= next_free && !used[p..p + length].iter().any(|&u| u) {
                valid.push(p);
                next_free = p + length;
            }
        }
        if valid.len() < f_min {
            continue;
        }
        let Some(meta) = MetaToken::new(*next_index) else { break };
        let n_s: usize = words[valid[0]..valid[0] + length]
            .iter()
            .map(|w| model.word_cost(w))
            .sum();
        let n_m = model.word_cost(&meta.label());
        if !savings_holds(valid.len(), n_s, n_m) {
            continue;
        }
        for &p in &valid {
            used[p..p + length].iter_mut().for_each(|u| *u = true);
        }
        let subsequence = seq
            .span_text(valid[0], length)
            .expect("window lies inside the sequence");
        selected.push(Selection { subsequence, positions: valid, meta, length });
        match next_index.checked_add(1) {
            Some(i) => *next_index = i,
            None => break,
        }
    }
    selected
}

/// Replaces every selected occurrence with its meta label.
///
/// The separator emitted after a meta-token is the one that followed the
/// replaced span's last word, so whitespace is carried through unchanged.
pub fn apply_replacements(seq: &WordSequence, selections: &[Selection]) -> Result<WordSequence, CompressError> {
    let n = seq.len();
    let mut start_of: Vec<Option<usize>> = vec![None; n];
    let mut covered = vec![false; n];
    for (k, sel) in selections.iter().enumerate() {
        for &p in &sel.positions {
            let end = p
                .checked_add(sel.length)
                .filter(|&e| e <= n && sel.length > 0)
                .ok_or(CompressError::SelectionOutOfRange { position: p, length: sel.length, len: n })?;
            if let Some(q) = (p..end).find(|&q| covered[q]) {
                return Err(CompressError::OverlappingSelections(q));
            }
            covered[p..end].iter_mut().for_each(|c| *c = true);
            start_of[p] = Some(k);
        }
    }

    let words = seq.words();
    let seps = seq.separators();
    let mut out_words = Vec::with_capacity(n);
    let mut out_seps = Vec::with_capacity(n + 1);
    out_seps.push(seps[0].clone());
    let mut i = 0;
    while i < n {
        match start_of[i] {
            Some(k) => {
                out_words.push(selections[k].meta.label());
                i += selections[k].length;
            }
            None => {
                out_words.push(words[i].clone());
                i += 1;
            }
        }
        out_seps.push(seps[i].clone());
    }
    Ok(WordSequence::from_parts_unchecked(out_words, out_seps))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressionResult {
    pub compressed: WordSequence,
    pub dictionary: Dictionary,
    pub original_tokens: usize,
    pub compressed_tokens: usize,
    pub dictionary_tokens: usize,
    /// Source words that already contained a `<M#>` pattern and were left
    /// untouched.
    pub reserved_words: usize,
}

impl CompressionResult {
    pub fn compressed_text(&self) -> String {
        self.compressed.render()
    }

    pub fn ratio(&self) -> Result<RatioReport, MetricsError> {
        compression_ratio(self.original_tokens, self.compressed_tokens, self.dictionary_tokens)
    }
}

pub fn compress(text: &str, params: &CompressionParams) -> Result<CompressionResult, CompressError> {
    params.validate()?;
    let model = &params.cost_model;
    let original = WordSequence::segment(text);

    let mut reserved_words = 0;
    let mut max_reserved: Option<u64> = None;
    for word in original.words() {
        let mut hit = false;
        for found in find_meta_labels(word) {
            hit = true;
            max_reserved = Some(max_reserved.map_or(found.index, |m| m.max(found.index)));
        }
        reserved_words += usize::from(hit);
    }
    let first_index = match max_reserved {
        None => 1,
        Some(m) => m.checked_add(1).ok_or(CompressError::ReservedIndexOverflow)?.max(1),
    };

    let mut dictionary = Dictionary::new(Some(params.record()), model.name(), first_index);
    let mut next_index = first_index;
    let mut working = original.clone();
    for length in (params.l_min..=params.l_max).rev() {
        if length > working.len() {
            continue;
        }
        let selections = find_subsequences_at_length(&working, length, params.f_min, &mut next_index, model);
        if selections.is_empty() {
            continue;
        }
        working = apply_replacements(&working, &selections)?;
        for sel in selections {
            dictionary.insert(sel.meta, sel.subsequence)?;
        }
    }

    Ok(CompressionResult {
        original_tokens: model.sequence_cost(&original),
        compressed_tokens: model.sequence_cost(&working),
        dictionary_tokens: dictionary.token_cost(model),
        compressed: working,
        dictionary,
        reserved_words,
    })
}
