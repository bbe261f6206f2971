//! Whitespace segmentation and token cost models.
//!
//! Text is split into maximal runs of non-whitespace ("words") while every
//! whitespace run is kept verbatim, so rendering a [`WordSequence`] gives
//! back the input byte for byte. Whitespace here means ASCII space, tab,
//! CR, LF, form feed and vertical tab; anything else (including non-ASCII
//! spaces) is part of a word.
//!
//! Token costs are additive per word in every built-in model: separators
//! are free and the cost of a span is the sum of its words' costs.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

/// Returns true for the whitespace characters that delimit words.
pub fn is_separator_char(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\r' | '\n' | '\x0b' | '\x0c')
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("span {start}..{end} out of range for sequence of {len} words")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("invalid word {0:?}: words must be non-empty and whitespace-free")]
    InvalidWord(String),
    #[error("invalid separator {0:?}")]
    InvalidSeparator(String),
    #[error("separator count {separators} does not match word count {words} + 1")]
    ShapeMismatch { words: usize, separators: usize },
}

/// Segmented text that keeps the exact whitespace between words.
///
/// `separators[k]` is the whitespace run in front of `words[k]`; the last
/// separator is the trailing whitespace. Leading and trailing separators may
/// be empty, interior ones never are.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordSequence {
    words: Vec<String>,
    separators: Vec<String>,
}

impl WordSequence {
    pub fn segment(text: &str) -> Self {
        let mut words = Vec::new();
        let mut separators = Vec::new();
        let mut rest = text;
        loop {
            let ws_end = rest
                .find(|c: char| !is_separator_char(c))
                .unwrap_or(rest.len());
            separators.push(rest[..ws_end].to_string());
            rest = &rest[ws_end..];
            if rest.is_empty() {
                break;
            }
            let word_end = rest.find(is_separator_char).unwrap_or(rest.len());
            words.push(rest[..word_end].to_string());
            rest = &rest[word_end..];
            if rest.is_empty() {
                separators.push(String::new());
                break;
            }
        }
        Self { words, separators }
    }

    /// Builds a sequence from parts, checking the shape invariants.
    pub fn from_parts(words: Vec<String>, separators: Vec<String>) -> Result<Self, SegmentError> {
        if separators.len() != words.len() + 1 {
            return Err(SegmentError::ShapeMismatch {
                words: words.len(),
                separators: separators.len(),
            });
        }
        if let Some(w) = words
            .iter()
            .find(|w| w.is_empty() || w.chars().any(is_separator_char))
        {
            return Err(SegmentError::InvalidWord(w.clone()));
        }
        let last = separators.len() - 1;
        for (k, sep) in separators.iter().enumerate() {
            let interior = k != 0 && k != last;
            if (interior && sep.is_empty()) || !sep.chars().all(is_separator_char) {
                return Err(SegmentError::InvalidSeparator(sep.clone()));
            }
        }
        Ok(Self { words, separators })
    }

    pub(crate) fn from_parts_unchecked(words: Vec<String>, separators: Vec<String>) -> Self {
        debug_assert_eq!(separators.len(), words.len() + 1);
        Self { words, separators }
    }

    pub fn render(&self) -> String {
        let cap = self.words.iter().map(String::len).sum::<usize>()
            + self.separators.iter().map(String::len).sum::<usize>();
        let mut out = String::with_capacity(cap);
        for (sep, word) in self.separators.iter().zip(&self.words) {
            out.push_str(sep);
            out.push_str(word);
        }
        if let Some(trailing) = self.separators.last() {
            out.push_str(trailing);
        }
        out
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn separators(&self) -> &[String] {
        &self.separators
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Renders `length` words starting at `start` with the whitespace between
    /// them, excluding the separators on either side of the span.
    pub fn span_text(&self, start: usize, length: usize) -> Result<String, SegmentError> {
        self.check_span(start, length)?;
        let mut out = String::new();
        for k in start..start + length {
            if k > start {
                out.push_str(&self.separators[k]);
            }
            out.push_str(&self.words[k]);
        }
        Ok(out)
    }

    fn check_span(&self, start: usize, length: usize) -> Result<(), SegmentError> {
        match start.checked_add(length) {
            Some(end) if end <= self.words.len() => Ok(()),
            _ => Err(SegmentError::SpanOutOfRange {
                start,
                end: start.saturating_add(length),
                len: self.words.len(),
            }),
        }
    }
}

impl fmt::Display for WordSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Token count of the words `start..start+length` under `model`.
pub fn cost_of_span(
    seq: &WordSequence,
    start: usize,
    length: usize,
    model: &CostModel,
) -> Result<usize, SegmentError> {
    seq.check_span(start, length)?;
    Ok(seq.words[start..start + length]
        .iter()
        .map(|w| model.word_cost(w))
        .sum())
}

#[derive(Debug, Error)]
pub enum CostModelError {
    #[error("cannot read token table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("token table line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unknown cost model {0:?} (expected word, char or external:<path>)")]
    UnknownModel(String),
}

/// Precomputed per-word token counts, e.g. produced offline by a provider's
/// tokenizer. Words missing from the table use the char heuristic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenTable {
    counts: HashMap<String, usize>,
}

impl TokenTable {
    /// Parses newline-delimited `word<TAB>count` records. Blank lines are
    /// skipped; a repeated word keeps its last count.
    pub fn parse(text: &str) -> Result<Self, CostModelError> {
        let mut counts = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            let (word, count) = line.rsplit_once('\t').ok_or(CostModelError::Malformed {
                line: i + 1,
                message: "expected word<TAB>count".into(),
            })?;
            let count = count.trim().parse::<usize>().map_err(|e| CostModelError::Malformed {
                line: i + 1,
                message: format!("bad count {count:?}: {e}"),
            })?;
            counts.insert(word.to_string(), count);
        }
        Ok(Self { counts })
    }

    pub fn load(path: &Path) -> Result<Self, CostModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| CostModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.counts.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Token cost function used for every savings decision and ratio.
///
/// None of these reproduce a real LLM tokenizer; `External` is the way to
/// plug in provider-specific counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum CostModel {
    /// Every word (and every meta-token) costs one token.
    #[default]
    WordUnit,
    /// `ceil(bytes / 4)` per word, at least one.
    CharHeuristic,
    External(Arc<TokenTable>),
}

impl CostModel {
    /// Parses a selector: `word`, `char` or `external:<path>`.
    pub fn from_selector(selector: &str) -> Result<Self, CostModelError> {
        match selector {
            "word" => Ok(Self::WordUnit),
            "char" => Ok(Self::CharHeuristic),
            other => match other.strip_prefix("external:") {
                Some(path) if !path.is_empty() => {
                    Ok(Self::External(Arc::new(TokenTable::load(Path::new(path))?)))
                }
                _ => Err(CostModelError::UnknownModel(other.to_string())),
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::WordUnit => "word",
            Self::CharHeuristic => "char",
            Self::External(_) => "external",
        }
    }

    pub fn word_cost(&self, word: &str) -> usize {
        match self {
            Self::WordUnit => 1,
            Self::CharHeuristic => char_heuristic(word),
            Self::External(table) => table.get(word).unwrap_or_else(|| char_heuristic(word)),
        }
    }

    /// Cost of arbitrary text: the sum of its words' costs.
    pub fn cost(&self, text: &str) -> usize {
        text.split(is_separator_char)
            .filter(|w| !w.is_empty())
            .map(|w| self.word_cost(w))
            .sum()
    }

    pub fn sequence_cost(&self, seq: &WordSequence) -> usize {
        seq.words.iter().map(|w| self.word_cost(w)).sum()
    }
}

fn char_heuristic(word: &str) -> usize {
    word.len().div_ceil(4).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(words: &[&str], seps: &[&str]) -> WordSequence {
        WordSequence::from_parts(
            words.iter().map(|s| s.to_string()).collect(),
            seps.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn segment_examples() {
        assert_eq!(WordSequence::segment("a  b"), seq(&["a", "b"], &["", "  ", ""]));
        assert_eq!(WordSequence::segment(""), seq(&[], &[""]));
        assert_eq!(
            WordSequence::segment(" x\ny "),
            seq(&["x", "y"], &[" ", "\n", " "])
        );
        assert_eq!(WordSequence::segment(" \t "), seq(&[], &[" \t "]));
    }

    #[test]
    fn render_examples() {
        for t in ["a  b", "", " x\ny ", "\r\n", "tail\n", "non\u{a0}breaking"] {
            assert_eq!(WordSequence::segment(t).render(), t);
        }
        assert_eq!(WordSequence::segment("non\u{a0}breaking").len(), 1);
    }

    #[test]
    fn span_costs() {
        let s = WordSequence::segment("a b c");
        assert_eq!(cost_of_span(&s, 0, 3, &CostModel::WordUnit).unwrap(), 3);
        let s = WordSequence::segment("abcdefgh");
        assert_eq!(cost_of_span(&s, 0, 1, &CostModel::CharHeuristic).unwrap(), 2);
        assert_eq!(cost_of_span(&s, 0, 0, &CostModel::CharHeuristic).unwrap(), 0);
        assert_eq!(cost_of_span(&s, 1, 0, &CostModel::WordUnit).unwrap(), 0);
        assert!(matches!(
            cost_of_span(&s, 1, 1, &CostModel::WordUnit),
            Err(SegmentError::SpanOutOfRange { .. })
        ));
        assert!(cost_of_span(&s, usize::MAX, 2, &CostModel::WordUnit).is_err());
    }

    #[test]
    fn span_text_keeps_interior_whitespace() {
        let s = WordSequence::segment(" a\t b\nc ");
        assert_eq!(s.span_text(0, 2).unwrap(), "a\t b");
        assert_eq!(s.span_text(1, 2).unwrap(), "b\nc");
        assert_eq!(s.span_text(2, 0).unwrap(), "");
    }

    #[test]
    fn from_parts_rejects_bad_shapes() {
        let bad = WordSequence::from_parts(vec!["a".into(), "b".into()], vec!["".into(), "".into(), "".into()]);
        assert!(matches!(bad, Err(SegmentError::InvalidSeparator(_))));
        let bad = WordSequence::from_parts(vec!["a b".into()], vec!["".into(), "".into()]);
        assert!(matches!(bad, Err(SegmentError::InvalidWord(_))));
        let bad = WordSequence::from_parts(vec![], vec![]);
        assert!(matches!(bad, Err(SegmentError::ShapeMismatch { .. })));
    }

    #[test]
    fn cost_models() {
        assert_eq!(CostModel::WordUnit.cost(""), 0);
        assert_eq!(CostModel::CharHeuristic.cost(""), 0);
        assert_eq!(CostModel::CharHeuristic.cost("a abcde  abcdefgh"), 1 + 2 + 2);
        assert_eq!(CostModel::CharHeuristic.cost("<M1>"), 1);
        let table = TokenTable::parse("hello\t3\n\n<M1>\t2\r\n").unwrap();
        let ext = CostModel::External(Arc::new(table));
        assert_eq!(ext.cost("hello <M1> abcdefghi"), 3 + 2 + 3);
        assert_eq!(ext.name(), "external");
    }

    #[test]
    fn token_table_errors() {
        let err = TokenTable::parse("ok\t1\nbroken\n").unwrap_err();
        assert!(matches!(err, CostModelError::Malformed { line: 2, .. }));
        let err = TokenTable::parse("x\tnope").unwrap_err();
        assert!(matches!(err, CostModelError::Malformed { line: 1, .. }));
        assert!(matches!(
            CostModel::from_selector("bpe"),
            Err(CostModelError::UnknownModel(_))
        ));
    }

    fn whitespace_rich() -> impl Strategy<Value = String> {
        prop::collection::vec(
            prop_oneof![
                Just(" ".to_string()),
                Just("\t".to_string()),
                Just("\r\n".to_string()),
                Just("\n".to_string()),
                Just("\x0b\x0c".to_string()),
                "[a-c<>M0-9]{1,4}",
                Just("\u{a0}é".to_string()),
            ],
            0..30,
        )
        .prop_map(|parts| parts.concat())
    }

    proptest! {
        #[test]
        fn roundtrip_and_shape(text in whitespace_rich()) {
            let s = WordSequence::segment(&text);
            prop_assert_eq!(s.render(), text.clone());
            prop_assert_eq!(s.separators().len(), s.len() + 1);
            prop_assert!(WordSequence::from_parts(s.words().to_vec(), s.separators().to_vec()).is_ok());
            prop_assert_eq!(cost_of_span(&s, 0, s.len(), &CostModel::WordUnit).unwrap(), s.len());
            prop_assert_eq!(CostModel::CharHeuristic.cost(&text), CostModel::CharHeuristic.sequence_cost(&s));
        }
    }
}
