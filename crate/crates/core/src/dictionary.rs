//! Compression dictionaries, the reference decompressor, and template mode.
//!
//! A [`Dictionary`] maps meta-token labels (`<M1>`, `<M2>`, ...) to the exact
//! text they stand for. Its on-disk form is a JSON object:
//!
//! ```text
//! {"params": {"l_max": 10, "l_min": 2, "f_min": 2},
//!  "cost_model": "word",
//!  "first_index": 1,
//!  "entries": {"<M1>": "a b c", "<M2>": "..."}}
//! ```
//!
//! Entries are written in label-index order. `first_index` is the lowest
//! index the compressor was allowed to assign: labels below it that appear in
//! compressed text are literal text from the source and pass through
//! decompression untouched.
//!
//! Template mode compresses one log line at a time against known line
//! templates with `<*>` wildcards. A matched line becomes the template label
//! followed by each captured slot value, every value preceded by U+001F.

use std::collections::BTreeMap;
use std::fmt;

use regex::Regex;
use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::compressor::{find_meta_labels, MetaToken};
use crate::segmenter::CostModel;

/// Delimiter placed before each captured slot value in template mode.
pub const SLOT_SEPARATOR: char = '\u{1f}';

/// Wildcard marker inside template patterns.
pub const WILDCARD: &str = "<*>";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DictionaryError {
    #[error("duplicate dictionary label {0}")]
    DuplicateLabel(String),
    #[error("dictionary value for {0} is empty")]
    EmptyValue(String),
    #[error("dictionary value for {label} contains meta label {nested}")]
    NestedLabel { label: String, nested: String },
    #[error("label {label} is below the first assignable index {first_index}")]
    ReservedLabel { label: String, first_index: u64 },
}

#[derive(Debug, Error)]
#[error("malformed dictionary at line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    fn semantic(e: DictionaryError) -> Self {
        Self { line: 0, column: 0, message: e.to_string() }
    }
}

impl From<serde_json::Error> for ParseError {
    fn from(e: serde_json::Error) -> Self {
        let message = e.to_string();
        // serde_json appends " at line L column C"; keep the bare message.
        let message = match message.rfind(" at line ") {
            Some(i) => message[..i].to_string(),
            None => message,
        };
        Self { line: e.line(), column: e.column(), message }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecompressError {
    #[error("unresolved meta label {0}")]
    UnresolvedLabel(String),
}

/// Compression parameters recorded alongside a dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub l_max: usize,
    pub l_min: usize,
    pub f_min: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dictionary {
    #[serde(default)]
    pub params: Option<ParamsRecord>,
    pub cost_model: String,
    #[serde(default = "default_first_index")]
    first_index: u64,
    entries: Entries,
}

fn default_first_index() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct Entries(BTreeMap<MetaToken, String>);

impl Dictionary {
    pub fn new(params: Option<ParamsRecord>, cost_model: impl Into<String>, first_index: u64) -> Self {
        Self {
            params,
            cost_model: cost_model.into(),
            first_index: first_index.max(1),
            entries: Entries::default(),
        }
    }

    pub fn insert(&mut self, meta: MetaToken, value: impl Into<String>) -> Result<(), DictionaryError> {
        let value = value.into();
        if meta.index() < self.first_index {
            return Err(DictionaryError::ReservedLabel {
                label: meta.label(),
                first_index: self.first_index,
            });
        }
        validate_entry(&meta, &value)?;
        if self.entries.0.contains_key(&meta) {
            return Err(DictionaryError::DuplicateLabel(meta.label()));
        }
        self.entries.0.insert(meta, value);
        Ok(())
    }

    pub fn get(&self, meta: &MetaToken) -> Option<&str> {
        self.entries.0.get(meta).map(String::as_str)
    }

    pub fn first_index(&self) -> u64 {
        self.first_index
    }

    /// Entries in label-index order.
    pub fn iter(&self) -> impl Iterator<Item = (&MetaToken, &str)> {
        self.entries.0.iter().map(|(k, v)| (k, v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.0.is_empty()
    }

    /// Tokens needed to ship the dictionary: label plus value for each entry.
    pub fn token_cost(&self, model: &CostModel) -> usize {
        self.iter()
            .map(|(meta, value)| model.cost(&meta.label()) + model.cost(value))
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dictionary serialization is infallible")
    }

    pub fn serialize_bytes(&self) -> Vec<u8> {
        let mut out = self.to_json().into_bytes();
        out.push(b'\n');
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, ParseError> {
        let dict: Self = serde_json::from_slice(bytes)?;
        dict.check_reserved().map_err(ParseError::semantic)?;
        Ok(dict)
    }

    fn check_reserved(&self) -> Result<(), DictionaryError> {
        match self.entries.0.keys().next() {
            Some(meta) if meta.index() < self.first_index => Err(DictionaryError::ReservedLabel {
                label: meta.label(),
                first_index: self.first_index,
            }),
            _ => Ok(()),
        }
    }
}

fn validate_entry(meta: &MetaToken, value: &str) -> Result<(), DictionaryError> {
    if value.is_empty() {
        return Err(DictionaryError::EmptyValue(meta.label()));
    }
    if let Some(found) = find_meta_labels(value).next() {
        return Err(DictionaryError::NestedLabel {
            label: meta.label(),
            nested: value[found.range].to_string(),
        });
    }
    Ok(())
}

impl Serialize for Entries {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (meta, value) in &self.0 {
            map.serialize_entry(&meta.label(), value)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = Entries;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map from <M#> labels to strings")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Entries, A::Error> {
                let mut entries = BTreeMap::new();
                while let Some(label) = access.next_key::<String>()? {
                    let meta = MetaToken::parse(&label)
                        .ok_or_else(|| de::Error::custom(format!("invalid meta label {label:?}")))?;
                    let value: String = access.next_value()?;
                    validate_entry(&meta, &value).map_err(de::Error::custom)?;
                    if entries.insert(meta, value).is_some() {
                        return Err(de::Error::custom(DictionaryError::DuplicateLabel(label)));
                    }
                }
                Ok(Entries(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

/// Compressed text bundled with its dictionary in one JSON document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub dictionary: Dictionary,
    pub compressed: String,
}

impl Envelope {
    pub fn parse(bytes: &[u8]) -> Result<Self, ParseError> {
        let env: Self = serde_json::from_slice(bytes)?;
        env.dictionary.check_reserved().map_err(ParseError::semantic)?;
        Ok(env)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("envelope serialization is infallible")
    }
}

/// Replaces every dictionary label in `compressed_text` with its value.
///
/// Single left-to-right pass; substituted values are never rescanned. Labels
/// with an index below `dict.first_index()` are literal source text and are
/// copied as-is. Any other label without an entry is an error.
pub fn decompress(compressed_text: &str, dict: &Dictionary) -> Result<String, DecompressError> {
    let mut out = String::with_capacity(compressed_text.len() * 2);
    let mut last = 0;
    for found in find_meta_labels(compressed_text) {
        if found.index < dict.first_index() {
            continue;
        }
        let label = &compressed_text[found.range.clone()];
        let value = MetaToken::parse(label)
            .and_then(|meta| dict.get(&meta))
            .ok_or_else(|| DecompressError::UnresolvedLabel(label.to_string()))?;
        out.push_str(&compressed_text[last..found.range.start]);
        out.push_str(value);
        last = found.range.end;
    }
    out.push_str(&compressed_text[last..]);
    Ok(out)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate template label {0}")]
    DuplicateLabel(String),
    #[error("template {label} expects {expected} slot values, found {found}")]
    SlotMismatch { label: String, expected: usize, found: usize },
}

/// A log line template: literal text with `<*>` wildcard slots.
#[derive(Debug, Clone)]
pub struct Template {
    id: MetaToken,
    pattern: String,
    literals: Vec<String>,
    matcher: Regex,
}

impl PartialEq for Template {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.pattern == other.pattern
    }
}

impl Template {
    pub fn new(id: MetaToken, pattern: impl Into<String>) -> Self {
        let pattern = pattern.into();
        let literals: Vec<String> = pattern.split(WILDCARD).map(str::to_string).collect();
        let body = literals
            .iter()
            .map(|lit| regex::escape(lit))
            .collect::<Vec<_>>()
            .join("(.+?)");
        let matcher = Regex::new(&format!("(?s)^{body}$")).expect("escaped template regex is valid");
        Self { id, pattern, literals, matcher }
    }

    pub fn id(&self) -> MetaToken {
        self.id
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn slot_count(&self) -> usize {
        self.literals.len() - 1
    }

    /// Slot values if the whole line matches. Wildcards capture non-empty
    /// runs, shortest first.
    pub fn captures<'a>(&self, line: &'a str) -> Option<Vec<&'a str>> {
        let caps = self.matcher.captures(line)?;
        Some(
            caps.iter()
                .skip(1)
                .map(|m| m.map_or("", |m| m.as_str()))
                .collect(),
        )
    }

    pub fn fill(&self, values: &[&str]) -> Result<String, TemplateError> {
        if values.len() != self.slot_count() {
            return Err(TemplateError::SlotMismatch {
                label: self.id.label(),
                expected: self.slot_count(),
                found: values.len(),
            });
        }
        let mut out = self.literals[0].clone();
        for (value, lit) in values.iter().zip(&self.literals[1..]) {
            out.push_str(value);
            out.push_str(lit);
        }
        Ok(out)
    }
}

/// Parses a template file of `label<TAB>pattern` lines.
pub fn parse_templates(text: &str) -> Result<Vec<Template>, TemplateError> {
    let mut out: Vec<Template> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let malformed = |message: String| TemplateError::Malformed { line: i + 1, message };
        let (label, pattern) = line
            .split_once('\t')
            .ok_or_else(|| malformed("expected label<TAB>pattern".into()))?;
        let id = MetaToken::parse(label).ok_or_else(|| malformed(format!("invalid label {label:?}")))?;
        if pattern.is_empty() {
            return Err(malformed("empty pattern".into()));
        }
        if out.iter().any(|t| t.id == id) {
            return Err(TemplateError::DuplicateLabel(label.to_string()));
        }
        out.push(Template::new(id, pattern));
    }
    Ok(out)
}

pub fn format_templates(templates: &[Template]) -> String {
    templates
        .iter()
        .map(|t| format!("{}\t{}\n", t.id.label(), t.pattern))
        .collect()
}

/// Encodes `line` with the first template that matches it, or returns the
/// line unchanged. Lines containing U+001F are never matched since slot
/// values could not be delimited.
pub fn template_compress(line: &str, templates: &[Template]) -> String {
    if !line.contains(SLOT_SEPARATOR) {
        for t in templates {
            if let Some(values) = t.captures(line) {
                let mut out = t.id.label();
                for v in values {
                    out.push(SLOT_SEPARATOR);
                    out.push_str(v);
                }
                return out;
            }
        }
    }
    line.to_string()
}

/// Inverse of [`template_compress`]. Lines that do not start with a known
/// template label followed by slot values are returned unchanged.
pub fn template_decompress(line: &str, templates: &[Template]) -> Result<String, TemplateError> {
    let mut parts = line.split(SLOT_SEPARATOR);
    let head = parts.next().unwrap_or_default();
    let Some(template) = MetaToken::parse(head).and_then(|id| templates.iter().find(|t| t.id == id))
    else {
        return Ok(line.to_string());
    };
    let values: Vec<&str> = parts.collect();
    template.fill(&values)
}

/// Builds a dictionary whose values are the template patterns, for use as
/// the in-context key in template mode.
pub fn templates_dictionary(templates: &[Template]) -> Dictionary {
    let first = templates.iter().map(|t| t.id.index()).min().unwrap_or(1);
    let mut dict = Dictionary::new(None, "template", first);
    for t in templates {
        // Patterns that embed meta labels are rejected by the dictionary
        // invariants; the template list itself stays usable.
        let _ = dict.insert(t.id, t.pattern.clone());
    }
    dict
}
