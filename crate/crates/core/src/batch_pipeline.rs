//! Batch planning, per-batch compression, L_max sweeps and the
//! compression-vs-quality regression report.
//!
//! A corpus is a list of lines, each keeping its own line terminator, so
//! concatenating any run of lines gives back the exact original bytes.
//! Batches are contiguous line ranges whose original token cost fits an
//! output budget; each batch is compressed on its own with its own
//! dictionary.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compressor::{compress, CompressError, CompressionParams, CompressionResult, MetaToken};
use crate::dictionary::{Template, TemplateError};
use crate::metrics::{compression_ratio, MetricsError, RatioReport};
use crate::segmenter::CostModel;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("batch budget must be positive")]
    ZeroBudget,
    #[error("L_max values must be >= 2, got {0}")]
    InvalidLength(usize),
    #[error("empty L_max range")]
    EmptyRange,
    #[error("batch {batch}: {source}")]
    Compress {
        batch: usize,
        #[source]
        source: CompressError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("template file {path}: {message}")]
    Templates { path: PathBuf, message: String },
    #[error("regression needs at least 3 rows with metric scores, found {0}")]
    InsufficientRows(usize),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Lines of a text corpus, each with its trailing newline (if any).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    lines: Vec<String>,
}

impl Corpus {
    pub fn from_text(text: &str) -> Self {
        Self { lines: text.split_inclusive('\n').map(str::to_string).collect() }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_text(&text))
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn text(&self, range: Range<usize>) -> String {
        self.lines[range].concat()
    }

    pub fn full_text(&self) -> String {
        self.lines.concat()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub index: usize,
    pub lines: Range<usize>,
    /// Original-text tokens, which is also the size of a correct
    /// decompression.
    pub tokens: usize,
    /// A single line that alone exceeds the budget.
    pub oversize: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
    pub budget_tokens: usize,
    pub cost_model: String,
}

/// Greedy in-order packing: a batch grows until the next line would push it
/// over `budget_tokens`. A line costing more than the budget on its own
/// becomes a flagged singleton batch.
pub fn plan_batches(corpus: &Corpus, budget_tokens: usize, model: &CostModel) -> Result<BatchPlan, PipelineError> {
    if budget_tokens == 0 {
        return Err(PipelineError::ZeroBudget);
    }
    let mut batches: Vec<Batch> = Vec::new();
    let mut start = 0;
    let mut acc = 0;
    let close = |batches: &mut Vec<Batch>, lines: Range<usize>, tokens: usize, oversize: bool| {
        if !lines.is_empty() {
            batches.push(Batch { index: batches.len(), lines, tokens, oversize });
        }
    };
    for (i, line) in corpus.lines.iter().enumerate() {
        let cost = model.cost(line);
        if cost > budget_tokens {
            close(&mut batches, start..i, acc, false);
            close(&mut batches, i..i + 1, cost, true);
            start = i + 1;
            acc = 0;
        } else if acc + cost > budget_tokens {
            close(&mut batches, start..i, acc, false);
            start = i;
            acc = cost;
        } else {
            acc += cost;
        }
    }
    close(&mut batches, start..corpus.len(), acc, false);
    Ok(BatchPlan { batches, budget_tokens, cost_model: model.name().to_string() })
}

/// Maps `f` over `items` on a pool of `jobs` threads (0 = rayon default),
/// returning results in input order.
pub(crate) fn run_parallel<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().map(&f).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchCompression {
    pub batch: Batch,
    pub result: Result<CompressionResult, CompressError>,
}

/// Compresses every batch of `plan` independently.
pub fn compress_plan(corpus: &Corpus, plan: &BatchPlan, params: &CompressionParams, jobs: usize) -> Vec<BatchCompression> {
    run_parallel(&plan.batches, jobs, |batch| BatchCompression {
        batch: batch.clone(),
        result: compress(&corpus.text(batch.lines.clone()), params),
    })
}

pub fn run_batch_compression(
    corpus: &Corpus,
    params: &CompressionParams,
    budget_tokens: usize,
    jobs: usize,
) -> Result<Vec<BatchCompression>, PipelineError> {
    let plan = plan_batches(corpus, budget_tokens, &params.cost_model)?;
    Ok(compress_plan(corpus, &plan, params, jobs))
}

/// Token totals summed over successfully compressed batches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BatchTotals {
    pub original_tokens: usize,
    pub compressed_tokens: usize,
    pub dictionary_tokens: usize,
    pub dictionary_entries: usize,
    pub failed_batches: usize,
}

impl BatchTotals {
    pub fn from_outcomes(outcomes: &[BatchCompression]) -> Self {
        let mut t = Self::default();
        for o in outcomes {
            match &o.result {
                Ok(r) => {
                    t.original_tokens += r.original_tokens;
                    t.compressed_tokens += r.compressed_tokens;
                    t.dictionary_tokens += r.dictionary_tokens;
                    t.dictionary_entries += r.dictionary.len();
                }
                Err(_) => t.failed_batches += 1,
            }
        }
        t
    }

    pub fn ratio(&self) -> Result<RatioReport, MetricsError> {
        compression_ratio(self.original_tokens, self.compressed_tokens, self.dictionary_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dataset: String,
    pub l_max: usize,
    pub cr: f64,
    pub cr_input: f64,
    pub dict_entries: usize,
    pub levenshtein: Option<f64>,
    pub rouge: Option<f64>,
    pub bleu: Option<f64>,
}

pub const SWEEP_COLUMNS: [&str; 8] =
    ["dataset", "l_max", "cr", "cr_input", "dict_entries", "levenshtein", "rouge", "bleu"];

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub dataset: String,
    pub l_values: Vec<usize>,
    pub f_min: usize,
    pub cost_model: CostModel,
    pub budget_tokens: usize,
    pub jobs: usize,
}

impl SweepConfig {
    pub fn params_for(&self, l_max: usize) -> CompressionParams {
        CompressionParams::new(l_max, self.f_min, self.cost_model.clone())
    }

    fn check(&self) -> Result<(), PipelineError> {
        if self.l_values.is_empty() {
            return Err(PipelineError::EmptyRange);
        }
        if let Some(&bad) = self.l_values.iter().find(|&&l| l < 2) {
            return Err(PipelineError::InvalidLength(bad));
        }
        Ok(())
    }
}

/// One compression run per L_max over a batch plan that is held fixed for
/// the whole sweep. An empty corpus (or one with no tokens) yields no rows.
pub fn sweep_lmax(corpus: &Corpus, config: &SweepConfig) -> Result<Vec<SweepRow>, PipelineError> {
    config.check()?;
    let plan = plan_batches(corpus, config.budget_tokens, &config.cost_model)?;
    let mut rows = Vec::with_capacity(config.l_values.len());
    for &l_max in &config.l_values {
        let outcomes = compress_plan(corpus, &plan, &config.params_for(l_max), config.jobs);
        if let Some((batch, err)) = outcomes
            .iter()
            .find_map(|o| o.result.as_ref().err().map(|e| (o.batch.index, e.clone())))
        {
            return Err(PipelineError::Compress { batch, source: err });
        }
        let totals = BatchTotals::from_outcomes(&outcomes);
        let Ok(ratio) = totals.ratio() else { continue };
        rows.push(SweepRow {
            dataset: config.dataset.clone(),
            l_max,
            cr: ratio.cr,
            cr_input: ratio.cr_input,
            dict_entries: totals.dictionary_entries,
            levenshtein: None,
            rouge: None,
            bleu: None,
        });
    }
    Ok(rows)
}

/// Writes sweep rows as CSV; the header is always present.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), PipelineError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Fit {
    Line { slope: f64, intercept: f64, r2: f64 },
    /// All x values equal, so no line is determined.
    Undefined { undefined_fit: bool },
}

/// Ordinary least squares of `ys` on `xs`. A flat `ys` gives slope 0 and
/// r² = 0.
pub fn ols(xs: &[f64], ys: &[f64]) -> Fit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    if xs.is_empty() || sxx <= f64::EPSILON * n {
        return Fit::Undefined { undefined_fit: true };
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let syy: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r2 = if syy == 0.0 { 0.0 } else { (sxy * sxy) / (sxx * syy) };
    Fit::Line { slope, intercept, r2 }
}

/// Regresses each similarity metric against `cr_input` across sweep rows.
pub fn regression_report(rows: &[SweepRow]) -> Result<BTreeMap<String, Fit>, PipelineError> {
    type Getter = fn(&SweepRow) -> Option<f64>;
    let metrics: [(&str, Getter); 3] = [
        ("levenshtein", |r| r.levenshtein),
        ("rouge", |r| r.rouge),
        ("bleu", |r| r.bleu),
    ];
    let mut out = BTreeMap::new();
    for (name, get) in metrics {
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            rows.iter().filter_map(|r| get(r).map(|y| (r.cr_input, y))).unzip();
        if xs.len() < 3 {
            return Err(PipelineError::InsufficientRows(xs.len()));
        }
        out.insert(name.to_string(), ols(&xs, &ys));
    }
    Ok(out)
}

/// A LogHub-style dataset: `<root>/<name>/<name>_2k.log` plus an optional
/// `<name>_templates.csv` with `EventId,EventTemplate` columns.
#[derive(Debug, Clone)]
pub struct LoghubDataset {
    pub name: String,
    pub corpus: Corpus,
    pub templates: Option<Vec<Template>>,
}

pub fn load_loghub(root: &Path, name: &str) -> Result<LoghubDataset, PipelineError> {
    let dir = root.join(name);
    let corpus = Corpus::load(&dir.join(format!("{name}_2k.log")))?;
    let tpl_path = dir.join(format!("{name}_templates.csv"));
    let templates = if tpl_path.exists() {
        Some(load_loghub_templates(&tpl_path)?)
    } else {
        None
    };
    Ok(LoghubDataset { name: name.to_string(), corpus, templates })
}

/// Reads a LogHub template CSV; templates get labels `<M1>`, `<M2>`, ...
/// in file order.
pub fn load_loghub_templates(path: &Path) -> Result<Vec<Template>, PipelineError> {
    let mut reader = csv::Reader::from_path(path)?;
    let column = reader
        .headers()?
        .iter()
        .position(|h| h.trim() == "EventTemplate")
        .ok_or_else(|| PipelineError::Templates {
            path: path.to_path_buf(),
            message: "missing EventTemplate column".into(),
        })?;
    let mut templates = Vec::new();
    for record in reader.records() {
        let record = record?;
        let pattern = record.get(column).unwrap_or_default();
        if pattern.is_empty() {
            continue;
        }
        let id = MetaToken::new(templates.len() as u64 + 1).expect("index starts at 1");
        templates.push(Template::new(id, pattern));
    }
    Ok(templates)
}
