use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use promptdict::batch_pipeline::{
    load_loghub_templates, regression_report, sweep_lmax, write_sweep_csv, Corpus, SweepConfig, SweepRow,
};
use promptdict::dictionary::parse_templates;
use promptdict::llm_validator::{
    run_validation_experiment, ExperimentConfig, HttpClient, LlmClient, LlmClientConfig, MockBehavior, MockClient,
    RetryPolicy, ValidationError, ValidationMode,
};
use promptdict::metrics::score_reconstruction;
use promptdict::{compress, decompress, CompressionParams, CostModel, DecompressError, Dictionary, Envelope, Template};

#[derive(Parser)]
#[command(name = "promptdict", version, about = "Lossless dictionary compression for LLM prompts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a text file into an envelope or a .cmp/.dict pair
    Compress(CompressArgs),
    /// Restore the original text
    Decompress(DecompressArgs),
    /// Compress under a range of L_max values and write one CSV row per value
    Sweep(SweepArgs),
    /// Score a candidate reconstruction against the original
    Score(ScoreArgs),
    /// Ask an LLM (or a mock) to decompress each batch and score the result
    Validate(ValidateArgs),
}

#[derive(Args, Clone)]
struct ParamArgs {
    #[arg(long, default_value_t = 10)]
    l_max: usize,
    #[arg(long, default_value_t = 2)]
    l_min: usize,
    #[arg(long, default_value_t = 2)]
    f_min: usize,
    /// word, char, or external:<path> (word<TAB>count table)
    #[arg(long, default_value = "word")]
    cost_model: String,
}

impl ParamArgs {
    fn cost_model(&self) -> Result<CostModel, Failure> {
        CostModel::from_selector(&self.cost_model).map_err(|e| Failure::usage(anyhow!(e)))
    }

    fn params(&self) -> Result<CompressionParams, Failure> {
        let p = CompressionParams {
            l_max: self.l_max,
            l_min: self.l_min,
            f_min: self.f_min,
            cost_model: self.cost_model()?,
        };
        p.validate().map_err(|e| Failure::usage(anyhow!(e)))?;
        Ok(p)
    }
}

#[derive(Args)]
struct CompressArgs {
    input: PathBuf,
    /// Envelope path, or the stem for the .cmp/.dict pair with --split
    #[arg(short, long)]
    output: PathBuf,
    /// Write <output>.cmp and <output>.dict instead of a JSON envelope
    #[arg(long, conflicts_with = "envelope")]
    split: bool,
    #[arg(long)]
    envelope: bool,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct DecompressArgs {
    /// Envelope file, or the compressed text when --dict is given
    input: PathBuf,
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Defaults to standard output
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ClientArgs {
    /// Decode with the reference decompressor instead of a model
    #[arg(long, conflicts_with = "mock")]
    mock_oracle: bool,
    /// Scripted mock model
    #[arg(long, value_enum)]
    mock: Option<MockKind>,
    #[arg(long, env = "PROMPTDICT_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, env = "PROMPTDICT_MODEL", default_value = "")]
    model: String,
    /// Name of the environment variable holding the API token
    #[arg(long, env = "PROMPTDICT_AUTH_ENV")]
    auth_env: Option<String>,
    /// Request body template with {system}, {user}, {model}, {max_tokens}
    #[arg(long)]
    body_template: Option<PathBuf>,
    /// JSON pointer to the completion text in responses
    #[arg(long)]
    response_pointer: Option<String>,
    #[arg(long, default_value_t = 64_000)]
    max_output_tokens: usize,
    #[arg(long, default_value_t = 600)]
    timeout_secs: u64,
    #[arg(long, default_value_t = 3)]
    retries: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum MockKind {
    Oracle,
    DropLastChar,
    Empty,
    Fail,
}

impl ClientArgs {
    fn build(&self) -> Result<Box<dyn LlmClient>, Failure> {
        if self.mock_oracle {
            return Ok(Box::new(MockClient::oracle()));
        }
        if let Some(kind) = self.mock {
            let behavior = match kind {
                MockKind::Oracle => MockBehavior::Oracle,
                MockKind::DropLastChar => MockBehavior::DropLastChar,
                MockKind::Empty => MockBehavior::Empty,
                MockKind::Fail => MockBehavior::AlwaysFail,
            };
            let retry = RetryPolicy { max_retries: self.retries, initial_backoff: Duration::ZERO, multiplier: 1.0 };
            return Ok(Box::new(MockClient::new(behavior).with_retry(retry)));
        }
        let endpoint = self
            .endpoint
            .clone()
            .ok_or_else(|| Failure::usage(anyhow!("no endpoint configured; pass --endpoint or --mock-oracle")))?;
        let mut config = LlmClientConfig {
            endpoint,
            model: self.model.clone(),
            auth_env: self.auth_env.clone(),
            max_output_tokens: self.max_output_tokens,
            timeout: Duration::from_secs(self.timeout_secs),
            retry: RetryPolicy { max_retries: self.retries, ..RetryPolicy::default() },
            ..LlmClientConfig::default()
        };
        if let Some(path) = &self.body_template {
            config.body_template = read_text(path)?;
        }
        if let Some(ptr) = &self.response_pointer {
            config.response_pointer = ptr.clone();
        }
        Ok(Box::new(HttpClient::new(config).map_err(|e| Failure::usage(anyhow!(e)))?))
    }
}

#[derive(Args)]
struct SweepArgs {
    input: PathBuf,
    /// Inclusive L_max range, e.g. 3..20
    #[arg(long, default_value = "3..20")]
    range: String,
    /// CSV destination; standard output when omitted
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, default_value_t = 64_000)]
    budget_tokens: usize,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value_t = 2)]
    f_min: usize,
    #[arg(long, default_value = "word")]
    cost_model: String,
    /// Also run decompression validation at every L_max
    #[arg(long)]
    validate: bool,
    /// Regression of each metric against cr_input (requires --validate)
    #[arg(long, requires = "validate")]
    regression: Option<PathBuf>,
    #[command(flatten)]
    client: ClientArgs,
}

#[derive(Args)]
struct ScoreArgs {
    original: PathBuf,
    candidate: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value = "algorithmic")]
    mode: ModeArg,
    /// label<TAB>pattern file, or a CSV with an EventTemplate column
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, default_value_t = 64_000)]
    budget_tokens: usize,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Also score responses with one leading/trailing newline stripped
    #[arg(long)]
    normalize: bool,
    /// Directory for per-batch JSON records
    #[arg(long)]
    artifacts: Option<PathBuf>,
    /// Report destination; standard output when omitted
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    client: ClientArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Algorithmic,
    Template,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: anyhow::Error) -> Self {
        Self { code: 2, error }
    }

    fn integrity(error: anyhow::Error) -> Self {
        Self { code: 3, error }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self::usage(error)
    }
}

type CmdResult = Result<(), Failure>;

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display())).map_err(Failure::usage)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes)
        .map_err(|_| Failure::usage(anyhow!("{} is not valid UTF-8", path.display())))
}

fn write_file(path: &Path, data: &[u8]) -> CmdResult {
    fs::write(path, data).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn print_json(value: &impl serde::Serialize) -> CmdResult {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::usage(anyhow!(e)))?;
    writeln!(out).map_err(|e| Failure::usage(anyhow!(e)))?;
    Ok(())
}

fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn cmd_compress(args: CompressArgs) -> CmdResult {
    let params = args.params.params()?;
    let text = read_text(&args.input)?;
    let result = compress(&text, &params).map_err(|e| Failure::usage(anyhow!(e)))?;
    if result.reserved_words > 0 {
        eprintln!(
            "warning: {} input word(s) already contain <M#> patterns; new labels start at <M{}>",
            result.reserved_words,
            result.dictionary.first_index()
        );
    }
    let compressed = result.compressed_text();
    if args.split {
        write_file(&with_suffix(&args.output, ".cmp"), compressed.as_bytes())?;
        write_file(&with_suffix(&args.output, ".dict"), &result.dictionary.serialize_bytes())?;
    } else {
        let env = Envelope { dictionary: result.dictionary.clone(), compressed };
        write_file(&args.output, env.to_json().as_bytes())?;
    }
    match result.ratio() {
        Ok(ratio) => print_json(&ratio),
        Err(_) => print_json(&serde_json::json!({
            "original_tokens": 0,
            "compressed_tokens": 0,
            "dictionary_tokens": 0,
            "cr": null,
            "cr_input": null,
        })),
    }
}

fn cmd_decompress(args: DecompressArgs) -> CmdResult {
    let (compressed, dict) = match &args.dict {
        Some(dict_path) => {
            let dict = Dictionary::parse(&read_bytes(dict_path)?)
                .map_err(|e| Failure::usage(anyhow!("{}: {e}", dict_path.display())))?;
            (read_text(&args.input)?, dict)
        }
        None => {
            let env = Envelope::parse(&read_bytes(&args.input)?)
                .map_err(|e| Failure::usage(anyhow!("{}: {e}", args.input.display())))?;
            (env.compressed, env.dictionary)
        }
    };
    let text = decompress(&compressed, &dict).map_err(|e| match e {
        DecompressError::UnresolvedLabel(_) => Failure::integrity(anyhow!(e)),
    })?;
    match &args.output {
        Some(path) => write_file(path, text.as_bytes()),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::usage(anyhow!(e))),
    }
}

fn parse_range(range: &str) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::usage(anyhow!("invalid range {range:?}; expected A..B"));
    let (a, b) = range.split_once("..").ok_or_else(bad)?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a < 2 || a > b {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn dataset_name(explicit: &Option<String>, input: &Path) -> String {
    explicit.clone().unwrap_or_else(|| {
        input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into())
    })
}

fn load_corpus(path: &Path) -> Result<Corpus, Failure> {
    Corpus::load(path).map_err(|e| Failure::usage(anyhow!(e)))
}

fn cmd_sweep(args: SweepArgs) -> CmdResult {
    let l_values = parse_range(&args.range)?;
    let cost_model = CostModel::from_selector(&args.cost_model).map_err(|e| Failure::usage(anyhow!(e)))?;
    let corpus = load_corpus(&args.input)?;
    let dataset = dataset_name(&args.dataset, &args.input);
    let config = SweepConfig {
        dataset: dataset.clone(),
        l_values: l_values.clone(),
        f_min: args.f_min,
        cost_model,
        budget_tokens: args.budget_tokens,
        jobs: args.jobs,
    };
    for l in &l_values {
        config.params_for(*l).validate().map_err(|e| Failure::usage(anyhow!(e)))?;
    }
    let rows: Vec<SweepRow> = if args.validate && !corpus.is_empty() {
        let client = args.client.build()?;
        let mut rows = Vec::with_capacity(l_values.len());
        for &l in &l_values {
            let mut exp = ExperimentConfig::new(ValidationMode::Algorithmic, config.params_for(l));
            exp.dataset = dataset.clone();
            exp.budget_tokens = args.budget_tokens;
            exp.max_output_tokens = args.client.max_output_tokens;
            exp.jobs = args.jobs;
            let report = run_validation_experiment(&corpus, &exp, client.as_ref()).map_err(validation_failure)?;
            eprintln!("L_max={l}: {} batches, {} failed, {} rejected", report.batches, report.failed, report.rejected);
            rows.extend(report.sweep_row);
        }
        rows
    } else {
        sweep_lmax(&corpus, &config).map_err(|e| Failure::usage(anyhow!(e)))?
    };
    match &args.output {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
            write_sweep_csv(&rows, file).map_err(|e| Failure::usage(anyhow!(e)))?;
        }
        None => write_sweep_csv(&rows, io::stdout().lock()).map_err(|e| Failure::usage(anyhow!(e)))?,
    }
    if let Some(path) = &args.regression {
        let report = regression_report(&rows).map_err(|e| Failure::usage(anyhow!(e)))?;
        let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::usage(anyhow!(e)))?;
        write_file(path, json.as_bytes())?;
    }
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> CmdResult {
    let original = read_text(&args.original)?;
    let candidate = read_text(&args.candidate)?;
    print_json(&score_reconstruction(&original, &candidate))
}

fn load_templates(path: &Path) -> Result<Vec<Template>, Failure> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        load_loghub_templates(path).map_err(|e| Failure::usage(anyhow!(e)))
    } else {
        parse_templates(&read_text(path)?).map_err(|e| Failure::usage(anyhow!("{}: {e}", path.display())))
    }
}

fn validation_failure(e: ValidationError) -> Failure {
    Failure::usage(anyhow!(e))
}

fn cmd_validate(args: ValidateArgs) -> CmdResult {
    let mode = match args.mode {
        ModeArg::Algorithmic => ValidationMode::Algorithmic,
        ModeArg::Template => ValidationMode::Template,
    };
    if mode == ValidationMode::Template && args.templates.is_none() {
        return Err(Failure::usage(anyhow!("template mode requires --templates")));
    }
    let params = args.params.params()?;
    let templates = args.templates.as_deref().map(load_templates).transpose()?;
    let corpus = load_corpus(&args.input)?;
    let client = args.client.build()?;
    let config = ExperimentConfig {
        dataset: dataset_name(&args.dataset, &args.input),
        mode,
        params,
        budget_tokens: args.budget_tokens,
        max_output_tokens: args.client.max_output_tokens,
        jobs: args.jobs,
        normalize: args.normalize,
        templates,
    };
    let report = run_validation_experiment(&corpus, &config, client.as_ref()).map_err(validation_failure)?;
    if let Some(dir) = &args.artifacts {
        report.write_artifacts(dir).map_err(validation_failure)?;
    }
    eprintln!(
        "{} batches, {} failed, {} rejected ({})",
        report.batches, report.failed, report.rejected, report.client
    );
    match &args.output {
        Some(path) => {
            let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::usage(anyhow!(e)))?;
            write_file(path, json.as_bytes())
        }
        None => print_json(&report),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Compress(a) => cmd_compress(a),
        Command::Decompress(a) => cmd_decompress(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Score(a) => cmd_score(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
