//! Pipeline driver: ingest -> annotate -> filter -> stats/tokens -> split
//! -> train -> evaluate -> report, with a JSON config file and flag
//! overrides. Outputs are written atomically and carry the run seed.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use biaslens::annotator::{annotate_to_labeled, client_from_config, AnnotationSchema, LlmConfig};
use biaslens::corpus::{
    dataset_stats, filter_labeled, load_articles, load_labeled, save_articles, save_labeled,
    token_frequencies, token_frequencies_to_csv, LoadOptions,
};
use biaslens::labels::BiasVector;
use biaslens::metrics::{evaluate, parse_eval_csv, render_report, EvalReport, ReportFormat};
use biaslens::splitter::{
    fold_csv, iterative_stratified_kfold, make_splits, parse_fold_csv, LabelMatrix,
};
use biaslens::trainer::{
    compute_class_weights, encode_article, load_model, predict, save_model, train, FeatureVector,
    ModelMeta, TrainConfig,
};
use biaslens::util::atomic_write;

const API_KEY_VAR: &str = "BIASLENS_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct PipelinePaths {
    articles: PathBuf,
    labeled: PathBuf,
    cache: PathBuf,
    folds: PathBuf,
    model: PathBuf,
    reports_dir: PathBuf,
}

impl Default for PipelinePaths {
    fn default() -> Self {
        PipelinePaths {
            articles: PathBuf::from("data/sample_articles.jsonl"),
            labeled: PathBuf::from("out/labeled.jsonl"),
            cache: PathBuf::from("out/annotation_cache.jsonl"),
            folds: PathBuf::from("out/folds.csv"),
            model: PathBuf::from("out/model.json"),
            reports_dir: PathBuf::from("out/reports"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct PipelineConfig {
    paths: PipelinePaths,
    llm: LlmConfig,
    train: TrainConfig<f64>,
    k: usize,
    seed: u64,
    test_fold: usize,
    val_fold: usize,
    allow_other_domain: bool,
    top_k_tokens: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PipelinePaths::default(),
            llm: LlmConfig::default(),
            train: TrainConfig::default(),
            k: 5,
            seed: 42,
            test_fold: 0,
            val_fold: 1,
            allow_other_domain: false,
            top_k_tokens: 50,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "biaslens",
    version,
    about = "Multilabel media-bias dataset pipeline",
    propagate_version = true
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Articles file (JSONL or CSV).
    #[arg(long, global = true)]
    articles: Option<PathBuf>,
    /// Labeled-articles file (JSONL).
    #[arg(long, global = true)]
    labeled: Option<PathBuf>,
    /// Fold-assignment file (CSV).
    #[arg(long, global = true)]
    folds: Option<PathBuf>,
    /// Model file (JSON).
    #[arg(long, global = true)]
    model_path: Option<PathBuf>,
    /// Output path for the current command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of folds.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Run seed; also overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Held-out test fold id.
    #[arg(long, global = true)]
    test_fold: Option<usize>,
    /// Validation fold id.
    #[arg(long, global = true)]
    val_fold: Option<usize>,
    /// Chat completion endpoint URL, or mock:keywords.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Annotator model identifier.
    #[arg(long, global = true)]
    model_id: Option<String>,
    /// Annotation concurrency limit.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Decision threshold for predictions.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Report format.
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    /// Tokens per domain in frequency tables.
    #[arg(long, global = true)]
    top_k: Option<usize>,
    /// Stopword file (one token per line) for frequency tables.
    #[arg(long, global = true)]
    stopwords: Option<PathBuf>,
    /// Accept articles outside the six named domains.
    #[arg(long, global = true)]
    allow_other_domain: bool,
    /// Model name used in reports.
    #[arg(long, global = true)]
    name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Text,
    Csv,
}

impl From<OutputFormat> for ReportFormat {
    fn from(f: OutputFormat) -> ReportFormat {
        match f {
            OutputFormat::Text => ReportFormat::Text,
            OutputFormat::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize an articles file.
    Ingest,
    /// Label articles through the configured chat endpoint.
    Annotate,
    /// Drop articles with no positive label.
    Filter,
    /// Domain and per-label count table for a labeled dataset.
    Stats,
    /// Per-domain token frequency table for an articles file.
    Tokens,
    /// Assign stratified cross-validation folds.
    Split,
    /// Fit the linear classifier on the training fold.
    Train,
    /// Score the held-out fold with a trained model.
    Evaluate,
    /// Merge evaluation tables into one report.
    Report {
        /// Evaluation CSV files to merge.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Annotate => "annotate",
            Command::Filter => "filter",
            Command::Stats => "stats",
            Command::Tokens => "tokens",
            Command::Split => "split",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Report { .. } => "report",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<String> {
    let config = effective_config(&cli.overrides)?;
    write_manifest(&config, cli.command.name())?;
    let o = &cli.overrides;
    match &cli.command {
        Command::Ingest => ingest(&config, o),
        Command::Annotate => annotate(&config, o),
        Command::Filter => filter(&config, o),
        Command::Stats => stats(&config, o),
        Command::Tokens => tokens(&config, o),
        Command::Split => split(&config, o),
        Command::Train => train_cmd(&config, o),
        Command::Evaluate => evaluate_cmd(&config, o),
        Command::Report { inputs } => report(&config, o, inputs),
    }
}

fn effective_config(o: &Overrides) -> Result<PipelineConfig> {
    let mut config = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(p) = &o.articles {
        config.paths.articles = p.clone();
    }
    if let Some(p) = &o.labeled {
        config.paths.labeled = p.clone();
    }
    if let Some(p) = &o.folds {
        config.paths.folds = p.clone();
    }
    if let Some(p) = &o.model_path {
        config.paths.model = p.clone();
    }
    if let Some(k) = o.k {
        config.k = k;
    }
    if let Some(seed) = o.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    if let Some(f) = o.test_fold {
        config.test_fold = f;
    }
    if let Some(f) = o.val_fold {
        config.val_fold = f;
    }
    if let Some(url) = &o.endpoint {
        config.llm.endpoint_url = url.clone();
    }
    if let Some(id) = &o.model_id {
        config.llm.model_id = id.clone();
    }
    if let Some(n) = o.concurrency {
        config.llm.concurrency_limit = n;
    }
    if let Some(t) = o.threshold {
        config.train.threshold = t;
    }
    if let Some(k) = o.top_k {
        config.top_k_tokens = k;
    }
    if o.allow_other_domain {
        config.allow_other_domain = true;
    }
    config.llm.cache_path = config.paths.cache.clone();
    Ok(config)
}

/// Echo the effective configuration next to the other artifacts so a run
/// can be reproduced without its command line.
fn write_manifest(config: &PipelineConfig, command: &str) -> Result<()> {
    let manifest = serde_json::json!({ "command": command, "config": config });
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let path = config.paths.reports_dir.join("run_manifest.json");
    atomic_write(&path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_options(config: &PipelineConfig) -> LoadOptions {
    LoadOptions {
        allow_other_domain: config.allow_other_domain,
    }
}

fn write_csv(path: &Path, seed: u64, body: &str) -> Result<()> {
    let text = format!("# seed={seed}\n{body}");
    atomic_write(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn ingest(config: &PipelineConfig, o: &Overrides) -> Result<String> {
    let articles = load_articles(&config.paths.articles, &load_options(config))?;
    let out = o
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out/articles.jsonl"));
    save_articles(&out, &articles)?;
    Ok(format!(
        "ingest: {} articles validated from {} -> {}",
        articles.len(),
        config.paths.articles.display(),
        out.display()
    ))
}

fn annotate(config: &PipelineConfig, o: &Overrides) -> Result<String> {
    let api_key = match config.llm.endpoint_url.starts_with("mock:") {
        true => None,
        false => match std::env::var(API_KEY_VAR) {
            Ok(key) if !key.is_empty() => Some(key),
            _ => bail!(
                "{API_KEY_VAR} is not set; the annotate command requires it for HTTP endpoint `{}`",
                config.llm.endpoint_url
            ),
        },
    };
    let articles = load_articles(&config.paths.articles, &load_options(config))?;
    let schema = AnnotationSchema::standard();
    let client = client_from_config(&config.llm, api_key)?;
    let (labeled, _, summary) =
        annotate_to_labeled(&articles, &schema, &config.llm, client.as_ref())?;
    // A wholly failed batch is an operational failure; don't clobber any
    // previous output with an empty file.
    if summary.total > 0 && summary.ok == 0 {
        bail!(
            "annotation failed for all {} articles (transport_failed {}, parse_failed {})",
            summary.total,
            summary.transport_failed,
            summary.parse_failed
        );
    }
    let out = o
        .out
        .clone()
        .unwrap_or_else(|| config.paths.labeled.clone());
    save_labeled(&out, &labeled)?;
    Ok(format!(
        "annotate: ok {}/{} (cache_hits {}, parse_failed {}, transport_failed {}) -> {}",
        summary.ok,
        summary.total,
        summary.cache_hits,
        summary.parse_failed,
        summary.transport_failed,
        out.display()
    ))
}

fn filter(config: &PipelineConfig, o: &Overrides) -> Result<String> {
    let labeled = load_labeled(&config.paths.labeled, &load_options(config))?;
    let total = labeled.len();
    let kept = filter_labeled(labeled);
    let out = o
        .out
        .clone()
        .unwrap_or_else(|| config.paths.labeled.clone());
    save_labeled(&out, &kept)?;
    Ok(format!(
        "filter: kept {} of {} labeled articles -> {}",
        kept.len(),
        total,
        out.display()
    ))
}

fn stats(config: &PipelineConfig, o: &Overrides) -> Result<String> {
    let labeled = load_labeled(&config.paths.labeled, &load_options(config))?;
    let report = dataset_stats(&labeled);
    let out = o
        .out
        .clone()
        .unwrap_or_else(|| config.paths.reports_dir.join("dataset_stats.csv"));
    write_csv(&out, config.seed, &report.to_csv())?;
    Ok(format!(
        "stats: {} articles across {} domains -> {}",
        report.total,
        report.domain_counts.len(),
        out.display()
    ))
}

fn read_stopwords(path: &Option<PathBuf>) -> Result<HashSet<String>> {
    let Some(path) = path else {
        return Ok(HashSet::new());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading stopwords {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_lowercase())
        .collect())
}

fn tokens(config: &PipelineConfig, o: &Overrides) -> Result<String> {
    let articles = load_articles(&config.paths.articles, &load_options(config))?;
    let stopwords = read_stopwords(&o.stopwords)?;
    let freqs = token_frequencies(&articles, config.top_k_tokens, &stopwords);
    let out = o
        .out
        .clone()
        .unwrap_or_else(|| config.paths.reports_dir.join("token_frequencies.csv"));
    write_csv(&out, config.seed, &token_frequencies_to_csv(&freqs))?;
    Ok(format!(
        "tokens: top {} tokens across {} domains -> {}",
        config.top_k_tokens,
        freqs.len(),
        out.display()
    ))
}

fn split(config: &PipelineConfig, o: &Overrides) -> Result<String> {
    let labeled = load_labeled(&config.paths.labeled, &load_options(config))?;
    let matrix = LabelMatrix::from_labeled(&labeled)?;
    let folds = iterative_stratified_kfold(&matrix, config.k, config.seed)?;
    let out = o.out.clone().unwrap_or_else(|| config.paths.folds.clone());
    atomic_write(&out, fold_csv(&folds).as_bytes())
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(format!(
        "split: {} examples into {} folds (seed {}) -> {}",
        matrix.len(),
        config.k,
        config.seed,
        out.display()
    ))
}

struct FoldedDataset {
    labeled: Vec<biaslens::corpus::LabeledArticle>,
    folds: biaslens::splitter::FoldAssignment,
}

fn load_folded(config: &PipelineConfig) -> Result<FoldedDataset> {
    let labeled = load_labeled(&config.paths.labeled, &load_options(config))?;
    let text = std::fs::read_to_string(&config.paths.folds)
        .with_context(|| format!("reading folds {}", config.paths.folds.display()))?;
    let folds = parse_fold_csv(&text)?;
    if folds.len() != labeled.len() {
        bail!(
            "fold file covers {} examples but {} has {}",
            folds.len(),
            config.paths.labeled.display(),
            labeled.len()
        );
    }
    Ok(FoldedDataset { labeled, folds })
}

fn train_cmd(config: &PipelineConfig, o: &Overrides) -> Result<String> {
    let data = load_folded(config)?;
    let splits = make_splits(&data.folds, config.test_fold, config.val_fold)?;
    let features: Vec<FeatureVector<f64>> = data
        .labeled
        .iter()
        .map(|l| encode_article(&l.article, config.train.feature_dim))
        .collect();
    let targets: Vec<BiasVector> = data.labeled.iter().map(|l| l.labels).collect();
    let train_labels: Vec<BiasVector> = splits.train.iter().map(|&i| targets[i]).collect();
    let weights = compute_class_weights(&LabelMatrix::new(train_labels)?, config.train.w_max)?;
    let (model, history) = train(
        &features,
        &targets,
        &splits.train,
        &splits.val,
        &weights,
        &config.train,
    )?;

    let name = o.name.clone().unwrap_or_else(|| "linear".to_string());
    let meta = ModelMeta {
        model_name: name,
        seed: config.train.seed,
        threshold: config.train.threshold,
        config_digest: config.train.digest(),
    };
    let out = o.out.clone().unwrap_or_else(|| config.paths.model.clone());
    save_model(&out, &model, &meta)?;
    let last = history.epochs.last();
    Ok(format!(
        "train: {} steps over {} epochs (train loss {}, val loss {}) -> {}",
        history.total_steps,
        history.epochs.len(),
        last.map_or("n/a".to_string(), |e| format!("{:.4}", e.train_loss)),
        last.and_then(|e| e.val_loss)
            .map_or("n/a".to_string(), |v| format!("{v:.4}")),
        out.display()
    ))
}

fn evaluate_cmd(config: &PipelineConfig, o: &Overrides) -> Result<String> {
    let data = load_folded(config)?;
    let (model, meta) = load_model::<f64>(&config.paths.model)?;
    let splits = make_splits(&data.folds, config.test_fold, config.val_fold)?;
    let threshold = o.threshold.unwrap_or(meta.threshold);

    let mut preds = Vec::with_capacity(splits.test.len());
    let mut targets = Vec::with_capacity(splits.test.len());
    for &i in &splits.test {
        let features = encode_article::<f64>(&data.labeled[i].article, model.dim());
        preds.push(predict(&model, &features, threshold)?);
        targets.push(data.labeled[i].labels);
    }
    let report = evaluate(&preds, &targets)?;
    let name = o.name.clone().unwrap_or_else(|| meta.model_name.clone());
    let rendered = render_report(&[(name.clone(), report.clone())], ReportFormat::Csv);
    let out = o
        .out
        .clone()
        .unwrap_or_else(|| config.paths.reports_dir.join(format!("eval_{name}.csv")));
    write_csv(&out, config.seed, &rendered)?;
    Ok(format!(
        "evaluate: macro F1 {:.3} on fold {} ({} examples) -> {}",
        report.macro_f1,
        config.test_fold,
        splits.test.len(),
        out.display()
    ))
}

fn report(config: &PipelineConfig, o: &Overrides, inputs: &[PathBuf]) -> Result<String> {
    let mut merged: Vec<(String, EvalReport)> = Vec::new();
    for path in inputs {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading report {}", path.display()))?;
        let parsed =
            parse_eval_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
        merged.extend(parsed);
    }
    let format = o.format.unwrap_or(OutputFormat::Text);
    let rendered = render_report(&merged, format.into());
    let summary = format!(
        "report: {} models merged from {} files",
        merged.len(),
        inputs.len()
    );
    match &o.out {
        Some(out) => {
            match format {
                OutputFormat::Csv => write_csv(out, config.seed, &rendered)?,
                OutputFormat::Text => atomic_write(out, rendered.as_bytes())
                    .with_context(|| format!("writing {}", out.display()))?,
            }
            Ok(format!("{summary} -> {}", out.display()))
        }
        None => {
            print!("{rendered}");
            Ok(summary)
        }
    }
}
