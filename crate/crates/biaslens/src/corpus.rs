//! Article corpus: loading and validating raw articles (JSONL or CSV),
//! labeled-article persistence, the positives-only filter, dataset
//! statistics, and per-domain token frequency tables.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{BiasLabel, BiasVector, NUM_LABELS};
use crate::trainer::tokenize;
use crate::util::atomic_write;

/// News domain an article was collected from. The six named domains are the
/// closed working set; `Other` is accepted only when a load explicitly
/// allows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Hollywood,
    Fashion,
    Finance,
    Religion,
    Politics,
    Sports,
    Other,
}

impl Domain {
    /// All domains in canonical order, `Other` last.
    pub const ALL: [Domain; 7] = [
        Domain::Hollywood,
        Domain::Fashion,
        Domain::Finance,
        Domain::Religion,
        Domain::Politics,
        Domain::Sports,
        Domain::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Hollywood => "hollywood",
            Domain::Fashion => "fashion",
            Domain::Finance => "finance",
            Domain::Religion => "religion",
            Domain::Politics => "politics",
            Domain::Sports => "sports",
            Domain::Other => "other",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One raw news article. `id`, `title`, and `body` are non-empty after
/// trimming; ids are unique within any loaded collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub domain: Domain,
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

/// How an article's labels were produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub annotator_model_id: String,
    pub timestamp: DateTime<Utc>,
    pub raw_response_digest: String,
    pub attempts: u32,
}

/// An article together with its seven bias flags and annotation provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledArticle {
    pub article: Article,
    pub labels: BiasVector,
    pub provenance: Provenance,
}

/// On-disk representation of an article collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    /// Pick a format from the file extension: `.csv` means CSV, anything
    /// else means JSONL.
    pub fn from_path(path: &Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

/// Validation knobs for loading.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Accept articles whose domain is `other`. Off by default.
    pub allow_other_domain: bool,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record {record}: {message}")]
    Malformed { record: usize, message: String },
    #[error("record {record}: field `{field}` {problem}")]
    InvalidField {
        record: usize,
        field: &'static str,
        problem: String,
    },
    #[error("record {record}: duplicate article id `{id}`")]
    DuplicateId { record: usize, id: String },
    #[error("record {record}: domain `other` is not allowed here (article `{id}`)")]
    OtherDomainNotAllowed { record: usize, id: String },
    #[error("csv header mismatch: expected `id,domain,title,body[,source]`, got `{found}`")]
    CsvHeader { found: String },
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn validate_article(
    article: &Article,
    record: usize,
    options: &LoadOptions,
) -> Result<(), CorpusError> {
    for (field, value) in [
        ("id", &article.id),
        ("title", &article.title),
        ("body", &article.body),
    ] {
        if value.trim().is_empty() {
            return Err(CorpusError::InvalidField {
                record,
                field,
                problem: "must be non-empty".to_string(),
            });
        }
    }
    if article.domain == Domain::Other && !options.allow_other_domain {
        return Err(CorpusError::OtherDomainNotAllowed {
            record,
            id: article.id.clone(),
        });
    }
    Ok(())
}

fn check_unique_ids<'a>(
    seen: &mut HashSet<&'a str>,
    id: &'a str,
    record: usize,
) -> Result<(), CorpusError> {
    if !seen.insert(id) {
        return Err(CorpusError::DuplicateId {
            record,
            id: id.to_string(),
        });
    }
    Ok(())
}

/// Load raw articles, picking the format from the file extension.
pub fn load_articles(path: &Path, options: &LoadOptions) -> Result<Vec<Article>, CorpusError> {
    load_articles_format(path, CorpusFormat::from_path(path), options)
}

/// Load raw articles in an explicit format. Records are validated one by
/// one; the first bad record aborts the load with its record number.
pub fn load_articles_format(
    path: &Path,
    format: CorpusFormat,
    options: &LoadOptions,
) -> Result<Vec<Article>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let articles = match format {
        CorpusFormat::Jsonl => parse_articles_jsonl(&text, options)?,
        CorpusFormat::Csv => parse_articles_csv(&text, options)?,
    };
    Ok(articles)
}

fn parse_articles_jsonl(text: &str, options: &LoadOptions) -> Result<Vec<Article>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let record = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let article: Article = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            record,
            message: e.to_string(),
        })?;
        validate_article(&article, record, options)?;
        if seen.contains(article.id.as_str()) {
            return Err(CorpusError::DuplicateId {
                record,
                id: article.id,
            });
        }
        seen.insert(article.id.clone());
        out.push(article);
    }
    // The borrow-free insert above clones; keep the helper for CSV reuse.
    let _ = check_unique_ids;
    Ok(out)
}

fn parse_articles_csv(text: &str, options: &LoadOptions) -> Result<Vec<Article>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CorpusError::Malformed {
            record: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let base = ["id", "domain", "title", "body"];
    let with_source = ["id", "domain", "title", "body", "source"];
    if headers != base && headers != with_source {
        return Err(CorpusError::CsvHeader {
            found: headers.join(","),
        });
    }

    #[derive(Deserialize)]
    struct Row {
        id: String,
        domain: String,
        title: String,
        body: String,
        #[serde(default)]
        source: Option<String>,
    }

    let mut out = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let record = i + 1;
        let row = row.map_err(|e| CorpusError::Malformed {
            record,
            message: e.to_string(),
        })?;
        let domain: Domain =
            serde_json::from_value(serde_json::Value::String(row.domain.trim().to_string()))
                .map_err(|_| CorpusError::InvalidField {
                    record,
                    field: "domain",
                    problem: format!(
                        "unknown domain `{}`; expected one of {}",
                        row.domain.trim(),
                        Domain::ALL.map(|d| d.name()).join(", ")
                    ),
                })?;
        let article = Article {
            id: row.id,
            domain,
            title: row.title,
            body: row.body,
            source: row.source.filter(|s| !s.trim().is_empty()),
        };
        validate_article(&article, record, options)?;
        if !seen.insert(article.id.clone()) {
            return Err(CorpusError::DuplicateId {
                record,
                id: article.id,
            });
        }
        out.push(article);
    }
    Ok(out)
}

/// Write raw articles as JSONL (one object per line), atomically.
pub fn save_articles(path: &Path, articles: &[Article]) -> Result<(), CorpusError> {
    let mut buf = String::new();
    for article in articles {
        buf.push_str(&serde_json::to_string(article).expect("article serializes"));
        buf.push('\n');
    }
    atomic_write(path, buf.as_bytes()).map_err(|e| io_err(path, e))
}

/// Load labeled articles from JSONL, validating article invariants,
/// unique ids, and `attempts >= 1`.
pub fn load_labeled(
    path: &Path,
    options: &LoadOptions,
) -> Result<Vec<LabeledArticle>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let record = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let labeled: LabeledArticle =
            serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                record,
                message: e.to_string(),
            })?;
        validate_article(&labeled.article, record, options)?;
        if labeled.provenance.attempts < 1 {
            return Err(CorpusError::InvalidField {
                record,
                field: "provenance.attempts",
                problem: "must be >= 1".to_string(),
            });
        }
        if !seen.insert(labeled.article.id.clone()) {
            return Err(CorpusError::DuplicateId {
                record,
                id: labeled.article.id,
            });
        }
        out.push(labeled);
    }
    Ok(out)
}

/// Write labeled articles as JSONL, atomically.
pub fn save_labeled(path: &Path, labeled: &[LabeledArticle]) -> Result<(), CorpusError> {
    let mut buf = String::new();
    for item in labeled {
        buf.push_str(&serde_json::to_string(item).expect("labeled article serializes"));
        buf.push('\n');
    }
    atomic_write(path, buf.as_bytes()).map_err(|e| io_err(path, e))
}

/// Keep only articles with at least one positive flag, preserving order.
pub fn filter_labeled(labeled: Vec<LabeledArticle>) -> Vec<LabeledArticle> {
    labeled.into_iter().filter(|l| l.labels.any()).collect()
}

/// Positive/negative counts for one bias category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelCount {
    pub positive: usize,
    pub negative: usize,
}

impl LabelCount {
    pub fn total(&self) -> usize {
        self.positive + self.negative
    }
}

/// Dataset statistics: article counts per domain and positive/negative
/// counts per bias category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsReport {
    /// Counts for the six named domains in canonical order; an `other` row
    /// is appended only when present in the data.
    pub domain_counts: Vec<(Domain, usize)>,
    /// Per-category counts in canonical order.
    pub label_counts: [LabelCount; NUM_LABELS],
    pub total: usize,
}

impl StatsReport {
    /// Render as CSV with columns `kind,name,positive,negative,count`.
    /// Domain and total rows leave positive/negative empty.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["kind", "name", "positive", "negative", "count"])
            .expect("csv write");
        for (domain, count) in &self.domain_counts {
            w.write_record(["domain", domain.name(), "", "", &count.to_string()])
                .expect("csv write");
        }
        for label in BiasLabel::ALL {
            let c = self.label_counts[label.index()];
            w.write_record([
                "label",
                label.key(),
                &c.positive.to_string(),
                &c.negative.to_string(),
                &c.total().to_string(),
            ])
            .expect("csv write");
        }
        w.write_record(["total", "all", "", "", &self.total.to_string()])
            .expect("csv write");
        String::from_utf8(w.into_inner().expect("csv flush")).expect("csv utf8")
    }
}

/// Compute domain and label statistics over a labeled collection.
pub fn dataset_stats(labeled: &[LabeledArticle]) -> StatsReport {
    let mut per_domain: HashMap<Domain, usize> = HashMap::new();
    let mut label_counts = [LabelCount::default(); NUM_LABELS];
    for item in labeled {
        *per_domain.entry(item.article.domain).or_insert(0) += 1;
        for (label, flag) in item.labels.iter() {
            let c = &mut label_counts[label.index()];
            if flag {
                c.positive += 1;
            } else {
                c.negative += 1;
            }
        }
    }
    let mut domain_counts = Vec::new();
    for domain in Domain::ALL {
        let count = per_domain.get(&domain).copied().unwrap_or(0);
        if domain != Domain::Other || count > 0 {
            domain_counts.push((domain, count));
        }
    }
    StatsReport {
        domain_counts,
        label_counts,
        total: labeled.len(),
    }
}

/// Per-domain token frequencies over raw articles.
///
/// Tokens come from the shared tokenizer applied to title plus body;
/// `stopwords` are excluded. Each domain present in `articles` gets a
/// ranked list of at most `top_k` `(token, count)` pairs, ordered by count
/// descending then token ascending. Domains appear in canonical order.
///
/// `top_k` must be at least 1.
pub fn token_frequencies(
    articles: &[Article],
    top_k: usize,
    stopwords: &HashSet<String>,
) -> Vec<(Domain, Vec<(String, usize)>)> {
    assert!(top_k >= 1, "top_k must be >= 1");
    let mut per_domain: HashMap<Domain, HashMap<String, usize>> = HashMap::new();
    for article in articles {
        let counts = per_domain.entry(article.domain).or_default();
        for token in tokenize(&article.title)
            .into_iter()
            .chain(tokenize(&article.body))
        {
            if stopwords.contains(&token) {
                continue;
            }
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut out = Vec::new();
    for domain in Domain::ALL {
        let Some(counts) = per_domain.remove(&domain) else {
            continue;
        };
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        out.push((domain, ranked));
    }
    out
}

/// Render token frequencies as CSV with columns `domain,rank,token,count`.
pub fn token_frequencies_to_csv(freqs: &[(Domain, Vec<(String, usize)>)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["domain", "rank", "token", "count"])
        .expect("csv write");
    for (domain, tokens) in freqs {
        for (rank, (token, count)) in tokens.iter().enumerate() {
            w.write_record([
                domain.name(),
                &(rank + 1).to_string(),
                token,
                &count.to_string(),
            ])
            .expect("csv write");
        }
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv utf8")
}
