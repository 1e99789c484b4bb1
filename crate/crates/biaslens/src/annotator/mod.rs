//! Article annotation through a chat-completion protocol: prompt
//! construction from a category schema, response parsing, retry and
//! re-prompt policies, a persistent response cache, and bounded-
//! concurrency batch annotation.

pub mod cache;
pub mod client;
pub mod parse;
pub mod schema;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Article, LabeledArticle, Provenance};
use crate::labels::BiasVector;
use crate::trainer::features::{truncate_chars, BODY_CHAR_LIMIT};
use crate::util::sha256_hex;

pub use cache::{cache_key_digest, AnnotationCache, CacheRecord};
pub use client::{
    client_from_config, ChatClient, ChatRequest, HttpChatClient, KeywordClient, TransportError,
    CATEGORY_KEYWORDS, KEYWORD_CLIENT_ENDPOINT,
};
pub use parse::{parse_category_values, parse_labels, render_labels, ParseLabelsError};
pub use schema::{AnnotationSchema, BiasCategory};

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("invalid prompt template: {0}")]
    Template(String),
    #[error("article field `{field}` is empty")]
    EmptyField { field: &'static str },
    #[error("invalid annotator config: {0}")]
    InvalidConfig(String),
    #[error("invalid schema: {0}")]
    SchemaInvalid(String),
    #[error("client error: {0}")]
    Client(String),
    #[error("cache io error on {path}: {source}")]
    CacheIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache file {path} line {line}: {message}")]
    CacheFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Annotation endpoint settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Chat completion URL, or a `mock:` name for a scripted client.
    pub endpoint_url: String,
    pub model_id: String,
    /// Sampling temperature in [0, 1].
    pub temperature: f64,
    pub timeout_secs: f64,
    /// Transport retries per request (beyond the first call).
    pub max_retries: u32,
    /// Format-reminder re-prompts after a parse failure.
    pub max_reprompts: u32,
    /// Maximum in-flight requests during batch annotation.
    pub concurrency_limit: usize,
    /// Base for exponential backoff with full jitter; 0 disables sleeping.
    pub backoff_base_ms: u64,
    pub cache_path: PathBuf,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint_url: KEYWORD_CLIENT_ENDPOINT.to_string(),
            model_id: "keyword-rules-v1".to_string(),
            temperature: 0.0,
            timeout_secs: 30.0,
            max_retries: 3,
            max_reprompts: 2,
            concurrency_limit: 4,
            backoff_base_ms: 1000,
            cache_path: PathBuf::from("out/annotation_cache.jsonl"),
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), AnnotateError> {
        if self.endpoint_url.trim().is_empty() {
            return Err(AnnotateError::InvalidConfig(
                "endpoint_url must be non-empty".to_string(),
            ));
        }
        if self.model_id.trim().is_empty() {
            return Err(AnnotateError::InvalidConfig(
                "model_id must be non-empty".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(AnnotateError::InvalidConfig(
                "temperature must be in [0, 1]".to_string(),
            ));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(AnnotateError::InvalidConfig(
                "timeout_secs must be > 0".to_string(),
            ));
        }
        if self.concurrency_limit < 1 {
            return Err(AnnotateError::InvalidConfig(
                "concurrency_limit must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// A rendered prompt: the system message (definitions, rules, exemplar)
/// and the user message (the article).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub system_text: String,
    pub user_text: String,
}

/// Line separating the system section from the user section in a template
/// file.
pub const USER_SECTION_MARKER: &str = "---USER---";

const DEFINITIONS_SLOT: &str = "{{DEFINITIONS}}";
const EXEMPLAR_SLOT: &str = "{{EXEMPLAR}}";
const TITLE_SLOT: &str = "{{TITLE}}";
const BODY_SLOT: &str = "{{BODY}}";

/// A prompt template: system text above the `---USER---` marker, user
/// text below. The system part must carry `{{DEFINITIONS}}`, the user
/// part `{{TITLE}}` and `{{BODY}}`; `{{EXEMPLAR}}` expands to the
/// all-negative output example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    system_template: String,
    user_template: String,
}

impl PromptTemplate {
    /// The template compiled into the library.
    pub fn builtin() -> Self {
        Self::from_text(include_str!("templates/annotation_prompt.txt"))
            .expect("builtin template is valid")
    }

    pub fn from_text(text: &str) -> Result<Self, AnnotateError> {
        let separator = format!("{USER_SECTION_MARKER}\n");
        let mut parts = text.splitn(2, separator.as_str());
        let system_template = parts.next().unwrap_or_default().to_string();
        let Some(user_template) = parts.next() else {
            return Err(AnnotateError::Template(format!(
                "missing `{USER_SECTION_MARKER}` separator line"
            )));
        };
        if !system_template.contains(DEFINITIONS_SLOT) {
            return Err(AnnotateError::Template(format!(
                "system section must contain {DEFINITIONS_SLOT}"
            )));
        }
        for slot in [TITLE_SLOT, BODY_SLOT] {
            if !user_template.contains(slot) {
                return Err(AnnotateError::Template(format!(
                    "user section must contain {slot}"
                )));
            }
        }
        Ok(PromptTemplate {
            system_template,
            user_template: user_template.to_string(),
        })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, AnnotateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AnnotateError::Template(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Render the builtin template for one article.
pub fn build_prompt(
    article: &Article,
    schema: &AnnotationSchema,
) -> Result<PromptPair, AnnotateError> {
    build_prompt_with(&PromptTemplate::builtin(), article, schema)
}

/// Render a template for one article: definitions and exemplar go into the
/// system text, title and truncated body into the user text. Deterministic.
pub fn build_prompt_with(
    template: &PromptTemplate,
    article: &Article,
    schema: &AnnotationSchema,
) -> Result<PromptPair, AnnotateError> {
    let title = article.title.trim();
    if title.is_empty() {
        return Err(AnnotateError::EmptyField { field: "title" });
    }
    let body = truncate_chars(article.body.trim(), BODY_CHAR_LIMIT).trim_end();
    if body.is_empty() {
        return Err(AnnotateError::EmptyField { field: "body" });
    }
    let system_text = template
        .system_template
        .replace(DEFINITIONS_SLOT, &schema.definitions_block())
        .replace(EXEMPLAR_SLOT, &schema.exemplar_block());
    let user_text = template
        .user_template
        .replace(TITLE_SLOT, title)
        .replace(BODY_SLOT, body);
    Ok(PromptPair {
        system_text,
        user_text: user_text.trim_end().to_string(),
    })
}

/// Appended to the user message when a response failed to parse.
pub const FORMAT_REMINDER: &str = "Reminder: reply with exactly one line per category, in the order listed, formatted as `<Category Name>: 0` or `<Category Name>: 1`. Cover every category and output nothing else.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationStatus {
    Ok,
    ParseFailed,
    TransportFailed,
}

/// Outcome for one article. `labels` is present exactly when `status` is
/// `Ok`; `attempts` counts endpoint calls made for this article in this
/// run (0 on a cache hit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationResult {
    pub article_id: String,
    pub status: AnnotationStatus,
    pub labels: Option<BiasVector>,
    pub raw_text: String,
    pub attempts: u32,
}

impl AnnotationResult {
    pub fn is_ok(&self) -> bool {
        self.status == AnnotationStatus::Ok
    }
}

fn backoff_sleep(round: u32, base_ms: u64) {
    if base_ms == 0 {
        return;
    }
    let cap = base_ms.saturating_mul(1u64 << round.min(16));
    let jittered = rand::thread_rng().gen_range(0..=cap);
    std::thread::sleep(std::time::Duration::from_millis(jittered));
}

/// Annotate one article: call the endpoint, retrying transport failures
/// with exponential-backoff jitter, and re-prompt with a format reminder
/// when a response does not parse. All failures are encoded in the result
/// status; this never panics on endpoint behavior.
pub fn annotate_one(
    article: &Article,
    schema: &AnnotationSchema,
    config: &LlmConfig,
    client: &dyn ChatClient,
) -> AnnotationResult {
    match build_prompt(article, schema) {
        Ok(prompt) => annotate_prompted(&article.id, &prompt, schema, config, client),
        Err(e) => AnnotationResult {
            article_id: article.id.clone(),
            status: AnnotationStatus::ParseFailed,
            labels: None,
            raw_text: format!("prompt construction failed: {e}"),
            attempts: 0,
        },
    }
}

fn annotate_prompted(
    article_id: &str,
    prompt: &PromptPair,
    schema: &AnnotationSchema,
    config: &LlmConfig,
    client: &dyn ChatClient,
) -> AnnotationResult {
    let mut attempts = 0u32;
    let mut last_raw = String::new();
    for round in 0..=config.max_reprompts {
        let user_text = if round == 0 {
            prompt.user_text.clone()
        } else {
            format!("{}\n\n{FORMAT_REMINDER}", prompt.user_text)
        };
        let request = ChatRequest {
            model_id: &config.model_id,
            temperature: config.temperature,
            system_text: &prompt.system_text,
            user_text: &user_text,
        };
        let mut retries = 0u32;
        let raw = loop {
            attempts += 1;
            match client.complete(&request) {
                Ok(raw) => break Ok(raw),
                Err(e) if e.is_retryable() && retries < config.max_retries => {
                    backoff_sleep(retries, config.backoff_base_ms);
                    retries += 1;
                }
                Err(e) => break Err(e),
            }
        };
        match raw {
            Err(e) => {
                return AnnotationResult {
                    article_id: article_id.to_string(),
                    status: AnnotationStatus::TransportFailed,
                    labels: None,
                    raw_text: e.to_string(),
                    attempts,
                }
            }
            Ok(raw) => match parse_labels(&raw, schema) {
                Ok(labels) => {
                    return AnnotationResult {
                        article_id: article_id.to_string(),
                        status: AnnotationStatus::Ok,
                        labels: Some(labels),
                        raw_text: raw,
                        attempts,
                    }
                }
                Err(_) => last_raw = raw,
            },
        }
    }
    AnnotationResult {
        article_id: article_id.to_string(),
        status: AnnotationStatus::ParseFailed,
        labels: None,
        raw_text: last_raw,
        attempts,
    }
}

/// Counts for one batch run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BatchSummary {
    pub total: usize,
    pub ok: usize,
    pub parse_failed: usize,
    pub transport_failed: usize,
    pub cache_hits: usize,
}

fn run_batch(
    articles: &[Article],
    schema: &AnnotationSchema,
    config: &LlmConfig,
    client: &dyn ChatClient,
    cache: &Mutex<AnnotationCache>,
) -> Vec<AnnotationResult> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<AnnotationResult>>> =
        (0..articles.len()).map(|_| Mutex::new(None)).collect();
    let workers = config.concurrency_limit.min(articles.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= articles.len() {
                    break;
                }
                let result = annotate_with_cache(&articles[i], schema, config, client, cache);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

fn annotate_with_cache(
    article: &Article,
    schema: &AnnotationSchema,
    config: &LlmConfig,
    client: &dyn ChatClient,
    cache: &Mutex<AnnotationCache>,
) -> AnnotationResult {
    let prompt = match build_prompt(article, schema) {
        Ok(p) => p,
        Err(e) => {
            return AnnotationResult {
                article_id: article.id.clone(),
                status: AnnotationStatus::ParseFailed,
                labels: None,
                raw_text: format!("prompt construction failed: {e}"),
                attempts: 0,
            }
        }
    };
    let digest = cache_key_digest(
        &article.id,
        &prompt.system_text,
        &prompt.user_text,
        &config.model_id,
    );
    if let Some(record) = cache.lock().unwrap().get(&digest).cloned() {
        return AnnotationResult {
            article_id: article.id.clone(),
            status: AnnotationStatus::Ok,
            labels: Some(record.labels),
            raw_text: record.raw_text,
            attempts: 0,
        };
    }
    let result = annotate_prompted(&article.id, &prompt, schema, config, client);
    if result.is_ok() {
        let record = CacheRecord {
            key_digest: digest,
            article_id: article.id.clone(),
            model_id: config.model_id.clone(),
            raw_text: result.raw_text.clone(),
            labels: result.labels.expect("ok result has labels"),
            timestamp: chrono::Utc::now(),
        };
        // Append failures must not lose the annotation; surface as a
        // result anyway and let the next run redo the call.
        let _ = cache.lock().unwrap().append(record);
    }
    result
}

fn summarize(results: &[AnnotationResult]) -> BatchSummary {
    let mut summary = BatchSummary {
        total: results.len(),
        ..BatchSummary::default()
    };
    for r in results {
        match r.status {
            AnnotationStatus::Ok => {
                summary.ok += 1;
                if r.attempts == 0 {
                    summary.cache_hits += 1;
                }
            }
            AnnotationStatus::ParseFailed => summary.parse_failed += 1,
            AnnotationStatus::TransportFailed => summary.transport_failed += 1,
        }
    }
    summary
}

/// Annotate a batch with at most `concurrency_limit` requests in flight.
/// The cache at `config.cache_path` is consulted before any endpoint call
/// and extended with every fresh success. Results come back in input
/// order; per-article failures never abort the batch.
pub fn annotate_batch(
    articles: &[Article],
    schema: &AnnotationSchema,
    config: &LlmConfig,
    client: &dyn ChatClient,
) -> Result<(Vec<AnnotationResult>, BatchSummary), AnnotateError> {
    config.validate()?;
    let cache = Mutex::new(AnnotationCache::open(&config.cache_path)?);
    let results = run_batch(articles, schema, config, client, &cache);
    let summary = summarize(&results);
    Ok((results, summary))
}

/// [`annotate_batch`] plus assembly of labeled articles for the successful
/// results. Provenance timestamps come from the cache records, so a rerun
/// over cached annotations reproduces the labeled output byte for byte.
pub fn annotate_to_labeled(
    articles: &[Article],
    schema: &AnnotationSchema,
    config: &LlmConfig,
    client: &dyn ChatClient,
) -> Result<(Vec<LabeledArticle>, Vec<AnnotationResult>, BatchSummary), AnnotateError> {
    config.validate()?;
    let cache = Mutex::new(AnnotationCache::open(&config.cache_path)?);
    let results = run_batch(articles, schema, config, client, &cache);
    let summary = summarize(&results);
    let cache = cache.into_inner().unwrap();

    let mut labeled = Vec::with_capacity(summary.ok);
    for (article, result) in articles.iter().zip(&results) {
        if !result.is_ok() {
            continue;
        }
        let prompt = build_prompt(article, schema).expect("ok result had a valid prompt");
        let digest = cache_key_digest(
            &article.id,
            &prompt.system_text,
            &prompt.user_text,
            &config.model_id,
        );
        let timestamp = cache
            .get(&digest)
            .map(|r| r.timestamp)
            .unwrap_or_else(chrono::Utc::now);
        labeled.push(LabeledArticle {
            article: article.clone(),
            labels: result.labels.expect("ok result has labels"),
            provenance: Provenance {
                annotator_model_id: config.model_id.clone(),
                timestamp,
                raw_response_digest: sha256_hex(&[result.raw_text.as_bytes()]),
                attempts: result.attempts.max(1),
            },
        });
    }
    Ok((labeled, results, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Domain;
    use crate::labels::BiasLabel;
    use std::collections::VecDeque;

    fn article(id: &str, title: &str, body: &str) -> Article {
        Article {
            id: id.to_string(),
            domain: Domain::Politics,
            title: title.to_string(),
            body: body.to_string(),
            source: None,
        }
    }

    fn fast_config(dir: &std::path::Path) -> LlmConfig {
        LlmConfig {
            backoff_base_ms: 0,
            cache_path: dir.join("cache.jsonl"),
            ..LlmConfig::default()
        }
    }

    /// Replays a fixed sequence of responses, then repeats the last one.
    struct SequenceClient {
        responses: Mutex<VecDeque<Result<String, TransportError>>>,
        last: Result<String, TransportError>,
        calls: AtomicUsize,
    }

    impl SequenceClient {
        fn new(responses: Vec<Result<String, TransportError>>) -> Self {
            let last = responses.last().cloned().expect("at least one response");
            SequenceClient {
                responses: Mutex::new(responses.into()),
                last,
                calls: AtomicUsize::new(0),
            }
        }

        fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl ChatClient for SequenceClient {
        fn complete(&self, _request: &ChatRequest<'_>) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.responses
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| self.last.clone())
        }
    }

    fn valid_response(mask: u8) -> String {
        render_labels(&BiasVector::from_mask(mask), &AnnotationSchema::standard())
    }

    #[test]
    fn prompt_contains_definitions_exemplar_and_article() {
        let schema = AnnotationSchema::standard();
        let art = article(
            "a1",
            "Budget vote",
            "The chamber met to vote on the budget.",
        );
        let prompt = build_prompt(&art, &schema).unwrap();
        for cat in schema.categories() {
            assert_eq!(
                prompt.system_text.matches(&cat.definition).count(),
                1,
                "definition for {} should appear exactly once",
                cat.key
            );
            assert!(prompt
                .system_text
                .contains(&format!("{}: 0", cat.display_name)));
            assert!(
                !prompt.user_text.contains(&cat.definition),
                "user text must not carry definitions"
            );
        }
        assert!(prompt.user_text.contains("Budget vote"));
        assert!(prompt
            .user_text
            .contains("The chamber met to vote on the budget."));
        assert_eq!(prompt, build_prompt(&art, &schema).unwrap());
    }

    #[test]
    fn empty_title_or_body_is_an_error() {
        let schema = AnnotationSchema::standard();
        assert!(matches!(
            build_prompt(&article("a", "  ", "body text"), &schema),
            Err(AnnotateError::EmptyField { field: "title" })
        ));
        assert!(matches!(
            build_prompt(&article("a", "title", " \n "), &schema),
            Err(AnnotateError::EmptyField { field: "body" })
        ));
    }

    #[test]
    fn long_bodies_are_truncated() {
        let schema = AnnotationSchema::standard();
        let marker = "zzunreachable";
        let body = format!("{} {marker}", "word ".repeat(20_000));
        assert!(body.chars().count() > BODY_CHAR_LIMIT);
        let prompt = build_prompt(&article("a", "t", &body), &schema).unwrap();
        assert!(!prompt.user_text.contains(marker));
        assert!(prompt.user_text.chars().count() < BODY_CHAR_LIMIT + 2_000);
    }

    #[test]
    fn template_validation() {
        assert!(matches!(
            PromptTemplate::from_text("no marker {{DEFINITIONS}} {{TITLE}} {{BODY}}"),
            Err(AnnotateError::Template(_))
        ));
        assert!(matches!(
            PromptTemplate::from_text("sys\n---USER---\n{{TITLE}} {{BODY}}"),
            Err(AnnotateError::Template(_))
        ));
        assert!(matches!(
            PromptTemplate::from_text("{{DEFINITIONS}}\n---USER---\n{{TITLE}} only"),
            Err(AnnotateError::Template(_))
        ));
        let custom = PromptTemplate::from_text(
            "Rate these: {{DEFINITIONS}}\n---USER---\n{{TITLE}} :: {{BODY}}",
        )
        .unwrap();
        let prompt = build_prompt_with(
            &custom,
            &article("a", "Some title", "Some body"),
            &AnnotationSchema::standard(),
        )
        .unwrap();
        assert_eq!(prompt.user_text, "Some title :: Some body");
    }

    #[test]
    fn config_validation() {
        LlmConfig::default().validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut c = fast_config(dir.path());
        c.temperature = 1.5;
        assert!(c.validate().is_err());
        let mut c = fast_config(dir.path());
        c.concurrency_limit = 0;
        assert!(c.validate().is_err());
        let mut c = fast_config(dir.path());
        c.endpoint_url = String::new();
        assert!(c.validate().is_err());
    }

    #[test]
    fn annotate_one_happy_path() {
        let dir = tempfile::tempdir().unwrap();
        let config = fast_config(dir.path());
        let client = SequenceClient::new(vec![Ok(valid_response(0b0000101))]);
        let result = annotate_one(
            &article("a1", "t", "b"),
            &AnnotationSchema::standard(),
            &config,
            &client,
        );
        assert_eq!(result.status, AnnotationStatus::Ok);
        assert_eq!(result.attempts, 1);
        assert_eq!(result.labels.unwrap().to_mask(), 0b0000101);
        assert_eq!(result.article_id, "a1");
    }

    #[test]
    fn retryable_status_is_retried_then_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let config = fast_config(dir.path());
        let client = SequenceClient::new(vec![
            Err(TransportError::HttpStatus { code: 429 }),
            Ok(valid_response(1)),
        ]);
        let result = annotate_one(
            &article("a1", "t", "b"),
            &AnnotationSchema::standard(),
            &config,
            &client,
        );
        assert_eq!(result.status, AnnotationStatus::Ok);
        assert_eq!(result.attempts, 2);
    }

    #[test]
    fn retries_exhaust_then_transport_failed() {
        let dir = tempfile::tempdir().unwrap();
        let config = fast_config(dir.path());
        let client = SequenceClient::new(vec![Err(TransportError::HttpStatus { code: 503 })]);
        let result = annotate_one(
            &article("a1", "t", "b"),
            &AnnotationSchema::standard(),
            &config,
            &client,
        );
        assert_eq!(result.status, AnnotationStatus::TransportFailed);
        assert_eq!(result.attempts, config.max_retries + 1);
        assert!(result.labels.is_none());
        assert!(result.raw_text.contains("503"));
    }

    #[test]
    fn non_retryable_status_fails_immediately() {
        let dir = tempfile::tempdir().unwrap();
        let config = fast_config(dir.path());
        let client = SequenceClient::new(vec![Err(TransportError::HttpStatus { code: 401 })]);
        let result = annotate_one(
            &article("a1", "t", "b"),
            &AnnotationSchema::standard(),
            &config,
            &client,
        );
        assert_eq!(result.status, AnnotationStatus::TransportFailed);
        assert_eq!(result.attempts, 1);
    }

    #[test]
    fn garbage_responses_exhaust_reprompts() {
        let dir = tempfile::tempdir().unwrap();
        let config = fast_config(dir.path());
        let client =
            SequenceClient::new(vec![Ok("I refuse to answer in that format.".to_string())]);
        let result = annotate_one(
            &article("a1", "t", "b"),
            &AnnotationSchema::standard(),
            &config,
            &client,
        );
        assert_eq!(result.status, AnnotationStatus::ParseFailed);
        assert_eq!(result.attempts, config.max_reprompts + 1);
        assert_eq!(result.raw_text, "I refuse to answer in that format.");
        assert!(result.labels.is_none());
    }

    /// Returns garbage until the reminder shows up in the user text.
    struct ReminderSensitiveClient;

    impl ChatClient for ReminderSensitiveClient {
        fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
            if request.user_text.contains(FORMAT_REMINDER) {
                Ok(valid_response(0b1000000))
            } else {
                Ok("Sure! The article shows several biases worth discussing.".to_string())
            }
        }
    }

    #[test]
    fn reprompt_appends_reminder_and_recovers() {
        let dir = tempfile::tempdir().unwrap();
        let config = fast_config(dir.path());
        let result = annotate_one(
            &article("a1", "t", "b"),
            &AnnotationSchema::standard(),
            &config,
            &ReminderSensitiveClient,
        );
        assert_eq!(result.status, AnnotationStatus::Ok);
        assert_eq!(result.attempts, 2);
        assert!(result.labels.unwrap().get(BiasLabel::Sensational));
    }

    #[test]
    fn batch_preserves_order_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let config = fast_config(dir.path());
        let articles: Vec<Article> = (0..9)
            .map(|i| {
                article(
                    &format!("a{i}"),
                    &format!("Title {i}"),
                    &format!("Body {i} partisan"),
                )
            })
            .collect();
        let client = KeywordClient::new();
        let (results, summary) =
            annotate_batch(&articles, &AnnotationSchema::standard(), &config, &client).unwrap();
        assert_eq!(results.len(), 9);
        for (i, r) in results.iter().enumerate() {
            assert_eq!(r.article_id, format!("a{i}"));
            assert_eq!(r.status, AnnotationStatus::Ok);
            assert!(r.labels.unwrap().get(BiasLabel::Political));
        }
        assert_eq!(summary.total, 9);
        assert_eq!(summary.ok, 9);
        assert_eq!(summary.cache_hits, 0);
        assert_eq!(summary.parse_failed + summary.transport_failed, 0);
    }

    #[test]
    fn second_batch_run_is_all_cache_hits() {
        let dir = tempfile::tempdir().unwrap();
        let config = fast_config(dir.path());
        let articles: Vec<Article> = (0..5)
            .map(|i| article(&format!("a{i}"), "Title", "A bombshell partisan story"))
            .collect();
        let schema = AnnotationSchema::standard();

        let first_client = SequenceClient::new(vec![Ok(valid_response(0b1000001))]);
        let (first, summary1) = annotate_batch(&articles, &schema, &config, &first_client).unwrap();
        assert_eq!(summary1.ok, 5);
        assert_eq!(first_client.calls(), 5);

        let second_client = SequenceClient::new(vec![Ok(valid_response(0b1000001))]);
        let (second, summary2) =
            annotate_batch(&articles, &schema, &config, &second_client).unwrap();
        assert_eq!(second_client.calls(), 0, "cache must absorb every request");
        assert_eq!(summary2.cache_hits, 5);
        assert_eq!(summary2.ok, 5);
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.raw_text, b.raw_text);
            assert_eq!(b.attempts, 0);
        }
    }

    #[test]
    fn failures_do_not_abort_the_batch() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = fast_config(dir.path());
        config.concurrency_limit = 1;
        config.max_retries = 0;
        config.max_reprompts = 0;
        let articles = vec![
            article("good", "t", "b"),
            article("bad-transport", "t", "b"),
            article("bad-parse", "t", "b"),
        ];
        let client = SequenceClient::new(vec![
            Ok(valid_response(1)),
            Err(TransportError::HttpStatus { code: 500 }),
            Ok("nonsense".to_string()),
        ]);
        let (results, summary) =
            annotate_batch(&articles, &AnnotationSchema::standard(), &config, &client).unwrap();
        assert_eq!(results[0].status, AnnotationStatus::Ok);
        assert_eq!(results[1].status, AnnotationStatus::TransportFailed);
        assert_eq!(results[2].status, AnnotationStatus::ParseFailed);
        assert_eq!(summary.ok, 1);
        assert_eq!(summary.transport_failed, 1);
        assert_eq!(summary.parse_failed, 1);
    }

    #[test]
    fn labeled_output_is_stable_across_cached_reruns() {
        let dir = tempfile::tempdir().unwrap();
        let config = fast_config(dir.path());
        let articles: Vec<Article> = (0..4)
            .map(|i| {
                article(
                    &format!("a{i}"),
                    "An apocalyptic bombshell",
                    "sectarian zealotry everywhere",
                )
            })
            .collect();
        let schema = AnnotationSchema::standard();
        let client = KeywordClient::new();

        let (labeled1, results1, s1) =
            annotate_to_labeled(&articles, &schema, &config, &client).unwrap();
        let (labeled2, _, s2) = annotate_to_labeled(&articles, &schema, &config, &client).unwrap();
        assert_eq!(s1.ok, 4);
        assert_eq!(s2.cache_hits, 4);
        assert_eq!(
            labeled1, labeled2,
            "cached rerun must reproduce provenance too"
        );

        let first = &labeled1[0];
        assert!(first.labels.get(BiasLabel::Sensational));
        assert!(first.labels.get(BiasLabel::Religious));
        assert_eq!(first.provenance.annotator_model_id, config.model_id);
        assert_eq!(first.provenance.attempts, 1);
        assert_eq!(
            first.provenance.raw_response_digest,
            sha256_hex(&[results1[0].raw_text.as_bytes()])
        );
    }

    #[test]
    fn batch_respects_concurrency_limit() {
        use std::sync::atomic::AtomicIsize;

        struct GaugeClient {
            in_flight: AtomicIsize,
            peak: AtomicIsize,
        }

        impl ChatClient for GaugeClient {
            fn complete(&self, _request: &ChatRequest<'_>) -> Result<String, TransportError> {
                let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(15));
                self.in_flight.fetch_sub(1, Ordering::SeqCst);
                Ok(valid_response(0))
            }
        }

        let dir = tempfile::tempdir().unwrap();
        let mut config = fast_config(dir.path());
        config.concurrency_limit = 2;
        let articles: Vec<Article> = (0..12)
            .map(|i| article(&format!("a{i}"), "t", "b"))
            .collect();
        let client = GaugeClient {
            in_flight: AtomicIsize::new(0),
            peak: AtomicIsize::new(0),
        };
        let (_, summary) =
            annotate_batch(&articles, &AnnotationSchema::standard(), &config, &client).unwrap();
        assert_eq!(summary.ok, 12);
        let peak = client.peak.load(Ordering::SeqCst);
        assert!(peak <= 2, "peak in-flight {peak} exceeded the limit");
        assert_eq!(peak, 2, "twelve articles over two workers should overlap");
    }
}
