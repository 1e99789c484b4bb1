//! Chat clients: the HTTP client for OpenAI-style chat completion
//! endpoints and the scripted keyword client used for offline runs.

use std::time::Duration;

use thiserror::Error;

use crate::annotator::parse::render_labels;
use crate::annotator::schema::AnnotationSchema;
use crate::annotator::{AnnotateError, LlmConfig};
use crate::labels::{BiasLabel, BiasVector};
use crate::trainer::tokenize;

/// One chat completion request: a system message and a user message.
#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub model_id: &'a str,
    pub temperature: f64,
    pub system_text: &'a str,
    pub user_text: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("http status {code}")]
    HttpStatus { code: u16 },
    #[error("network error: {0}")]
    Network(String),
    #[error("unusable response payload: {0}")]
    BadPayload(String),
}

impl TransportError {
    /// Timeouts, 429, and 5xx are worth retrying; everything else is
    /// terminal.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Timeout => true,
            TransportError::HttpStatus { code } => *code == 429 || (500..=599).contains(code),
            _ => false,
        }
    }
}

/// Anything that can answer a chat request with raw response text.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError>;
}

/// Blocking HTTP client for `POST <endpoint>` with an OpenAI-style chat
/// completion payload and optional bearer auth.
pub struct HttpChatClient {
    endpoint: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(
        endpoint: &str,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, AnnotateError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| AnnotateError::Client(e.to_string()))?;
        Ok(HttpChatClient {
            endpoint: endpoint.to_string(),
            api_key,
            http,
        })
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        let body = serde_json::json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "messages": [
                { "role": "system", "content": request.system_text },
                { "role": "user", "content": request.user_text },
            ],
        });
        let mut builder = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Network(e.to_string())
            }
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(TransportError::HttpStatus {
                code: status.as_u16(),
            });
        }
        let payload: serde_json::Value = response
            .json()
            .map_err(|e| TransportError::BadPayload(e.to_string()))?;
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                TransportError::BadPayload("missing choices[0].message.content".to_string())
            })
    }
}

/// Endpoint URL that selects the scripted keyword client.
pub const KEYWORD_CLIENT_ENDPOINT: &str = "mock:keywords";

/// Signal keywords per category for the scripted client. A category is
/// positive when any of its keywords appears as a token in the user text.
pub const CATEGORY_KEYWORDS: [(BiasLabel, &[&str]); 7] = [
    (
        BiasLabel::Political,
        &["partisan", "electioneering", "ideologue"],
    ),
    (
        BiasLabel::Gender,
        &["sexist", "objectifying", "mansplaining"],
    ),
    (BiasLabel::Entity, &["puffery", "smearing", "favoritism"]),
    (
        BiasLabel::Racial,
        &["xenophobic", "ethnocentric", "racialized"],
    ),
    (
        BiasLabel::Religious,
        &["sectarian", "heretical", "zealotry"],
    ),
    (
        BiasLabel::Regional,
        &["provincialism", "flyover", "heartlanders"],
    ),
    (
        BiasLabel::Sensational,
        &["bombshell", "jawdropping", "apocalyptic"],
    ),
];

/// Deterministic offline stand-in for a chat endpoint: labels by keyword
/// lookup on the user text and responds in the standard line format.
pub struct KeywordClient {
    schema: AnnotationSchema,
}

impl KeywordClient {
    pub fn new() -> Self {
        KeywordClient {
            schema: AnnotationSchema::standard(),
        }
    }

    /// The labels the scripted client will assign to a piece of text.
    pub fn labels_for_text(text: &str) -> BiasVector {
        let tokens: std::collections::HashSet<String> = tokenize(text).into_iter().collect();
        let mut labels = BiasVector::zeros();
        for (label, keywords) in CATEGORY_KEYWORDS {
            if keywords.iter().any(|k| tokens.contains(*k)) {
                labels.set(label, true);
            }
        }
        labels
    }
}

impl Default for KeywordClient {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatClient for KeywordClient {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        let labels = Self::labels_for_text(request.user_text);
        Ok(render_labels(&labels, &self.schema))
    }
}

/// Build the client an [`LlmConfig`] points at: `mock:` endpoints select
/// scripted clients, anything else goes over HTTP.
pub fn client_from_config(
    config: &LlmConfig,
    api_key: Option<String>,
) -> Result<Box<dyn ChatClient>, AnnotateError> {
    if let Some(name) = config.endpoint_url.strip_prefix("mock:") {
        return match name {
            "keywords" => Ok(Box::new(KeywordClient::new())),
            other => Err(AnnotateError::Client(format!(
                "unknown scripted endpoint `mock:{other}`; available: {KEYWORD_CLIENT_ENDPOINT}"
            ))),
        };
    }
    let timeout = Duration::from_secs_f64(config.timeout_secs);
    Ok(Box::new(HttpChatClient::new(
        &config.endpoint_url,
        api_key,
        timeout,
    )?))
}
