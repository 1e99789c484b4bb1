//! Parsing model responses into label vectors.
//!
//! Two shapes are accepted: one `<Display Name>: <0|1>` line per category
//! (tolerant of case, surrounding whitespace, and bullet or emphasis
//! punctuation around the name), or a JSON object mapping category keys to
//! 0/1 (possibly wrapped in surrounding prose or a code fence).

use thiserror::Error;

use crate::annotator::schema::AnnotationSchema;
use crate::labels::{BiasVector, NUM_LABELS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseLabelsError {
    #[error("no recognizable label lines or JSON object in response")]
    UnrecognizedFormat,
    #[error("missing category `{key}`")]
    MissingCategory { key: String },
    #[error("duplicate category `{key}`")]
    DuplicateCategory { key: String },
    #[error("category `{key}` has invalid value `{value}`")]
    InvalidValue { key: String, value: String },
    #[error("schema has {found} categories, expected {expected}")]
    SchemaSize { expected: usize, found: usize },
}

fn normalize_name(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn strip_decoration(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || "*_`#->•\"'".contains(c))
}

/// Parse per-category 0/1 values in schema order.
pub fn parse_category_values(
    raw: &str,
    schema: &AnnotationSchema,
) -> Result<Vec<u8>, ParseLabelsError> {
    let line_result = parse_lines(raw, schema);
    if line_result.as_ref().is_ok_and(|r| r.complete()) {
        return Ok(line_result.unwrap().into_values());
    }
    if let Some(json_result) = parse_json(raw, schema) {
        if let Ok(values) = json_result {
            return Ok(values);
        }
        // A JSON object was present but unusable; prefer the more specific
        // line-scan error when the line scan matched something.
        match line_result {
            Ok(partial) if partial.matched > 0 => Err(partial.first_gap(schema)),
            Ok(_) => json_result,
            Err(e) => Err(e),
        }
    } else {
        match line_result {
            Ok(partial) if partial.matched > 0 => Err(partial.first_gap(schema)),
            Ok(_) => Err(ParseLabelsError::UnrecognizedFormat),
            Err(e) => Err(e),
        }
    }
}

/// Parse into the canonical seven-flag vector. The schema must have
/// exactly seven categories (position i maps to canonical flag i).
pub fn parse_labels(raw: &str, schema: &AnnotationSchema) -> Result<BiasVector, ParseLabelsError> {
    if schema.len() != NUM_LABELS {
        return Err(ParseLabelsError::SchemaSize {
            expected: NUM_LABELS,
            found: schema.len(),
        });
    }
    let values = parse_category_values(raw, schema)?;
    let mut flags = [false; NUM_LABELS];
    for (i, v) in values.iter().enumerate() {
        flags[i] = *v == 1;
    }
    Ok(BiasVector::new(flags))
}

/// Render a label vector in the exact line format the prompt requests.
pub fn render_labels(labels: &BiasVector, schema: &AnnotationSchema) -> String {
    assert_eq!(
        schema.len(),
        NUM_LABELS,
        "rendering a BiasVector needs a seven-category schema"
    );
    schema
        .categories()
        .iter()
        .zip(labels.as_array())
        .map(|(cat, flag)| format!("{}: {}", cat.display_name, flag as u8))
        .collect::<Vec<_>>()
        .join("\n")
}

struct LineScan {
    values: Vec<Option<u8>>,
    matched: usize,
}

impl LineScan {
    fn complete(&self) -> bool {
        self.values.iter().all(|v| v.is_some())
    }

    fn into_values(self) -> Vec<u8> {
        self.values.into_iter().map(|v| v.unwrap()).collect()
    }

    fn first_gap(&self, schema: &AnnotationSchema) -> ParseLabelsError {
        let idx = self.values.iter().position(|v| v.is_none()).unwrap_or(0);
        ParseLabelsError::MissingCategory {
            key: schema.categories()[idx].key.clone(),
        }
    }
}

fn parse_lines(raw: &str, schema: &AnnotationSchema) -> Result<LineScan, ParseLabelsError> {
    let mut scan = LineScan {
        values: vec![None; schema.len()],
        matched: 0,
    };
    for line in raw.lines() {
        let Some((name_part, value_part)) = line.split_once(':') else {
            continue;
        };
        let name = normalize_name(strip_decoration(name_part));
        let Some(idx) = schema
            .categories()
            .iter()
            .position(|c| normalize_name(&c.display_name) == name || c.key.to_lowercase() == name)
        else {
            continue;
        };
        let key = &schema.categories()[idx].key;
        let value = strip_decoration(value_part).trim_end_matches('.');
        let parsed = match value {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(ParseLabelsError::InvalidValue {
                    key: key.clone(),
                    value: other.to_string(),
                })
            }
        };
        if scan.values[idx].is_some() {
            return Err(ParseLabelsError::DuplicateCategory { key: key.clone() });
        }
        scan.values[idx] = Some(parsed);
        scan.matched += 1;
    }
    Ok(scan)
}

fn parse_json(raw: &str, schema: &AnnotationSchema) -> Option<Result<Vec<u8>, ParseLabelsError>> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    if end <= start {
        return None;
    }
    let object: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&raw[start..=end]).ok()?;
    let mut values = Vec::with_capacity(schema.len());
    for cat in schema.categories() {
        let Some(v) = object.get(&cat.key) else {
            return Some(Err(ParseLabelsError::MissingCategory {
                key: cat.key.clone(),
            }));
        };
        let parsed = match v {
            serde_json::Value::Number(n) if n.as_i64() == Some(0) => 0u8,
            serde_json::Value::Number(n) if n.as_i64() == Some(1) => 1u8,
            serde_json::Value::String(s) if s.trim() == "0" => 0u8,
            serde_json::Value::String(s) if s.trim() == "1" => 1u8,
            serde_json::Value::Bool(b) => *b as u8,
            other => {
                return Some(Err(ParseLabelsError::InvalidValue {
                    key: cat.key.clone(),
                    value: other.to_string(),
                }))
            }
        };
        values.push(parsed);
    }
    Some(Ok(values))
}
