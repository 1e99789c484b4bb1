//! The annotation schema: category keys, display names, and the
//! definitions the annotating model is instructed with. The schema is data
//! so deployments can tune wording (or add categories for the generic
//! parsing path) without code changes.

use serde::{Deserialize, Serialize};

use crate::annotator::AnnotateError;
use crate::labels::BiasLabel;

/// One category the annotator judges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasCategory {
    /// Stable snake_case key used in JSON artifacts.
    pub key: String,
    /// Name used in prompts and line-format responses.
    pub display_name: String,
    /// Instruction text describing when the category applies.
    pub definition: String,
}

/// Ordered, non-empty category list with unique keys and display names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BiasCategory>", into = "Vec<BiasCategory>")]
pub struct AnnotationSchema {
    categories: Vec<BiasCategory>,
}

const STANDARD_DEFINITIONS: [&str; 7] = [
    "The article unreasonably favors or criticizes a political party, politician, ideology, or government policy instead of reporting it even-handedly.",
    "People are evaluated or portrayed according to their gender, for example through appearance-focused coverage or stereotyped roles, rather than their actions or qualifications.",
    "Coverage disproportionately praises or denigrates a specific person, company, product, or organization beyond what the reported facts support.",
    "Individuals or groups are favored or disfavored on the basis of race, ethnicity, nationality, or culture, including stereotyped or derogatory framing.",
    "A religion or its adherents are unfairly favored, criticized, or portrayed as superior or inferior, or religious practices are described in a distorted way.",
    "People, events, or institutions are covered unfairly because of the place they belong to, producing skewed treatment of particular regions or their residents.",
    "Headlines or content exaggerate, shock, or dramatize to attract attention, putting emotional appeal ahead of factual accuracy.",
];

impl AnnotationSchema {
    /// The seven standard categories with their built-in definitions.
    pub fn standard() -> Self {
        let categories = BiasLabel::ALL
            .iter()
            .map(|&label| BiasCategory {
                key: label.key().to_string(),
                display_name: label.display_name().to_string(),
                definition: STANDARD_DEFINITIONS[label.index()].to_string(),
            })
            .collect();
        AnnotationSchema { categories }
    }

    pub fn new(categories: Vec<BiasCategory>) -> Result<Self, AnnotateError> {
        if categories.is_empty() {
            return Err(AnnotateError::SchemaInvalid(
                "schema needs at least one category".to_string(),
            ));
        }
        for cat in &categories {
            for (name, value) in [
                ("key", &cat.key),
                ("display_name", &cat.display_name),
                ("definition", &cat.definition),
            ] {
                if value.trim().is_empty() {
                    return Err(AnnotateError::SchemaInvalid(format!(
                        "category {name} must be non-empty"
                    )));
                }
            }
        }
        for (i, cat) in categories.iter().enumerate() {
            for other in &categories[..i] {
                if other.key.eq_ignore_ascii_case(&cat.key) {
                    return Err(AnnotateError::SchemaInvalid(format!(
                        "duplicate category key `{}`",
                        cat.key
                    )));
                }
                if other.display_name.to_lowercase() == cat.display_name.to_lowercase() {
                    return Err(AnnotateError::SchemaInvalid(format!(
                        "duplicate display name `{}`",
                        cat.display_name
                    )));
                }
            }
        }
        Ok(AnnotationSchema { categories })
    }

    pub fn categories(&self) -> &[BiasCategory] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True when the categories are exactly the seven canonical keys in
    /// canonical order.
    pub fn has_canonical_keys(&self) -> bool {
        self.categories.len() == BiasLabel::ALL.len()
            && self
                .categories
                .iter()
                .zip(BiasLabel::ALL)
                .all(|(c, l)| c.key == l.key())
    }

    /// `- <Display Name>: <definition>` lines, one per category.
    pub fn definitions_block(&self) -> String {
        self.categories
            .iter()
            .map(|c| format!("- {}: {}", c.display_name, c.definition))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// `<Display Name>: 0` lines, the all-negative output exemplar.
    pub fn exemplar_block(&self) -> String {
        self.categories
            .iter()
            .map(|c| format!("{}: 0", c.display_name))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl Default for AnnotationSchema {
    fn default() -> Self {
        Self::standard()
    }
}

impl TryFrom<Vec<BiasCategory>> for AnnotationSchema {
    type Error = String;

    fn try_from(categories: Vec<BiasCategory>) -> Result<Self, String> {
        AnnotationSchema::new(categories).map_err(|e| e.to_string())
    }
}

impl From<AnnotationSchema> for Vec<BiasCategory> {
    fn from(schema: AnnotationSchema) -> Self {
        schema.categories
    }
}
