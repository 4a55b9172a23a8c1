//! Label ontology and certainty classes.
//!
//! A [`LabelSchema`] is an ordered list of labels; the position of a label in
//! the list is its output index for every model and metric in the crate.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, SchemaError};

/// Certainty assigned to a (sentence, label) pair. The discriminants are the
/// class indices used in logits rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertaintyClass {
    #[default]
    NotMentioned = 0,
    Negative = 1,
    Uncertain = 2,
    Positive = 3,
}

/// Number of certainty classes (`n_C`).
pub const N_CLASSES: usize = 4;

impl CertaintyClass {
    pub const ALL: [CertaintyClass; N_CLASSES] = [
        CertaintyClass::NotMentioned,
        CertaintyClass::Negative,
        CertaintyClass::Uncertain,
        CertaintyClass::Positive,
    ];

    /// The classes that count towards metrics (everything but `not_mentioned`).
    pub const MENTIONED: [CertaintyClass; N_CLASSES - 1] = [
        CertaintyClass::Negative,
        CertaintyClass::Uncertain,
        CertaintyClass::Positive,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn is_mentioned(self) -> bool {
        self != CertaintyClass::NotMentioned
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CertaintyClass::NotMentioned => "not_mentioned",
            CertaintyClass::Negative => "negative",
            CertaintyClass::Uncertain => "uncertain",
            CertaintyClass::Positive => "positive",
        }
    }
}

impl fmt::Display for CertaintyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CertaintyClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "not_mentioned" => Ok(CertaintyClass::NotMentioned),
            "negative" => Ok(CertaintyClass::Negative),
            "uncertain" => Ok(CertaintyClass::Uncertain),
            "positive" => Ok(CertaintyClass::Positive),
            other => Err(Error::UnknownCertainty(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Finding,
    Impression,
    Crossover,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Finding => "finding",
            Category::Impression => "impression",
            Category::Crossover => "crossover",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "finding" => Some(Category::Finding),
            "impression" => Some(Category::Impression),
            "crossover" => Some(Category::Crossover),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Label {
    pub id: String,
    pub display_name: String,
    pub category: Category,
    /// Surface strings used by the synthetic sentence generator. Never empty.
    pub variants: Vec<String>,
}

impl Label {
    /// Builds a label; with no explicit variants the lowercased display name
    /// is the only surface form.
    pub fn new(
        id: impl Into<String>,
        display_name: impl Into<String>,
        category: Category,
        variants: Option<Vec<String>>,
    ) -> Self {
        let display_name = display_name.into();
        let variants = match variants {
            Some(v) if !v.is_empty() => v,
            _ => vec![display_name.to_lowercase()],
        };
        Label {
            id: id.into(),
            display_name,
            category,
            variants,
        }
    }
}

/// Lowercased surface strings of a label, in schema order.
pub fn expand_variants(label: &Label) -> Vec<String> {
    label.variants.iter().map(|v| v.to_lowercase()).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    id: String,
    display_name: String,
    category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variants: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSchema {
    labels: Vec<Label>,
}

const REFERENCE_SCHEMA: &str = include_str!("../data/reference_schema.json");

impl LabelSchema {
    pub fn new(labels: Vec<Label>) -> Result<Self, SchemaError> {
        if labels.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut seen = HashSet::new();
        for (index, label) in labels.iter().enumerate() {
            if label.id.is_empty() {
                return Err(SchemaError::EmptyId { index });
            }
            if label.variants.is_empty() {
                return Err(SchemaError::EmptyVariants {
                    id: label.id.clone(),
                });
            }
            if !seen.insert(label.id.as_str()) {
                return Err(SchemaError::DuplicateId {
                    id: label.id.clone(),
                    index,
                });
            }
        }
        Ok(LabelSchema { labels })
    }

    /// The bundled 31-label stroke CT schema (13 findings, 14 impressions,
    /// 4 crossover). Labels beyond those named in the literature are
    /// plausible stand-ins, not a clinical ground truth.
    pub fn reference() -> Self {
        Self::from_json(REFERENCE_SCHEMA).expect("bundled reference schema is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let records: Vec<LabelRecord> =
            serde_json::from_str(text).map_err(|e| SchemaError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        let mut labels = Vec::with_capacity(records.len());
        for (index, rec) in records.into_iter().enumerate() {
            if rec.id.is_empty() {
                return Err(SchemaError::EmptyId { index });
            }
            let category =
                Category::parse(&rec.category).ok_or_else(|| SchemaError::UnknownCategory {
                    id: rec.id.clone(),
                    category: rec.category.clone(),
                })?;
            if matches!(&rec.variants, Some(v) if v.is_empty()) {
                return Err(SchemaError::EmptyVariants { id: rec.id });
            }
            labels.push(Label::new(rec.id, rec.display_name, category, rec.variants));
        }
        Self::new(labels)
    }

    pub fn to_json(&self) -> String {
        let records: Vec<LabelRecord> = self
            .labels
            .iter()
            .map(|l| LabelRecord {
                id: l.id.clone(),
                display_name: l.display_name.clone(),
                category: l.category.as_str().to_string(),
                variants: Some(l.variants.clone()),
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&records).expect("schema serializes");
        s.push('\n');
        s
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// `n_L`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.id == id)
    }

    pub fn label(&self, index: usize) -> &Label {
        &self.labels[index]
    }

    pub fn ids(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.id.clone()).collect()
    }

    pub fn category_counts(&self) -> [(Category, usize); 3] {
        let count = |c| self.labels.iter().filter(|l| l.category == c).count();
        [
            (Category::Finding, count(Category::Finding)),
            (Category::Impression, count(Category::Impression)),
            (Category::Crossover, count(Category::Crossover)),
        ]
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn content_hash(&self) -> String {
        hex_digest(self.to_json().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<LabelSchema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(LabelSchema::from_json(&text)?)
}

pub fn save_schema(schema: &LabelSchema, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, schema.to_json()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_schema_shape() {
        let s = LabelSchema::reference();
        assert_eq!(s.len(), 31);
        assert_eq!(N_CLASSES, 4);
        let counts = s.category_counts();
        assert_eq!(counts.map(|(_, n)| n), [13, 14, 4]);
        let surface: usize = s.labels().iter().map(|l| expand_variants(l).len()).sum();
        assert_eq!(surface, 36);
    }

    #[test]
    fn variant_expansion() {
        let s = LabelSchema::reference();
        let h = s.label(s.index_of("haemorrhage").unwrap());
        assert_eq!(expand_variants(h), ["haemorrhage", "haematoma", "contusion"]);
        let a = s.label(s.index_of("abscess").unwrap());
        assert_eq!(expand_variants(a), ["abscess"]);
        let v = s.label(s.index_of("vessel_occlusion").unwrap());
        assert_eq!(expand_variants(v), ["embolus", "thrombus"]);
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = r#"[
            {"id": "infarct", "display_name": "Infarct", "category": "impression"},
            {"id": "infarct", "display_name": "Infarct again", "category": "finding"}
        ]"#;
        assert_eq!(
            LabelSchema::from_json(text),
            Err(SchemaError::DuplicateId {
                id: "infarct".into(),
                index: 1
            })
        );
    }

    #[test]
    fn empty_and_bad_category_rejected() {
        assert_eq!(LabelSchema::from_json("[]"), Err(SchemaError::Empty));
        let text = r#"[{"id": "x", "display_name": "X", "category": "symptom"}]"#;
        assert!(matches!(
            LabelSchema::from_json(text),
            Err(SchemaError::UnknownCategory { id, .. }) if id == "x"
        ));
        let text = r#"[{"id": "x", "display_name": "X", "category": "finding", "variants": []}]"#;
        assert!(matches!(
            LabelSchema::from_json(text),
            Err(SchemaError::EmptyVariants { .. })
        ));
    }

    #[test]
    fn parse_error_carries_position() {
        let err = LabelSchema::from_json("[\n{\"id\": }").unwrap_err();
        assert!(matches!(err, SchemaError::Parse { line: 2, .. }));
    }

    #[test]
    fn missing_file() {
        let err = load_schema("/nonexistent/labels.json").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn certainty_encoding() {
        for (i, c) in CertaintyClass::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(c.as_str().parse::<CertaintyClass>().unwrap(), *c);
        }
        assert_eq!(CertaintyClass::default(), CertaintyClass::NotMentioned);
        assert!(!CertaintyClass::MENTIONED.contains(&CertaintyClass::NotMentioned));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.json");
        let s = LabelSchema::reference();
        save_schema(&s, &path).unwrap();
        let a = load_schema(&path).unwrap();
        let b = load_schema(&path).unwrap();
        assert_eq!(a, s);
        for l in s.labels() {
            assert_eq!(a.index_of(&l.id), b.index_of(&l.id));
        }
    }
}
