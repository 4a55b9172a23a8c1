//! Templated synthetic sentences, one per (label, variant, template).

use crate::corpus::AnnotatedSentence;
use crate::schema::{expand_variants, CertaintyClass, LabelSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticTemplate {
    /// Lowercased pattern with a `[label]` placeholder.
    pub pattern: &'static str,
    pub certainty: CertaintyClass,
}

pub const PLACEHOLDER: &str = "[label]";

pub const TEMPLATES: [SyntheticTemplate; 5] = [
    SyntheticTemplate {
        pattern: "there is [label].",
        certainty: CertaintyClass::Positive,
    },
    SyntheticTemplate {
        pattern: "there is [label] in the brain.",
        certainty: CertaintyClass::Positive,
    },
    SyntheticTemplate {
        pattern: "[label] is evident in the brain.",
        certainty: CertaintyClass::Positive,
    },
    SyntheticTemplate {
        pattern: "there may be [label].",
        certainty: CertaintyClass::Uncertain,
    },
    SyntheticTemplate {
        pattern: "there is no [label].",
        certainty: CertaintyClass::Negative,
    },
];

impl SyntheticTemplate {
    pub fn render(&self, surface: &str) -> String {
        self.pattern.replace(PLACEHOLDER, &surface.to_lowercase())
    }
}

/// Every template applied to every variant of every label, in schema,
/// variant and template order.
pub fn generate_synthetic(schema: &LabelSchema) -> Vec<AnnotatedSentence> {
    let mut out = Vec::new();
    for label in schema.labels() {
        for variant in expand_variants(label) {
            for (t, template) in TEMPLATES.iter().enumerate() {
                let report_id = format!("synthetic/{}/{}/{}", label.id, variant, t);
                out.push(
                    AnnotatedSentence::new(report_id, template.render(&variant))
                        .with(label.id.clone(), template.certainty),
                );
            }
        }
    }
    out
}
