//! A small template-grammar corpus of report-like sentences for desk-scale
//! experiments. Each sentence joins one to three clauses; every clause names
//! one label with a cue phrase fixing its certainty, optionally followed by a
//! location. Two negated labels are sometimes coordinated under a single
//! cue ("no x or y").

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedSentence;
use crate::schema::{CertaintyClass, Label, LabelSchema};

/// Reference labels used by the toy corpus.
pub const TOY_LABELS: [&str; 15] = [
    "hyperdensity",
    "hypodensity",
    "mass_effect",
    "midline_shift",
    "calcification",
    "atrophy",
    "oedema",
    "infarct",
    "hydrocephalus",
    "tumour",
    "haemorrhage",
    "fracture",
    "abscess",
    "cyst",
    "aneurysm",
];

/// Toy labels that never occur in the generated training split by default.
pub const TOY_RARE_LABELS: [&str; 3] = ["abscess", "cyst", "aneurysm"];

const POSITIVE: [&str; 4] = ["there is [x]", "[x] is present", "in keeping with [x]", "appearances are of [x]"];
const NEGATIVE: [&str; 4] = ["no [x]", "no evidence of [x]", "there is no [x]", "[x] is not seen"];
const UNCERTAIN: [&str; 4] = ["possible [x]", "query [x]", "[x] cannot be excluded", "suspicious for [x]"];
const LOCATIONS: [&str; 6] = [
    "in the left frontal lobe",
    "in the right parietal region",
    "within the posterior fossa",
    "adjacent to the lateral ventricle",
    "in the basal ganglia",
    "over the convexity",
];
const CONNECTORS: [&str; 4] = [" and ", ", ", " but ", " with "];
const NORMAL: [&str; 4] = [
    "the ventricles are normal in size",
    "the scan is otherwise unremarkable",
    "comparison is made with the previous study",
    "the grey white matter differentiation is preserved",
];

/// The toy label subset of the reference schema, in [`TOY_LABELS`] order.
pub fn toy_schema() -> LabelSchema {
    let reference = LabelSchema::reference();
    let labels: Vec<Label> = TOY_LABELS
        .iter()
        .map(|id| {
            let i = reference.index_of(id).expect("toy label is in the reference schema");
            reference.label(i).clone()
        })
        .collect();
    LabelSchema::new(labels).expect("toy labels are unique")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusConfig {
    pub n_train: usize,
    pub n_val: usize,
    /// Upper bound on labelled clauses per sentence.
    pub max_clauses: usize,
    /// Labels kept out of the training split.
    pub rare_labels: Vec<String>,
    /// Share of sentences without any label.
    pub normal_fraction: f64,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig {
            n_train: 500,
            n_val: 200,
            max_clauses: 3,
            rare_labels: TOY_RARE_LABELS.iter().map(|s| s.to_string()).collect(),
            normal_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub train: Vec<AnnotatedSentence>,
    pub val: Vec<AnnotatedSentence>,
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty")
}

fn certainty<R: Rng>(rng: &mut R) -> CertaintyClass {
    match rng.gen_range(0..10) {
        0..=3 => CertaintyClass::Positive,
        4..=6 => CertaintyClass::Negative,
        _ => CertaintyClass::Uncertain,
    }
}

fn clause<R: Rng>(rng: &mut R, surface: &str, c: CertaintyClass) -> String {
    let templates = match c {
        CertaintyClass::Positive => &POSITIVE,
        CertaintyClass::Negative => &NEGATIVE,
        _ => &UNCERTAIN,
    };
    let mut s = pick(rng, templates).replace("[x]", surface);
    if rng.gen_bool(0.4) {
        s.push(' ');
        s.push_str(pick(rng, &LOCATIONS));
    }
    s
}

fn sentence<R: Rng>(rng: &mut R, schema: &LabelSchema, pool: &[usize], cfg: &ToyCorpusConfig, report_id: String) -> AnnotatedSentence {
    if pool.is_empty() || rng.gen_bool(cfg.normal_fraction) {
        let mut text = pick(rng, &NORMAL).to_string();
        text.push('.');
        return AnnotatedSentence::new(report_id, capitalize(&text));
    }
    let k = rng.gen_range(1..=cfg.max_clauses.max(1).min(pool.len()));
    let labels: Vec<usize> = pool.choose_multiple(rng, k).copied().collect();
    let mut out = AnnotatedSentence::new(report_id, String::new());
    let mut parts = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let label = schema.label(labels[i]);
        let surface = label.variants.choose(rng).expect("variants are non-empty").to_lowercase();
        let c = certainty(rng);
        if c == CertaintyClass::Negative && i + 1 < labels.len() && rng.gen_bool(0.3) {
            let other = schema.label(labels[i + 1]);
            let other_surface = other.variants.choose(rng).expect("variants are non-empty").to_lowercase();
            parts.push(format!("no {surface} or {other_surface}"));
            out.annotate(label.id.clone(), c);
            out.annotate(other.id.clone(), c);
            i += 2;
            continue;
        }
        parts.push(clause(rng, &surface, c));
        out.annotate(label.id.clone(), c);
        i += 1;
    }
    let mut text = parts[0].clone();
    for p in &parts[1..] {
        text.push_str(pick(rng, &CONNECTORS));
        text.push_str(p);
    }
    text.push('.');
    out.text = capitalize(&text);
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Generates the training and validation splits; labels named in
/// `rare_labels` appear only in validation.
pub fn generate_toy_corpus(schema: &LabelSchema, cfg: &ToyCorpusConfig) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all: Vec<usize> = (0..schema.len()).collect();
    let common: Vec<usize> = all
        .iter()
        .copied()
        .filter(|&l| !cfg.rare_labels.iter().any(|r| r == &schema.label(l).id))
        .collect();
    let train = (0..cfg.n_train)
        .map(|i| sentence(&mut rng, schema, &common, cfg, format!("toy-train/{}", i / 4)))
        .collect();
    let val = (0..cfg.n_val)
        .map(|i| sentence(&mut rng, schema, &all, cfg, format!("toy-val/{}", i / 4)))
        .collect();
    ToyCorpus { train, val }
}
