//! Tokenization, vocabulary, fixed-length encoding, dataset files and
//! report-grouped splitting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};
use crate::schema::{CertaintyClass, LabelSchema};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_N_TOK: usize = 50;

/// A sentence with its per-label certainty annotations. Labels absent from
/// `annotations` are `not_mentioned`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub report_id: String,
    pub text: String,
    pub annotations: BTreeMap<String, CertaintyClass>,
}

impl AnnotatedSentence {
    pub fn new(report_id: impl Into<String>, text: impl Into<String>) -> Self {
        AnnotatedSentence {
            report_id: report_id.into(),
            text: text.into(),
            annotations: BTreeMap::new(),
        }
    }

    pub fn with(mut self, label: impl Into<String>, class: CertaintyClass) -> Self {
        self.annotate(label, class);
        self
    }

    pub fn annotate(&mut self, label: impl Into<String>, class: CertaintyClass) {
        let label = label.into();
        if class.is_mentioned() {
            self.annotations.insert(label, class);
        } else {
            self.annotations.remove(&label);
        }
    }

    /// Gold certainty vector in schema order.
    pub fn gold(&self, schema: &LabelSchema) -> Vec<CertaintyClass> {
        schema
            .labels()
            .iter()
            .map(|l| self.annotations.get(&l.id).copied().unwrap_or_default())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum CharKind {
    Keep,
    Drop,
    Split,
}

fn classify(c: char) -> CharKind {
    use GeneralCategory::*;
    if c.is_whitespace() {
        return CharKind::Split;
    }
    match get_general_category(c) {
        DashPunctuation => CharKind::Split,
        ConnectorPunctuation | OpenPunctuation | ClosePunctuation | InitialPunctuation
        | FinalPunctuation | OtherPunctuation | MathSymbol | CurrencySymbol
        | ModifierSymbol | OtherSymbol => CharKind::Drop,
        _ => CharKind::Keep,
    }
}

/// Lowercased words with punctuation and symbols removed. Dashes separate
/// words; every other punctuation or symbol character is deleted in place.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        match classify(c) {
            CharKind::Keep => current.extend(c.to_lowercase()),
            CharKind::Drop => {}
            CharKind::Split => {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Naive splitter on ". ", for callers whose reports are not already split
/// into sentences.
pub fn split_sentences(report: &str) -> Vec<String> {
    report
        .split(". ")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocabulary {
    /// Builds a vocabulary from real tokens; ids start at 2.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(tokens.into_iter().map(Into::into));
        let index = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens: all, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Id of a real token; reserved markers are never looked up.
    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied().filter(|&id| id > UNK_ID)
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Real tokens in id order (ids 2..).
    pub fn real_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for t in &self.tokens {
            text.push_str(t);
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        for (i, expected) in [PAD_TOKEN, UNK_TOKEN].iter().enumerate() {
            if lines.next() != Some(*expected) {
                return Err(Error::Dataset {
                    line: i + 1,
                    message: format!("vocabulary must start with reserved `{expected}`"),
                });
            }
        }
        Ok(Self::from_tokens(lines.map(str::to_string)))
    }
}

/// Tokens with frequency ≥ `min_count` get ids from 2 upwards, most frequent
/// first, ties in lexicographic order.
pub fn build_vocab(sentences: &[Vec<String>], min_count: usize) -> Vocabulary {
    let min_count = min_count.max(1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in sentences {
        for t in s {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t))
}

/// Fixed-length token-id form of a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub token_ids: Vec<usize>,
    pub real_length: usize,
    /// Gold classes in schema order; empty when unlabelled.
    pub gold: Vec<CertaintyClass>,
}

impl EncodedExample {
    pub fn n_tok(&self) -> usize {
        self.token_ids.len()
    }

    pub fn real_ids(&self) -> &[usize] {
        &self.token_ids[..self.real_length]
    }

    pub fn with_gold(mut self, gold: Vec<CertaintyClass>) -> Self {
        self.gold = gold;
        self
    }
}

/// Maps tokens to ids (unknown → 1), keeps the first `n_tok` and pads with 0.
pub fn encode(tokens: &[String], vocab: &Vocabulary, n_tok: usize) -> EncodedExample {
    let n_tok = n_tok.max(1);
    let mut token_ids: Vec<usize> = tokens
        .iter()
        .take(n_tok)
        .map(|t| vocab.id_or_unk(t))
        .collect();
    let real_length = token_ids.len();
    token_ids.resize(n_tok, PAD_ID);
    EncodedExample {
        token_ids,
        real_length,
        gold: Vec::new(),
    }
}

#[derive(Serialize, Deserialize)]
struct SentenceRecord {
    report_id: String,
    text: String,
    #[serde(default)]
    labels: BTreeMap<String, String>,
}

/// Parses one dataset line, validating label ids against the schema.
pub fn parse_dataset_line(
    line: &str,
    line_no: usize,
    schema: &LabelSchema,
) -> Result<AnnotatedSentence> {
    let rec: SentenceRecord = serde_json::from_str(line).map_err(|e| Error::Dataset {
        line: line_no,
        message: e.to_string(),
    })?;
    let mut sentence = AnnotatedSentence::new(rec.report_id, rec.text);
    for (label, class) in rec.labels {
        if schema.index_of(&label).is_none() {
            return Err(Error::UnknownLabel(label));
        }
        let class: CertaintyClass = class.parse()?;
        sentence.annotate(label, class);
    }
    Ok(sentence)
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &LabelSchema) -> Result<Vec<AnnotatedSentence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_dataset_line(&line, i + 1, schema)?);
    }
    Ok(out)
}

pub fn dataset_line(sentence: &AnnotatedSentence) -> String {
    let rec = SentenceRecord {
        report_id: sentence.report_id.clone(),
        text: sentence.text.clone(),
        labels: sentence
            .annotations
            .iter()
            .map(|(k, v)| (k.clone(), v.as_str().to_string()))
            .collect(),
    };
    serde_json::to_string(&rec).expect("record serializes")
}

pub fn save_dataset(data: &[AnnotatedSentence], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in data {
        writeln!(w, "{}", dataset_line(s)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Partitions reports (not sentences) into train and validation sides.
pub fn split_by_report(
    data: &[AnnotatedSentence],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<AnnotatedSentence>, Vec<AnnotatedSentence>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut seen = HashSet::new();
    let mut reports: Vec<&str> = data
        .iter()
        .map(|s| s.report_id.as_str())
        .filter(|r| seen.insert(*r))
        .collect();
    if reports.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 distinct reports to split, found {}",
            reports.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reports.shuffle(&mut rng);
    let n_train = ((train_fraction * reports.len() as f64).round() as usize)
        .clamp(1, reports.len() - 1);
    let train_reports: HashSet<&str> = reports[..n_train].iter().copied().collect();
    let (train, val): (Vec<_>, Vec<_>) = data
        .iter()
        .cloned()
        .partition(|s| train_reports.contains(s.report_id.as_str()));
    Ok((train, val))
}
