//! Micro/macro F1 over the mentioned certainty classes, per-label tables and
//! error categorization.
//!
//! `not_mentioned` never produces a true positive, false positive or false
//! negative of its own; it only shows up as the "other side" of an error on a
//! mentioned class.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{CertaintyClass, LabelSchema, N_CLASSES};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// TP/FP/FN per (label, mentioned class), plus the raw (gold, predicted)
/// pair counts per label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTensor {
    /// `counts[label][class.index() - 1]`
    pub counts: Vec<[Counts; N_CLASSES - 1]>,
    /// `pairs[label][gold][pred]`
    pub pairs: Vec<[[u64; N_CLASSES]; N_CLASSES]>,
}

fn mentioned_slot(c: CertaintyClass) -> Option<usize> {
    c.index().checked_sub(1)
}

impl ConfusionTensor {
    pub fn new(n_labels: usize) -> Self {
        ConfusionTensor {
            counts: vec![[Counts::default(); N_CLASSES - 1]; n_labels],
            pairs: vec![[[0; N_CLASSES]; N_CLASSES]; n_labels],
        }
    }

    pub fn n_labels(&self) -> usize {
        self.counts.len()
    }

    /// Adds one sentence's predictions.
    pub fn add(&mut self, pred: &[CertaintyClass], gold: &[CertaintyClass]) -> Result<()> {
        if pred.len() != gold.len() || pred.len() != self.n_labels() {
            return Err(Error::InvalidArgument(format!(
                "{} predictions and {} gold classes for {} labels",
                pred.len(),
                gold.len(),
                self.n_labels()
            )));
        }
        for (l, (&p, &g)) in pred.iter().zip(gold).enumerate() {
            self.pairs[l][g.index()][p.index()] += 1;
            if p == g {
                if let Some(s) = mentioned_slot(g) {
                    self.counts[l][s].tp += 1;
                }
            } else {
                if let Some(s) = mentioned_slot(p) {
                    self.counts[l][s].fp += 1;
                }
                if let Some(s) = mentioned_slot(g) {
                    self.counts[l][s].fn_ += 1;
                }
            }
        }
        Ok(())
    }

    /// Combines counts from a disjoint shard.
    pub fn merge(&mut self, other: &ConfusionTensor) -> Result<()> {
        if other.n_labels() != self.n_labels() {
            return Err(Error::InvalidArgument("confusion shards disagree on label count".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add(y);
            }
        }
        for (a, b) in self.pairs.iter_mut().zip(&other.pairs) {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
        }
        Ok(())
    }

    /// Counts for one label pooled over `classes`.
    pub fn label_counts(&self, label: usize, classes: &[CertaintyClass]) -> Counts {
        let mut c = Counts::default();
        for &class in classes {
            if let Some(s) = mentioned_slot(class) {
                c.add(&self.counts[label][s]);
            }
        }
        c
    }

    pub fn pooled_counts(&self, classes: &[CertaintyClass]) -> Counts {
        let mut c = Counts::default();
        for l in 0..self.n_labels() {
            c.add(&self.label_counts(l, classes));
        }
        c
    }
}

pub fn accumulate_confusion(
    preds: &[Vec<CertaintyClass>],
    golds: &[Vec<CertaintyClass>],
    n_labels: usize,
) -> Result<ConfusionTensor> {
    if preds.len() != golds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} gold sentences",
            preds.len(),
            golds.len()
        )));
    }
    let mut conf = ConfusionTensor::new(n_labels);
    for (p, g) in preds.iter().zip(golds) {
        conf.add(p, g)?;
    }
    Ok(conf)
}

/// Conventions for degenerate F1 cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Options {
    /// Score used when `2TP + FP + FN = 0`.
    pub zero_division: f64,
    /// Leave labels with neither gold nor predicted mentions out of the macro mean.
    pub macro_exclude_unsupported: bool,
}

impl Default for F1Options {
    fn default() -> Self {
        F1Options {
            zero_division: 0.0,
            macro_exclude_unsupported: true,
        }
    }
}

pub fn f1_from_counts(c: &Counts, opts: &F1Options) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        opts.zero_division
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

pub fn f1_micro(conf: &ConfusionTensor, classes: &[CertaintyClass]) -> f64 {
    f1_micro_with(conf, classes, &F1Options::default())
}

pub fn f1_micro_with(conf: &ConfusionTensor, classes: &[CertaintyClass], opts: &F1Options) -> f64 {
    f1_from_counts(&conf.pooled_counts(classes), opts)
}

pub fn f1_macro(conf: &ConfusionTensor, classes: &[CertaintyClass]) -> f64 {
    f1_macro_with(conf, classes, &F1Options::default())
}

pub fn f1_macro_with(conf: &ConfusionTensor, classes: &[CertaintyClass], opts: &F1Options) -> f64 {
    let mut sum = 0.0;
    let mut used = 0usize;
    for l in 0..conf.n_labels() {
        let c = conf.label_counts(l, classes);
        if opts.macro_exclude_unsupported && c.tp + c.fp + c.fn_ == 0 {
            continue;
        }
        sum += f1_from_counts(&c, opts);
        used += 1;
    }
    if used == 0 {
        log::warn!("no label has gold or predicted mentions; macro F1 set to 0");
        return 0.0;
    }
    sum / used as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Missed,
    False,
    Confusion,
}

impl ErrorKind {
    pub fn classify(gold: CertaintyClass, pred: CertaintyClass) -> Option<ErrorKind> {
        match (gold.is_mentioned(), pred.is_mentioned()) {
            _ if gold == pred => None,
            (true, false) => Some(ErrorKind::Missed),
            (false, true) => Some(ErrorKind::False),
            _ => Some(ErrorKind::Confusion),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Missed => "missed",
            ErrorKind::False => "false",
            ErrorKind::Confusion => "confusion",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub missed: u64,
    pub false_positive: u64,
    pub confusion: u64,
}

impl ErrorBreakdown {
    pub fn total(&self) -> u64 {
        self.missed + self.false_positive + self.confusion
    }

    /// `(missed, false, confusion)` shares; all zero when there are no errors.
    pub fn proportions(&self) -> (f64, f64, f64) {
        let t = self.total();
        if t == 0 {
            return (0.0, 0.0, 0.0);
        }
        let t = t as f64;
        (self.missed as f64 / t, self.false_positive as f64 / t, self.confusion as f64 / t)
    }

    fn record(&mut self, kind: ErrorKind) {
        match kind {
            ErrorKind::Missed => self.missed += 1,
            ErrorKind::False => self.false_positive += 1,
            ErrorKind::Confusion => self.confusion += 1,
        }
    }
}

pub fn categorize_errors(preds: &[Vec<CertaintyClass>], golds: &[Vec<CertaintyClass>]) -> Result<ErrorBreakdown> {
    if preds.len() != golds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} gold sentences",
            preds.len(),
            golds.len()
        )));
    }
    let mut out = ErrorBreakdown::default();
    for (p, g) in preds.iter().zip(golds) {
        if p.len() != g.len() {
            return Err(Error::InvalidArgument("prediction and gold widths differ".into()));
        }
        for (&pc, &gc) in p.iter().zip(g) {
            if let Some(kind) = ErrorKind::classify(gc, pc) {
                out.record(kind);
            }
        }
    }
    Ok(out)
}

/// Column order of the four score groups: All, then each mentioned class.
pub const SCORE_COLUMNS: [&str; 4] = ["all", "negative", "uncertain", "positive"];

fn class_groups() -> [Vec<CertaintyClass>; 4] {
    [
        CertaintyClass::MENTIONED.to_vec(),
        vec![CertaintyClass::Negative],
        vec![CertaintyClass::Uncertain],
        vec![CertaintyClass::Positive],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub label: String,
    /// F1 in [`SCORE_COLUMNS`] order.
    pub f1: [f64; 4],
    /// Number of gold mentions.
    pub support: u64,
    pub predicted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_sentences: usize,
    pub micro: [f64; 4],
    pub macro_: [f64; 4],
    pub per_label: Vec<LabelScores>,
    pub errors: ErrorBreakdown,
}

impl EvalReport {
    pub fn micro_all(&self) -> f64 {
        self.micro[0]
    }

    pub fn macro_all(&self) -> f64 {
        self.macro_[0]
    }

    /// Two-row table with one column per score group.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "sentences: {}", self.n_sentences).unwrap();
        write!(s, "{:<8}", "").unwrap();
        for c in SCORE_COLUMNS {
            write!(s, "{c:>11}").unwrap();
        }
        s.push('\n');
        for (name, row) in [("micro", &self.micro), ("macro", &self.macro_)] {
            write!(s, "{name:<8}").unwrap();
            for v in row {
                write!(s, "{v:>11.4}").unwrap();
            }
            s.push('\n');
        }
        let (m, f, c) = self.errors.proportions();
        writeln!(
            s,
            "errors: {} (missed {:.1}%, false {:.1}%, certainty confusion {:.1}%)",
            self.errors.total(),
            100.0 * m,
            100.0 * f,
            100.0 * c
        )
        .unwrap();
        s
    }

    pub fn per_label_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "f1_all", "f1_negative", "f1_uncertain", "f1_positive", "support", "predicted"])
            .map_err(csv_err)?;
        for row in &self.per_label {
            let mut rec = vec![row.label.clone()];
            rec.extend(row.f1.iter().map(|v| format!("{v:.6}")));
            rec.push(row.support.to_string());
            rec.push(row.predicted.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        into_string(w)
    }

    pub fn errors_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["category", "count", "proportion"]).map_err(csv_err)?;
        let (m, f, c) = self.errors.proportions();
        for (kind, n, p) in [
            (ErrorKind::Missed, self.errors.missed, m),
            (ErrorKind::False, self.errors.false_positive, f),
            (ErrorKind::Confusion, self.errors.confusion, c),
        ] {
            w.write_record([kind.as_str().to_string(), n.to_string(), format!("{p:.6}")])
                .map_err(csv_err)?;
        }
        into_string(w)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

pub(crate) fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Full report for one prediction set.
pub fn evaluate(
    preds: &[Vec<CertaintyClass>],
    golds: &[Vec<CertaintyClass>],
    schema: &LabelSchema,
    opts: &F1Options,
) -> Result<EvalReport> {
    let conf = accumulate_confusion(preds, golds, schema.len())?;
    let groups = class_groups();
    let micro = groups.each_ref().map(|g| f1_micro_with(&conf, g, opts));
    let macro_ = groups.each_ref().map(|g| f1_macro_with(&conf, g, opts));
    let per_label = (0..schema.len())
        .map(|l| {
            let all = conf.label_counts(l, &CertaintyClass::MENTIONED);
            LabelScores {
                label: schema.label(l).id.clone(),
                f1: groups.each_ref().map(|g| f1_from_counts(&conf.label_counts(l, g), opts)),
                support: all.tp + all.fn_,
                predicted: all.tp + all.fp,
            }
        })
        .collect();
    Ok(EvalReport {
        n_sentences: preds.len(),
        micro,
        macro_,
        per_label,
        errors: categorize_errors(preds, golds)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use CertaintyClass::*;

    #[test]
    fn confusion_definitions() {
        let mut c = ConfusionTensor::new(1);
        c.add(&[Positive], &[Positive]).unwrap();
        assert_eq!(c.counts[0][2], Counts { tp: 1, fp: 0, fn_: 0 });
        let mut c = ConfusionTensor::new(1);
        c.add(&[Uncertain], &[Negative]).unwrap();
        assert_eq!(c.counts[0][0], Counts { tp: 0, fp: 0, fn_: 1 });
        assert_eq!(c.counts[0][1], Counts { tp: 0, fp: 1, fn_: 0 });
        let mut c = ConfusionTensor::new(1);
        c.add(&[NotMentioned], &[NotMentioned]).unwrap();
        assert_eq!(c.pooled_counts(&CertaintyClass::MENTIONED), Counts::default());
        assert!(c.add(&[NotMentioned], &[]).is_err());
    }

    #[test]
    fn f1_examples() {
        let c = Counts { tp: 2, fp: 1, fn_: 1 };
        assert_eq!(f1_from_counts(&c, &F1Options::default()), 2.0 / 3.0);
        assert_eq!(f1_from_counts(&Counts::default(), &F1Options::default()), 0.0);

        let golds = vec![vec![Positive, Negative]];
        let preds = vec![vec![Positive, Uncertain]];
        let conf = accumulate_confusion(&preds, &golds, 2).unwrap();
        let all = CertaintyClass::MENTIONED;
        // label 0 scores 1, label 1 scores 0
        assert_eq!(f1_macro(&conf, &all), 0.5);
        let one = accumulate_confusion(&[vec![Positive], vec![NotMentioned]], &[vec![Positive], vec![Negative]], 1).unwrap();
        assert_eq!(f1_macro(&one, &all), f1_micro(&one, &all));
    }

    #[test]
    fn macro_exclusion_flag() {
        let conf = accumulate_confusion(&[vec![Positive, NotMentioned]], &[vec![Positive, NotMentioned]], 2).unwrap();
        assert_eq!(f1_macro(&conf, &CertaintyClass::MENTIONED), 1.0);
        let keep = F1Options {
            macro_exclude_unsupported: false,
            ..F1Options::default()
        };
        assert_eq!(f1_macro_with(&conf, &CertaintyClass::MENTIONED, &keep), 0.5);
        let empty = ConfusionTensor::new(3);
        assert_eq!(f1_macro(&empty, &CertaintyClass::MENTIONED), 0.0);
    }

    #[test]
    fn error_categories() {
        assert_eq!(ErrorKind::classify(Positive, NotMentioned), Some(ErrorKind::Missed));
        assert_eq!(ErrorKind::classify(NotMentioned, Negative), Some(ErrorKind::False));
        assert_eq!(ErrorKind::classify(Negative, Uncertain), Some(ErrorKind::Confusion));
        assert_eq!(ErrorKind::classify(Negative, Negative), None);
        let b = categorize_errors(
            &[vec![NotMentioned, Negative, Uncertain, Positive]],
            &[vec![Positive, NotMentioned, Negative, Positive]],
        )
        .unwrap();
        assert_eq!((b.missed, b.false_positive, b.confusion), (1, 1, 1));
        let (m, f, c) = b.proportions();
        assert!((m + f + c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn merge_equals_whole() {
        let golds = vec![vec![Positive, Negative], vec![Uncertain, NotMentioned], vec![Negative, Negative]];
        let preds = vec![vec![Positive, NotMentioned], vec![Negative, Positive], vec![Negative, Negative]];
        let whole = accumulate_confusion(&preds, &golds, 2).unwrap();
        let mut a = accumulate_confusion(&preds[..1], &golds[..1], 2).unwrap();
        let b = accumulate_confusion(&preds[1..], &golds[1..], 2).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a, whole);
    }

    #[test]
    fn report_layout() {
        let schema = LabelSchema::reference();
        let gold = vec![NotMentioned; schema.len()];
        let mut pred = gold.clone();
        pred[0] = Positive;
        let mut g2 = gold.clone();
        g2[1] = Negative;
        let report = evaluate(&[pred, g2.clone()], &[gold, g2], &schema, &F1Options::default()).unwrap();
        assert_eq!(report.per_label.len(), schema.len());
        assert!(report.summary_text().contains("micro"));
        let csv = report.per_label_csv().unwrap();
        assert_eq!(csv.lines().count(), schema.len() + 1);
        assert!(report.errors_csv().unwrap().contains("false,1,1.000000"));
        assert_eq!(report.micro_all(), 2.0 / 3.0);
    }
}
