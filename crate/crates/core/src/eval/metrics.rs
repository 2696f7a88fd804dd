use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::Label;

/// Binary confusion counts with abnormal as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    /// Count `(truth, predicted)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = Self::default();
        for (truth, pred) in pairs {
            match (truth.is_positive(), pred.is_positive()) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub uar: f64,
    pub tpr: f64,
    pub tnr: f64,
    /// `FP / (TP + FP)`, the printed definition (a false discovery rate).
    pub fpr: f64,
    /// `FP / (FP + TN)`, the ROC x-axis.
    pub fpr_conventional: f64,
    pub f1: f64,
    pub mcc: f64,
    /// Some denominator was zero and the affected value reported as 0.
    pub degenerate: bool,
}

impl Metrics {
    pub const NAMES: [&'static str; 8] = ["acc", "uar", "tpr", "tnr", "fpr", "fpr_conventional", "f1", "mcc"];

    pub fn values(&self) -> [f64; 8] {
        [
            self.acc,
            self.uar,
            self.tpr,
            self.tnr,
            self.fpr,
            self.fpr_conventional,
            self.f1,
            self.mcc,
        ]
    }
}

fn ratio(num: f64, den: f64, degenerate: &mut bool) -> f64 {
    if den == 0.0 {
        *degenerate = true;
        0.0
    } else {
        num / den
    }
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    if c.total() == 0 {
        return Err(Error::Validation("confusion matrix is empty".into()));
    }
    let (tp, tn, fp, fnn) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let mut deg = false;
    let tpr = ratio(tp, tp + fnn, &mut deg);
    let tnr = ratio(tn, tn + fp, &mut deg);
    let fpr = ratio(fp, tp + fp, &mut deg);
    let fpr_conventional = ratio(fp, fp + tn, &mut deg);
    let acc = (tp + tn) / (tp + tn + fp + fnn);
    let f1 = ratio(2.0 * tp, 2.0 * tp + fp + fnn, &mut deg);
    let marg = (tp + fp) * (tp + fnn) * (tn + fp) * (tn + fnn);
    let mcc = ratio(tp * tn - fp * fnn, marg.sqrt(), &mut deg);
    Ok(Metrics {
        acc,
        uar: (tpr + tnr) / 2.0,
        tpr,
        tnr,
        fpr,
        fpr_conventional,
        f1,
        mcc,
        degenerate: deg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fragment,
    Subject,
}

/// One evaluated (run, fold, level) cell, as written to metrics JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub level: Level,
    pub metrics: Metrics,
    pub counts: ConfusionCounts,
    pub run: usize,
    #[serde(default)]
    pub fold: Option<usize>,
}

impl MetricsRecord {
    pub fn new(level: Level, counts: ConfusionCounts, run: usize, fold: Option<usize>) -> Result<Self> {
        Ok(Self {
            level,
            metrics: metrics(&counts)?,
            counts,
            run,
            fold,
        })
    }
}

/// Fragment probabilities of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectScores {
    pub subject_id: String,
    pub label: Label,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrediction {
    pub subject_id: String,
    pub label: Label,
    pub score: f64,
    pub predicted: Label,
}

/// Group `(subject, label, abnormal probability)` triples by subject,
/// sorted by id.
pub fn group_by_subject<'a>(items: impl IntoIterator<Item = (&'a str, Label, f64)>) -> Result<Vec<SubjectScores>> {
    let mut map: BTreeMap<&str, SubjectScores> = BTreeMap::new();
    for (id, label, p) in items {
        let e = map.entry(id).or_insert_with(|| SubjectScores {
            subject_id: id.to_string(),
            label,
            probs: Vec::new(),
        });
        if e.label != label {
            return Err(Error::Validation(format!("subject {id} carries both labels")));
        }
        e.probs.push(p);
    }
    Ok(map.into_values().collect())
}

/// Mean fragment probability per subject; abnormal iff `score >= threshold`.
pub fn aggregate_subject(groups: &[SubjectScores], threshold: f64) -> Result<Vec<SubjectPrediction>> {
    groups
        .iter()
        .map(|g| {
            if g.probs.is_empty() {
                return Err(Error::Aggregation(format!("subject {} has no fragments", g.subject_id)));
            }
            let score = g.probs.iter().sum::<f64>() / g.probs.len() as f64;
            Ok(SubjectPrediction {
                subject_id: g.subject_id.clone(),
                label: g.label,
                score,
                predicted: if score >= threshold { Label::Abnormal } else { Label::Normal },
            })
        })
        .collect()
}
