//! Accuracy, rank-based AUROC, sensitivity and specificity.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Area under the ROC curve as the Mann-Whitney statistic: the share of
/// (positive, negative) pairs ranked correctly, ties counting one half.
/// `None` when either side is empty.
pub fn binary_auroc(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Average 1-based ranks over runs of equal scores.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// One-vs-one AUROC: for every class pair `(i, j)` the mean of
/// AUROC(i vs j on score i) and AUROC(j vs i on score j), averaged over all
/// pairs. `scores` is row-major `[B, C]`. `None` if any class is absent.
pub fn ovo_auroc(scores: &[f64], classes: usize, labels: &[usize]) -> Option<f64> {
    if classes < 2 {
        return None;
    }
    let col = |c: usize, of: usize| -> Vec<f64> {
        labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == of)
            .map(|(b, _)| scores[b * classes + c])
            .collect()
    };
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..classes {
        for j in i + 1..classes {
            let a_ij = binary_auroc(&col(i, i), &col(i, j))?;
            let a_ji = binary_auroc(&col(j, j), &col(j, i))?;
            total += 0.5 * (a_ij + a_ji);
            pairs += 1;
        }
    }
    Some(total / pairs as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub classes: usize,
    pub positive_class: usize,
    pub accuracy: f64,
    /// Binary: positive-class AUROC. Multiclass: one-vs-one mean.
    pub auroc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Metrics for class-probability rows `scores` (`[B, C]`, row-major).
/// Prediction is the arg-max, ties resolved toward the lower class.
/// TP/FP/TN/FN treat `positive_class` against all others.
pub fn compute_metrics(
    scores: &[f64],
    classes: usize,
    labels: &[usize],
    positive_class: usize,
) -> Result<MetricsReport, DataError> {
    let b = labels.len();
    if b == 0 {
        return Err(DataError::Invalid("metrics need at least one sample".into()));
    }
    if classes == 0 || scores.len() != b * classes {
        return Err(DataError::Invalid(format!(
            "{} scores do not form {b} rows of {classes} classes",
            scores.len()
        )));
    }
    if positive_class >= classes {
        return Err(DataError::Invalid(format!(
            "positive class {positive_class} out of range for {classes} classes"
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|&(_, &l)| l >= classes) {
        return Err(DataError::LabelOutOfRange {
            trial: i,
            label: l,
            classes,
        });
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0;
    for (row, &l) in scores.chunks(classes).zip(labels) {
        let mut pred = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[pred] {
                pred = c;
            }
        }
        confusion[l][pred] += 1;
        correct += usize::from(pred == l);
    }
    let p = positive_class;
    let tp = confusion[p][p];
    let fn_ = confusion[p].iter().sum::<usize>() - tp;
    let fp = (0..classes).map(|t| confusion[t][p]).sum::<usize>() - tp;
    let tn = b - tp - fn_ - fp;
    let auroc = if classes == 2 {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (row, &l) in scores.chunks(2).zip(labels) {
            if l == p {
                pos.push(row[p]);
            } else {
                neg.push(row[p]);
            }
        }
        binary_auroc(&pos, &neg)
    } else {
        ovo_auroc(scores, classes, labels)
    };
    Ok(MetricsReport {
        samples: b,
        classes,
        positive_class,
        accuracy: correct as f64 / b as f64,
        auroc,
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        tp,
        fp,
        tn,
        fn_,
        confusion,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |v| format!("{v:.6}"))
}

impl MetricsReport {
    /// Line-oriented `key=value` rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples={}", self.samples);
        let _ = writeln!(s, "classes={}", self.classes);
        let _ = writeln!(s, "positive_class={}", self.positive_class);
        let _ = writeln!(s, "accuracy={:.6}", self.accuracy);
        let _ = writeln!(s, "auroc={}", opt(self.auroc));
        let _ = writeln!(s, "sensitivity={}", opt(self.sensitivity));
        let _ = writeln!(s, "specificity={}", opt(self.specificity));
        let _ = writeln!(s, "tp={}", self.tp);
        let _ = writeln!(s, "fp={}", self.fp);
        let _ = writeln!(s, "tn={}", self.tn);
        let _ = writeln!(s, "fn={}", self.fn_);
        for (t, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "confusion.{t}={}", cells.join(","));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        assert_eq!(binary_auroc(&[0.9, 0.4], &[0.6, 0.1]), Some(0.75));
        assert_eq!(binary_auroc(&[0.5], &[0.5]), Some(0.5));
        assert_eq!(binary_auroc(&[], &[0.5]), None);
    }

    #[test]
    fn binary_counts() {
        let scores = [0.8, 0.2, 0.3, 0.7, 0.6, 0.4, 0.1, 0.9];
        let r = compute_metrics(&scores, 2, &[0, 1, 1, 1], 1).unwrap();
        assert_eq!((r.tp, r.fp, r.tn, r.fn_), (2, 0, 1, 1));
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.auroc, Some(1.0));
    }
}
