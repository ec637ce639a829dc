//! Binary confusion matrices and the metrics derived from them.
//!
//! Metrics are fractions in `[0, 1]`; a zero denominator yields `None`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, tn: u64, fp: u64) -> Self {
        Self { tp, fn_, tn, fp }
    }

    /// Counts each `(prediction, label)` pair against `positive`.
    pub fn from_pairs(
        predictions: &[usize],
        labels: &[usize],
        positive: usize,
    ) -> Result<Self, MetricsError> {
        if predictions.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                predictions: predictions.len(),
                labels: labels.len(),
            });
        }
        let mut cm = Self::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p == positive, l == positive) {
                (true, true) => cm.tp += 1,
                (false, true) => cm.fn_ += 1,
                (false, false) => cm.tn += 1,
                (true, false) => cm.fp += 1,
            }
        }
        Ok(cm)
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn total(&self) -> u64 {
        self.positives() + self.negatives()
    }

    pub fn correct(&self) -> u64 {
        self.tp + self.tn
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.correct(), cm.total())
}

pub fn precision(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.tp, cm.tp + cm.fp)
}

pub fn recall(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.tp, cm.tp + cm.fn_)
}

/// Harmonic mean of precision and recall; undefined if either is, or if
/// both are zero.
pub fn f1(cm: &ConfusionMatrix) -> Option<f64> {
    let (p, r) = (precision(cm)?, recall(cm)?);
    (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub counts: ConfusionMatrix,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl MetricRow {
    pub fn new(model: impl Into<String>, counts: ConfusionMatrix) -> Self {
        Self {
            model: model.into(),
            counts,
            accuracy: accuracy(&counts),
            precision: precision(&counts),
            recall: recall(&counts),
            f1: f1(&counts),
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".to_string(), |x| format!("{:.2}", x * 100.0))
}

/// Fixed-width text table; metrics are printed as percentages.
pub fn render_table(rows: &[MetricRow]) -> String {
    let name_w = rows
        .iter()
        .map(|r| r.model.len())
        .max()
        .unwrap_or(0)
        .max("model".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$} {:>6} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8}",
        "model", "TP", "FN", "TN", "FP", "Acc", "P", "R", "F1"
    );
    for r in rows {
        let c = &r.counts;
        let _ = writeln!(
            out,
            "{:<name_w$} {:>6} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8}",
            r.model,
            c.tp,
            c.fn_,
            c.tn,
            c.fp,
            pct(r.accuracy),
            pct(r.precision),
            pct(r.recall),
            pct(r.f1)
        );
    }
    out
}

pub fn rows_to_json(rows: &[MetricRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}

#[derive(Debug, Deserialize)]
struct PairRecord {
    pred: usize,
    label: usize,
}

/// Reads a `pred,label` CSV into parallel vectors.
pub fn read_pairs_csv(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<usize>), MetricsError> {
    let path = path.as_ref();
    let err = |e: csv::Error| MetricsError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut reader = csv::Reader::from_path(path).map_err(err)?;
    let headers = reader.headers().map_err(err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["pred", "label"] {
        return Err(MetricsError::Csv {
            path: path.display().to_string(),
            message: format!(
                "expected header pred,label, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let (mut preds, mut labels) = (Vec::new(), Vec::new());
    for rec in reader.deserialize::<PairRecord>() {
        let rec = rec.map_err(err)?;
        preds.push(rec.pred);
        labels.push(rec.label);
    }
    Ok((preds, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Option<f64>, b: f64) -> bool {
        a.is_some_and(|a| (a - b).abs() < 5e-5)
    }

    #[test]
    fn reference_rows() {
        let alex = ConfusionMatrix::new(272, 32, 255, 49);
        assert!(close(accuracy(&alex), 0.8668));
        assert!(close(precision(&alex), 0.8474));
        assert!(close(recall(&alex), 0.8947));
        assert!(close(f1(&alex), 0.8704));
        let sw = ConfusionMatrix::new(304, 0, 247, 57);
        assert!(close(precision(&sw), 0.8421));
        assert_eq!(recall(&sw), Some(1.0));
        assert!(close(f1(&sw), 0.9143));
    }

    #[test]
    fn fast_rcnn_cell_is_computed_from_counts() {
        // 232 true positives over 288 positive predictions
        let cm = ConfusionMatrix::new(232, 72, 248, 56);
        assert_eq!(pct(precision(&cm)), "80.56");
    }

    #[test]
    fn undefined_cases() {
        let none_predicted = ConfusionMatrix::new(0, 5, 5, 0);
        assert_eq!(precision(&none_predicted), None);
        assert_eq!(f1(&none_predicted), None);
        assert_eq!(recall(&ConfusionMatrix::new(0, 0, 3, 2)), None);
        assert_eq!(accuracy(&ConfusionMatrix::default()), None);
        // precision and recall both zero
        assert_eq!(f1(&ConfusionMatrix::new(0, 3, 1, 2)), None);
    }

    #[test]
    fn simple_pairs() {
        let cm = ConfusionMatrix::from_pairs(&[1, 1, 1], &[1, 1, 1], 1).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(3, 0, 0, 0));
        let cm = ConfusionMatrix::from_pairs(&[0, 0], &[1, 1], 1).unwrap();
        assert_eq!(cm.fn_, 2);
        assert!(ConfusionMatrix::from_pairs(&[0], &[], 1).is_err());
    }

    #[test]
    fn table_rendering() {
        let empty = render_table(&[]);
        assert_eq!(empty.lines().count(), 1);
        let rows = [MetricRow::new(
            "alexnet",
            ConfusionMatrix::new(272, 32, 255, 49),
        )];
        let t = render_table(&rows);
        let line = t.lines().nth(1).unwrap();
        for v in ["86.68", "84.74", "89.47", "87.04"] {
            assert!(line.contains(v), "{line}");
        }
        assert_eq!(t, render_table(&rows));
    }

    #[test]
    fn json_round_trip() {
        let rows = vec![
            MetricRow::new("a", ConfusionMatrix::new(1, 2, 3, 4)),
            MetricRow::new("b", ConfusionMatrix::new(0, 1, 1, 0)),
        ];
        let json = rows_to_json(&rows);
        assert!(json.contains("\"fn\": 2"));
        let back: Vec<MetricRow> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn csv_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.csv");
        std::fs::write(&p, "pred,label\n1,1\n0,1\n1,0\n").unwrap();
        let (pred, label) = read_pairs_csv(&p).unwrap();
        assert_eq!(
            ConfusionMatrix::from_pairs(&pred, &label, 1).unwrap(),
            ConfusionMatrix::new(1, 1, 0, 1)
        );
        std::fs::write(&p, "a,b\n1,1\n").unwrap();
        assert!(read_pairs_csv(&p).is_err());
    }

    proptest! {
        #[test]
        fn matches_per_pair_tally(pairs in prop::collection::vec((0usize..3, 0usize..3), 50)) {
            let (pred, label): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let cm = ConfusionMatrix::from_pairs(&pred, &label, 1).unwrap();
            let tally = |p: bool, l: bool| pairs.iter().filter(|(a, b)| (*a == 1) == p && (*b == 1) == l).count() as u64;
            prop_assert_eq!(cm, ConfusionMatrix::new(tally(true, true), tally(false, true), tally(false, false), tally(true, false)));
            let correct = pairs.iter().filter(|(a, b)| (*a == 1) == (*b == 1)).count();
            prop_assert_eq!(accuracy(&cm), Some(correct as f64 / 50.0));
        }

        #[test]
        fn metric_bounds(tp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500, fp in 0u64..500) {
            let cm = ConfusionMatrix::new(tp, fn_, tn, fp);
            for m in [accuracy(&cm), precision(&cm), recall(&cm), f1(&cm)].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&m));
            }
            if let (Some(p), Some(r), Some(f)) = (precision(&cm), recall(&cm), f1(&cm)) {
                prop_assert!(f <= p.max(r) + 1e-12 && f >= p.min(r) - 1e-12);
            }
        }
    }
}
