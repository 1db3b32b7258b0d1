//! Confusion matrices, overall accuracy and intersection-over-union scores.

mod crossval;

pub use crossval::{cross_validate, initial_report, CvMode, CvResult, FoldReport};

use std::fmt::Write as _;

use serde::Serialize;

use crate::cloud::ClassId;
use crate::error::{Error, Result};

/// Counts with rows = ground truth and columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub names: Vec<String>,
    counts: Vec<u64>,
    /// Labeled points that received no prediction, per true class.
    missed: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(names: Vec<String>) -> Self {
        let k = names.len();
        ConfusionMatrix {
            names,
            counts: vec![0; k * k],
            missed: vec![0; k],
        }
    }

    pub fn from_counts(names: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        let k = names.len();
        if counts.len() != k * k {
            return Err(Error::LengthMismatch {
                what: "confusion counts",
                expected: k * k,
                found: counts.len(),
            });
        }
        Ok(ConfusionMatrix {
            names,
            counts,
            missed: vec![0; k],
        })
    }

    /// Accumulates pairs; points whose truth is unlabeled are skipped.
    pub fn from_labels(truth: &[ClassId], pred: &[ClassId], names: Vec<String>) -> Result<Self> {
        let mut m = ConfusionMatrix::new(names);
        m.accumulate(truth, pred)?;
        Ok(m)
    }

    pub fn accumulate(&mut self, truth: &[ClassId], pred: &[ClassId]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::LengthMismatch {
                what: "predictions",
                expected: truth.len(),
                found: pred.len(),
            });
        }
        let k = self.k();
        for (&t, &p) in truth.iter().zip(pred) {
            if !t.is_labeled() {
                continue;
            }
            if t.index() >= k {
                return Err(Error::LabelOutOfDomain(t));
            }
            if !p.is_labeled() {
                self.missed[t.index()] += 1;
            } else if p.index() >= k {
                return Err(Error::LabelOutOfDomain(p));
            } else {
                self.counts[t.index() * k + p.index()] += 1;
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k() + pred]
    }

    /// Number of labeled points accounted for.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.missed.iter().sum::<u64>()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.names != self.names {
            return Err(Error::InvalidArgument(
                "confusion matrices over different classes".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.missed.iter_mut().zip(&other.missed) {
            *a += b;
        }
        Ok(())
    }

    pub fn report(&self) -> EvalReport {
        let k = self.k();
        let total = self.total();
        let trace: u64 = (0..k).map(|c| self.get(c, c)).sum();
        let mut iou = Vec::with_capacity(k);
        let mut truth_counts = Vec::with_capacity(k);
        let mut pred_counts = Vec::with_capacity(k);
        for c in 0..k {
            let tp = self.get(c, c);
            let row: u64 = (0..k).map(|p| self.get(c, p)).sum::<u64>() + self.missed[c];
            let col: u64 = (0..k).map(|t| self.get(t, c)).sum();
            let (fn_, fp) = (row - tp, col - tp);
            let denom = tp + fp + fn_;
            iou.push((denom > 0).then(|| 100.0 * tp as f64 / denom as f64));
            truth_counts.push(row);
            pred_counts.push(col);
        }
        let present: Vec<f64> = iou.iter().flatten().copied().collect();
        let miou = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        EvalReport {
            class_names: self.names.clone(),
            oa: if total > 0 {
                100.0 * trace as f64 / total as f64
            } else {
                0.0
            },
            miou,
            iou,
            truth_counts,
            pred_counts,
            total,
        }
    }
}

/// Scores in percent. IoU is `None` for classes absent from both truth and
/// prediction; those are left out of the mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub oa: f64,
    pub miou: f64,
    pub iou: Vec<Option<f64>>,
    pub truth_counts: Vec<u64>,
    pub pred_counts: Vec<u64>,
    pub total: u64,
}

pub fn evaluate(truth: &[ClassId], pred: &[ClassId], names: &[String]) -> Result<EvalReport> {
    Ok(ConfusionMatrix::from_labels(truth, pred, names.to_vec())?.report())
}

impl EvalReport {
    pub fn iou_of(&self, name: &str) -> Option<f64> {
        let i = self.class_names.iter().position(|n| n == name)?;
        self.iou[i]
    }

    /// Mean IoU restricted to the named classes (ignoring n/a entries).
    pub fn mean_iou_over(&self, names: &[&str]) -> Option<f64> {
        let vals: Vec<f64> = names.iter().filter_map(|n| self.iou_of(n)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

/// Aligned text table, one row per report: `name | OA | mIoU | per-class IoU`.
pub fn render_table(rows: &[(&str, &EvalReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let mut header = vec![String::new(), "OA".to_string(), "mIoU".to_string()];
    header.extend(first.class_names.iter().cloned());
    let mut table = vec![header];
    for (name, r) in rows {
        let mut line = vec![name.to_string(), pct(Some(r.oa)), pct(Some(r.miou))];
        line.extend(r.iou.iter().map(|&v| pct(v)));
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| {
            table
                .iter()
                .map(|r| r.get(c).map_or(0, String::len))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in &table {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            let sep = match c {
                0 => "",
                1..=3 => " | ",
                _ => " ",
            };
            if c == 0 {
                let _ = write!(line, "{cell:<w$}", w = widths[c]);
            } else {
                let _ = write!(line, "{sep}{cell:>w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn hand_computed_two_class() {
        let m = ConfusionMatrix::from_counts(names(2), vec![50, 10, 5, 35]).unwrap();
        let r = m.report();
        assert!((r.oa - 85.0).abs() < 1e-9);
        // 100*50/65 and 100*35/50
        assert!((r.iou[0].unwrap() - 76.923_076_923).abs() < 1e-6);
        assert!((r.iou[1].unwrap() - 70.0).abs() < 1e-9);
        assert_eq!(format!("{:.2}", r.miou), "73.46");
    }

    #[test]
    fn absent_class_is_na() {
        let truth = [ClassId(0), ClassId(1), ClassId::UNLABELED];
        let pred = [ClassId(0), ClassId(1), ClassId(2)];
        let r = evaluate(&truth, &pred, &names(3)).unwrap();
        assert_eq!(r.total, 2);
        assert_eq!(r.iou[2], None);
        assert_eq!(r.miou, 100.0);
        let table = render_table(&[("run", &r)]);
        assert!(table.contains("n/a"));
        let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["|", "OA", "|", "mIoU", "|", "c0", "c1", "c2"]);
    }

    #[test]
    fn missed_prediction_counts_against_truth() {
        let r = evaluate(
            &[ClassId(0), ClassId(0)],
            &[ClassId(0), ClassId::UNLABELED],
            &names(1),
        )
        .unwrap();
        assert_eq!(r.oa, 50.0);
        assert_eq!(r.iou[0], Some(50.0));
    }

    #[test]
    fn length_and_domain_errors() {
        assert!(evaluate(&[ClassId(0)], &[], &names(1)).is_err());
        assert!(evaluate(&[ClassId(3)], &[ClassId(0)], &names(2)).is_err());
    }

    #[test]
    fn table_shape() {
        let m = ConfusionMatrix::from_counts(names(2), vec![50, 10, 5, 35]).unwrap();
        let r = m.report();
        let t = render_table(&[("Ours", &r)]);
        let row = t.lines().nth(1).unwrap();
        let cells: Vec<&str> = row.split_whitespace().filter(|c| *c != "|").collect();
        assert_eq!(cells, vec!["Ours", "85.00", "73.46", "76.92", "70.00"]);
    }

    proptest! {
        #[test]
        fn perfect_and_permutation_invariant(
            labels in prop::collection::vec(0u16..5, 1..300),
            preds in prop::collection::vec(0u16..5, 300),
        ) {
            let truth: Vec<ClassId> = labels.iter().copied().map(ClassId).collect();
            let pred: Vec<ClassId> = preds[..truth.len()].iter().copied().map(ClassId).collect();
            let r = evaluate(&truth, &truth, &names(5)).unwrap();
            prop_assert_eq!(r.oa, 100.0);
            prop_assert!(r.iou.iter().flatten().all(|&v| v == 100.0));
            prop_assert_eq!(r.miou, 100.0);

            let a = evaluate(&truth, &pred, &names(5)).unwrap();
            let rt: Vec<ClassId> = truth.iter().rev().copied().collect();
            let rp: Vec<ClassId> = pred.iter().rev().copied().collect();
            prop_assert_eq!(&a, &evaluate(&rt, &rp, &names(5)).unwrap());
            prop_assert_eq!(a.total as usize, truth.len());
            let present: Vec<f64> = a.iou.iter().flatten().copied().collect();
            let mean = present.iter().sum::<f64>() / present.len() as f64;
            prop_assert!((a.miou - mean).abs() < 1e-12);
            prop_assert!((0.0..=100.0).contains(&a.oa));
        }
    }
}
