//! Classification metrics from a confusion matrix.

use std::io::Write;

use crate::error::{Error, Result};

/// `counts[truth][pred]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        for label in [truth, pred] {
            if label >= self.classes {
                return Err(Error::Label {
                    label,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn metrics(&self) -> Result<Metrics> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Empty("metrics need at least one prediction"));
        }
        let c = self.classes;
        let correct: u64 = (0..c).map(|k| self.counts[k][k]).sum();
        let mut per_class = Vec::with_capacity(c);
        for k in 0..c {
            let tp = self.counts[k][k] as f64;
            let predicted: u64 = (0..c).map(|t| self.counts[t][k]).sum();
            let actual: u64 = self.counts[k].iter().sum();
            let ratio = |num: f64, den: u64| if den == 0 { 0.0 } else { num / den as f64 };
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            // 2PR / (P + R) written in counts; zero when the class is absent
            // from both truth and predictions
            let f1 = ratio(2.0 * tp, predicted + actual);
            per_class.push(ClassScores { precision, recall, f1 });
        }
        let macro_f1 = per_class.iter().map(|s| s.f1).sum::<f64>() / c as f64;
        Ok(Metrics {
            accuracy: correct as f64 / total as f64,
            macro_f1,
            per_class,
            confusion: self.clone(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Unweighted mean of per-class F1; a class never predicted and never
    /// present scores 0.
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub confusion: Confusion,
}

/// Metrics for paired predictions and labels over `classes` classes.
pub fn compute_metrics(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape {
            op: "metrics",
            detail: format!("{} predictions for {} labels", predictions.len(), labels.len()),
        });
    }
    let mut cm = Confusion::new(classes);
    for (&p, &t) in predictions.iter().zip(labels) {
        cm.add(t, p)?;
    }
    cm.metrics()
}

impl Metrics {
    pub fn csv_header(classes: usize) -> String {
        let mut h = String::from("accuracy,macro_f1");
        for k in 0..classes {
            h.push_str(&format!(",precision_{k},recall_{k},f1_{k}"));
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!("{:.6},{:.6}", self.accuracy, self.macro_f1);
        for s in &self.per_class {
            r.push_str(&format!(",{:.6},{:.6},{:.6}", s.precision, s.recall, s.f1));
        }
        r
    }

    /// Human-readable summary with the confusion matrix.
    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "accuracy  {:.4}", self.accuracy)?;
        writeln!(w, "macro-F1  {:.4}", self.macro_f1)?;
        writeln!(w, "{:>5} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1")?;
        for (k, s) in self.per_class.iter().enumerate() {
            writeln!(w, "{k:>5} {:>9.4} {:>9.4} {:>9.4}", s.precision, s.recall, s.f1)?;
        }
        writeln!(w, "confusion (rows = truth):")?;
        for row in &self.confusion.counts {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
            writeln!(w, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

/// Index of the largest entry in each row of a `(B, C)` buffer; ties go to
/// the lowest index.
pub fn argmax_rows(logits: &[f32], classes: usize) -> Vec<usize> {
    logits
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
