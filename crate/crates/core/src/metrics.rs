//! Confusion matrix and the report row used by every results table:
//! loss, accuracy, macro-averaged class recall and precision, best epoch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K x K` counts, rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::shape("confusion matrix", "rows must form a square matrix"));
        }
        Ok(ConfusionMatrix { k, counts: rows.concat() })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        assert!(truth < self.k && predicted < self.k, "class index out of range");
        self.counts[truth * self.k + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|j| self.get(c, j)).sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, c)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.k).map(|c| self.get(c, c)).sum::<u64>() as f64 / total as f64
    }

    /// Per-class recall; 0 for classes with no true samples.
    pub fn recall(&self) -> Vec<f64> {
        (0..self.k).map(|c| ratio(self.get(c, c), self.row_sum(c))).collect()
    }

    /// Per-class precision; 0 for classes never predicted.
    pub fn precision(&self) -> Vec<f64> {
        (0..self.k).map(|c| ratio(self.get(c, c), self.col_sum(c))).collect()
    }

    pub fn avg_class_recall(&self) -> f64 {
        mean(&self.recall())
    }

    pub fn avg_class_precision(&self) -> f64 {
        mean(&self.precision())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// One results-table row. Rates are fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean (class-weighted) cross-entropy; `None` where not applicable,
    /// such as a cross-validation aggregate.
    pub loss: Option<f64>,
    pub accuracy: f64,
    pub avg_class_recall: f64,
    pub avg_class_precision: f64,
    pub epochs_trained: u32,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix, loss: Option<f64>, epochs_trained: u32) -> Self {
        EvalReport {
            loss,
            accuracy: confusion.accuracy(),
            avg_class_recall: confusion.avg_class_recall(),
            avg_class_precision: confusion.avg_class_precision(),
            epochs_trained,
            confusion,
        }
    }

    /// Unweighted mean of each metric over `reports`; loss is reported as not
    /// applicable, epochs as the rounded mean, and confusions are summed.
    pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
        let first = reports.first().ok_or_else(|| Error::invalid("no reports to aggregate"))?;
        let k = first.confusion.classes();
        let mut confusion = ConfusionMatrix::new(k);
        for r in reports {
            if r.confusion.classes() != k {
                return Err(Error::invalid("reports disagree on class count"));
            }
            for (a, b) in confusion.counts.iter_mut().zip(&r.confusion.counts) {
                *a += b;
            }
        }
        let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
        Ok(EvalReport {
            loss: None,
            accuracy: avg(|r| r.accuracy),
            avg_class_recall: avg(|r| r.avg_class_recall),
            avg_class_precision: avg(|r| r.avg_class_precision),
            epochs_trained: avg(|r| r.epochs_trained as f64).round() as u32,
            confusion,
        })
    }
}
