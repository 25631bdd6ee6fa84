use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Classification metrics over one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Top-1 accuracy in `[0, 1]`.
    pub accuracy: f64,
    /// Per-class accuracy; `None` for a class with no samples in the split.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn from_predictions(predicted: &[usize], labels: &[usize], class_count: usize) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(Error::shape("metrics", "prediction and label counts differ"));
        }
        if predicted.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut confusion = vec![vec![0usize; class_count]; class_count];
        for (&p, &l) in predicted.iter().zip(labels) {
            let max = class_count.saturating_sub(1);
            if l >= class_count {
                return Err(Error::IndexOutOfRange {
                    what: "label",
                    index: l,
                    max,
                });
            }
            if p >= class_count {
                return Err(Error::IndexOutOfRange {
                    what: "prediction",
                    index: p,
                    max,
                });
            }
            confusion[l][p] += 1;
        }
        let correct: usize = (0..class_count).map(|c| confusion[c][c]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(Metrics {
            accuracy: correct as f64 / labels.len() as f64,
            per_class,
            confusion,
        })
    }

    pub fn class_count(&self) -> usize {
        self.confusion.len()
    }

    pub fn sample_count(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Human-readable table: overall accuracy, per-class accuracy and the
    /// confusion matrix.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "top-1 accuracy: {:.2}% ({} samples)",
            100.0 * self.accuracy,
            self.sample_count()
        );
        let _ = writeln!(
            s,
            "{:>6} {:>9}  confusion (rows: true, cols: predicted)",
            "class", "accuracy"
        );
        for (c, row) in self.confusion.iter().enumerate() {
            let acc = match self.per_class[c] {
                Some(a) => format!("{:.2}%", 100.0 * a),
                None => "-".to_string(),
            };
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>4}")).collect();
            let _ = writeln!(s, "{c:>6} {acc:>9}  {}", cells.join(""));
        }
        s
    }

    /// CSV rows `class,samples,correct,accuracy` plus an `all` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,samples,correct,accuracy\n");
        for (c, row) in self.confusion.iter().enumerate() {
            let n: usize = row.iter().sum();
            let acc = self.per_class[c].map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{c},{n},{},{acc}", row[c]);
        }
        let n = self.sample_count();
        let correct: usize = (0..self.class_count()).map(|c| self.confusion[c][c]).sum();
        let _ = writeln!(s, "all,{n},{correct},{}", self.accuracy);
        s
    }
}
