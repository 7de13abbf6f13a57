use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion matrix and recall-style accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// `correct_c / total_c`; `None` for classes absent from the truth.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub overall_accuracy: f64,
    pub samples: usize,
}

/// Mean absolute errors in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub mae_position_mm: f64,
    pub mae_force_n: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MetricsReport {
    Classification(ClassificationReport),
    Regression(RegressionReport),
}

impl ClassificationReport {
    pub fn from_predictions(num_classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Dimension { expected: truth.len(), got: predicted.len() });
        }
        if truth.is_empty() {
            return Err(Error::DegenerateData("no samples to score".into()));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::InvalidArgument(format!("class index out of range: {t} / {p}")));
            }
            confusion[t][p] += 1;
        }
        let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let total: usize = row.iter().sum();
                (total > 0).then(|| row[c] as f64 / total as f64)
            })
            .collect();
        Ok(ClassificationReport {
            confusion,
            per_class_accuracy,
            overall_accuracy: correct as f64 / truth.len() as f64,
            samples: truth.len(),
        })
    }
}

impl RegressionReport {
    /// Pairs are `(position_mm, force_n)`.
    pub fn from_predictions(truth: &[(f64, f64)], predicted: &[(f64, f64)]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Dimension { expected: truth.len(), got: predicted.len() });
        }
        if truth.is_empty() {
            return Err(Error::DegenerateData("no samples to score".into()));
        }
        let n = truth.len() as f64;
        let mae =
            |f: fn(&(f64, f64)) -> f64| truth.iter().zip(predicted).map(|(t, p)| (f(t) - f(p)).abs()).sum::<f64>() / n;
        Ok(RegressionReport { mae_position_mm: mae(|v| v.0), mae_force_n: mae(|v| v.1), samples: truth.len() })
    }
}
