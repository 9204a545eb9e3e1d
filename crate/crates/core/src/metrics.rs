//! Evaluation metrics and their serialized forms.

use crate::error::{err_fmt, Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-class accuracies, confusion matrix and loss curve of one run.
/// Confusion rows are actual classes, columns are predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub total_accuracy: f64,
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub confusion_matrix: Vec<Vec<u64>>,
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

impl MetricsReport {
    pub fn from_predictions(
        labels: &[usize],
        predictions: &[usize],
        num_classes: usize,
        class_names: &[String],
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("cannot score an empty set".into()));
        }
        if labels.len() != predictions.len() {
            return Err(err_fmt!(
                Internal,
                "{} labels vs {} predictions",
                labels.len(),
                predictions.len()
            ));
        }
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&t, &p) in labels.iter().zip(predictions) {
            if t >= num_classes || p >= num_classes {
                return Err(err_fmt!(Label, "label {t} or prediction {p} out of range"));
            }
            confusion[t][p] += 1;
        }
        let mut per_class = BTreeMap::new();
        for c in 0..num_classes {
            let row_total: u64 = confusion[c].iter().sum();
            if row_total > 0 {
                let name = class_names
                    .get(c)
                    .cloned()
                    .unwrap_or_else(|| format!("class{c}"));
                per_class.insert(name, confusion[c][c] as f64 / row_total as f64);
            }
        }
        let trace: u64 = (0..num_classes).map(|c| confusion[c][c]).sum();
        let total: u64 = labels.len() as u64;
        Ok(MetricsReport {
            task: None,
            model: None,
            total_accuracy: trace as f64 / total as f64,
            per_class_accuracy: per_class,
            confusion_matrix: confusion,
            loss_history: Vec::new(),
        })
    }

    pub fn class_accuracy(&self, name: &str) -> Option<f64> {
        self.per_class_accuracy.get(name).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| err_fmt!(Codec, "metrics to json: {e}"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })
    }

    /// Confusion matrix as CSV: header row of predicted classes, then one
    /// row per actual class.
    pub fn confusion_csv(&self, class_names: &[String]) -> String {
        let name = |c: usize| {
            class_names
                .get(c)
                .cloned()
                .unwrap_or_else(|| format!("class{c}"))
        };
        let n = self.confusion_matrix.len();
        let mut out = String::from("actual");
        for c in 0..n {
            out.push(',');
            out.push_str(&name(c));
        }
        out.push('\n');
        for (r, row) in self.confusion_matrix.iter().enumerate() {
            out.push_str(&name(r));
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}
