use serde::Serialize;

use super::{Classifier, ClassifyError, TrainingSample};
use crate::corpus::LabelCodec;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub intent: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    /// Metrics from a square confusion matrix. `names` labels the rows; a
    /// missing name falls back to the class id.
    pub fn from_confusion(confusion: Vec<Vec<usize>>, names: &[String]) -> Self {
        let k = confusion.len();
        assert!(confusion.iter().all(|r| r.len() == k), "confusion matrix must be square");
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };

        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = confusion.iter().map(|r| r[c]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics {
                    intent: names.get(c).cloned().unwrap_or_else(|| c.to_string()),
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();

        let macro_f1 = if k == 0 { 0.0 } else { per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64 };
        let weighted_f1 = if total == 0 {
            0.0
        } else {
            per_class.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / total as f64
        };
        Self {
            accuracy: ratio(correct, total),
            weighted_f1,
            macro_f1,
            per_class,
            confusion,
        }
    }

    /// Plain-text report with one row per class.
    pub fn report(&self) -> String {
        let mut out = format!(
            "accuracy    {:.4}\nweighted_f1 {:.4}\nmacro_f1    {:.4}\n\n{:<24} {:>9} {:>9} {:>9} {:>8}\n",
            self.accuracy, self.weighted_f1, self.macro_f1, "intent", "precision", "recall", "f1", "support"
        );
        for m in &self.per_class {
            out.push_str(&format!(
                "{:<24} {:>9.4} {:>9.4} {:>9.4} {:>8}\n",
                m.intent, m.precision, m.recall, m.f1, m.support
            ));
        }
        out
    }
}

pub fn evaluate<M: Classifier + ?Sized>(
    model: &M,
    test: &[TrainingSample],
    codec: &LabelCodec,
) -> Result<Metrics, ClassifyError> {
    let k = model.n_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    for s in test {
        if s.label >= k {
            return Err(ClassifyError::LabelOutOfRange { label: s.label, classes: k });
        }
        let p = model.predict(&s.features)?;
        confusion[s.label][p.intent] += 1;
    }
    Ok(Metrics::from_confusion(confusion, codec.names()))
}
