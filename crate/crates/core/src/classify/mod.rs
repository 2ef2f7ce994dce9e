//! Intent classifiers trained from scratch over TF-IDF rows.

mod logreg;
mod metrics;
mod mlp;

pub use logreg::{train_logreg, train_logreg_with_report, LinearModel, LogRegConfig};
pub use metrics::{evaluate, ClassMetrics, Metrics};
pub use mlp::{train_mlp, train_mlp_with_report, MlpConfig, MlpModel};

use serde::Serialize;

use crate::binio::FormatError;
use crate::features::SparseVector;

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("input has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch} (loss is not finite); try a smaller learning rate")]
    Diverged { epoch: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("model file: {0}")]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A feature row with its class id.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub features: SparseVector,
    pub label: usize,
}

impl TrainingSample {
    pub fn new(features: SparseVector, label: usize) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub intent: usize,
    pub confidence: f64,
    pub distribution: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(logits: &[f64]) -> Self {
        let distribution = softmax(logits);
        let (intent, confidence) = distribution
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, p)| if p > best.1 { (i, p) } else { best });
        Self {
            intent,
            confidence,
            distribution,
        }
    }
}

/// Softmax with max-logit subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy of a batch of probability rows against labels.
pub(crate) fn cross_entropy(prob_of_label: f64) -> f64 {
    -prob_of_label.max(f64::MIN_POSITIVE).ln()
}

pub trait Classifier {
    fn n_classes(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn logits(&self, x: &SparseVector) -> Result<Vec<f64>, ClassifyError>;

    fn predict(&self, x: &SparseVector) -> Result<Prediction, ClassifyError> {
        Ok(Prediction::from_logits(&self.logits(x)?))
    }

    /// Mean cross-entropy without regularization.
    fn mean_loss(&self, data: &[TrainingSample]) -> Result<f64, ClassifyError> {
        let mut total = 0.0;
        for s in data {
            let p = softmax(&self.logits(&s.features)?);
            total += cross_entropy(p[s.label]);
        }
        Ok(total / data.len().max(1) as f64)
    }
}

pub(crate) fn check_dim(expected: usize, x: &SparseVector) -> Result<(), ClassifyError> {
    if x.dim != expected {
        return Err(ClassifyError::DimensionMismatch { expected, got: x.dim });
    }
    Ok(())
}

pub(crate) fn validate_training_set(data: &[TrainingSample], dim: usize, classes: usize) -> Result<(), ClassifyError> {
    if data.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    for s in data {
        check_dim(dim, &s.features)?;
        if s.label >= classes {
            return Err(ClassifyError::LabelOutOfRange {
                label: s.label,
                classes,
            });
        }
    }
    Ok(())
}

/// Per-epoch losses recorded during training.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

/// Patience-based early stopping on validation loss.
#[derive(Debug)]
pub(crate) struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub(crate) fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Returns (improved, should_stop).
    pub(crate) fn observe(&mut self, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntentModel {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl Classifier for IntentModel {
    fn n_classes(&self) -> usize {
        match self {
            IntentModel::Linear(m) => m.n_classes(),
            IntentModel::Mlp(m) => m.n_classes(),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            IntentModel::Linear(m) => m.input_dim(),
            IntentModel::Mlp(m) => m.input_dim(),
        }
    }

    fn logits(&self, x: &SparseVector) -> Result<Vec<f64>, ClassifyError> {
        match self {
            IntentModel::Linear(m) => m.logits(x),
            IntentModel::Mlp(m) => m.logits(x),
        }
    }
}

impl IntentModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            IntentModel::Linear(m) => m.to_bytes(),
            IntentModel::Mlp(m) => m.to_bytes(),
        }
    }

    /// Dispatch on the file magic.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, ClassifyError> {
        if buf.starts_with(b"MLP1") {
            Ok(IntentModel::Mlp(MlpModel::from_bytes(buf)?))
        } else {
            Ok(IntentModel::Linear(LinearModel::from_bytes(buf)?))
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), ClassifyError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| ClassifyError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ClassifyError> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|source| ClassifyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&buf)
    }
}
