use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_dim, cross_entropy, softmax, validate_training_set, Classifier, ClassifyError, EarlyStopping, TrainReport,
    TrainingSample,
};
use crate::binio::{FormatError, Reader, Writer};
use crate::features::SparseVector;

const MAGIC: &[u8; 4] = b"LRM1";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            learning_rate: 0.5,
            batch_size: 64,
            max_epochs: 200,
            patience: 5,
            seed: 42,
        }
    }
}

/// Multinomial logistic regression with an L2 penalty on the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// K × V, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    classes: usize,
    dim: usize,
    lambda: f64,
}

impl LinearModel {
    pub fn zeros(classes: usize, dim: usize, lambda: f64) -> Self {
        Self {
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
            classes,
            dim,
            lambda,
        }
    }

    pub fn from_parts(weights: Vec<f64>, bias: Vec<f64>, dim: usize, lambda: f64) -> Self {
        let classes = bias.len();
        assert_eq!(weights.len(), classes * dim, "weight matrix shape");
        Self {
            weights,
            bias,
            classes,
            dim,
            lambda,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn logits_unchecked(&self, x: &SparseVector) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let row = &self.weights[k * self.dim..(k + 1) * self.dim];
                self.bias[k] + x.iter().map(|(j, v)| row[j] * v).sum::<f64>()
            })
            .collect()
    }

    /// Mean cross-entropy plus `(λ/2)·‖W‖²`.
    pub fn objective(&self, data: &[TrainingSample]) -> f64 {
        let ce: f64 = data
            .iter()
            .map(|s| cross_entropy(softmax(&self.logits_unchecked(&s.features))[s.label]))
            .sum::<f64>()
            / data.len() as f64;
        ce + 0.5 * self.lambda * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Gradient of [`Self::objective`] as (dW, db).
    pub fn gradient(&self, data: &[TrainingSample]) -> (Vec<f64>, Vec<f64>) {
        let mut gw: Vec<f64> = self.weights.iter().map(|w| self.lambda * w).collect();
        let mut gb = vec![0.0; self.classes];
        let refs: Vec<&TrainingSample> = data.iter().collect();
        self.accumulate_data_gradient(&refs, &mut gw, &mut gb);
        (gw, gb)
    }

    /// Adds the cross-entropy part of the gradient, scaled by 1/|data|.
    /// Returns the summed cross-entropy of the batch.
    fn accumulate_data_gradient(&self, data: &[&TrainingSample], gw: &mut [f64], gb: &mut [f64]) -> f64 {
        let scale = 1.0 / data.len() as f64;
        let mut loss = 0.0;
        for s in data {
            let mut p = softmax(&self.logits_unchecked(&s.features));
            loss += cross_entropy(p[s.label]);
            p[s.label] -= 1.0;
            for (k, r) in p.iter().enumerate() {
                let r = r * scale;
                gb[k] += r;
                let row = &mut gw[k * self.dim..(k + 1) * self.dim];
                for (j, v) in s.features.iter() {
                    row[j] += r * v;
                }
            }
        }
        loss
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u8(VERSION);
        w.u64(self.classes as u64);
        w.u64(self.dim as u64);
        w.f64(self.lambda);
        for v in self.weights.iter().chain(&self.bias) {
            w.f64(*v);
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, ClassifyError> {
        let mut r = Reader::new(buf);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let classes = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let lambda = r.f64()?;
        let need = classes
            .checked_mul(dim)
            .and_then(|n| n.checked_add(classes))
            .and_then(|n| n.checked_mul(8))
            .ok_or(FormatError::Corrupt {
                offset: 5,
                message: "dimensions overflow".into(),
            })?;
        let body = r.take(need)?;
        r.expect_end()?;
        let floats: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if floats.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::Corrupt {
                offset: 29,
                message: "non-finite parameter".into(),
            }
            .into());
        }
        let (weights, bias) = floats.split_at(classes * dim);
        Ok(Self::from_parts(weights.to_vec(), bias.to_vec(), dim, lambda))
    }
}

impl Classifier for LinearModel {
    fn n_classes(&self) -> usize {
        self.classes
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn logits(&self, x: &SparseVector) -> Result<Vec<f64>, ClassifyError> {
        check_dim(self.dim, x)?;
        Ok(self.logits_unchecked(x))
    }
}

pub fn train_logreg(
    train: &[TrainingSample],
    val: &[TrainingSample],
    classes: usize,
    config: &LogRegConfig,
) -> Result<LinearModel, ClassifyError> {
    train_logreg_with_report(train, val, classes, config).map(|(m, _)| m)
}

/// Seeded mini-batch gradient descent with early stopping on validation
/// loss (training loss when `val` is empty). Returns the best-epoch model.
pub fn train_logreg_with_report(
    train: &[TrainingSample],
    val: &[TrainingSample],
    classes: usize,
    config: &LogRegConfig,
) -> Result<(LinearModel, TrainReport), ClassifyError> {
    let dim = train.first().map(|s| s.features.dim).ok_or(ClassifyError::EmptyTrainingSet)?;
    validate_training_set(train, dim, classes)?;
    if !val.is_empty() {
        validate_training_set(val, dim, classes)?;
    }
    let mut model = LinearModel::zeros(classes, dim, config.lambda);
    let mut best = model.clone();
    let mut report = TrainReport::default();
    let mut stopper = EarlyStopping::new(config.patience.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch_size = config.batch_size.max(1);
    let lr = config.learning_rate;
    let decay = 1.0 - lr * config.lambda;

    let mut gw = vec![0.0; classes * dim];
    let mut gb = vec![0.0; classes];
    let mut batch: Vec<&TrainingSample> = Vec::with_capacity(batch_size);
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &train[i]));
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            epoch_loss += model.accumulate_data_gradient(&batch, &mut gw, &mut gb);
            // W ← W − lr·(∇CE + λW)
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w = decay * *w - lr * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= lr * g;
            }
        }
        let penalty = 0.5 * config.lambda * model.weights.iter().map(|w| w * w).sum::<f64>();
        let train_loss = epoch_loss / train.len() as f64 + penalty;
        if !train_loss.is_finite() || model.bias.iter().any(|b| !b.is_finite()) {
            return Err(ClassifyError::Diverged { epoch });
        }
        let monitored = if val.is_empty() { model.objective(train) } else { model.mean_loss(val)? };
        if !monitored.is_finite() {
            return Err(ClassifyError::Diverged { epoch });
        }
        report.train_loss.push(train_loss);
        report.val_loss.push(monitored);
        let (improved, stop) = stopper.observe(monitored);
        if improved {
            best = model.clone();
            report.best_epoch = epoch;
        }
        if stop {
            break;
        }
    }
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(dense: &[f64], label: usize) -> TrainingSample {
        TrainingSample::new(SparseVector::from_dense(dense), label)
    }

    fn separable() -> Vec<TrainingSample> {
        vec![
            sample(&[1.0, 0.1], 0),
            sample(&[0.9, 0.2], 0),
            sample(&[0.8, 0.0], 0),
            sample(&[0.1, 1.0], 1),
            sample(&[0.0, 0.9], 1),
            sample(&[0.2, 0.8], 1),
        ]
    }

    #[test]
    fn separable_reaches_full_accuracy() {
        let data = separable();
        let m = train_logreg(&data, &[], 2, &LogRegConfig::default()).unwrap();
        for s in &data {
            assert_eq!(m.predict(&s.features).unwrap().intent, s.label);
        }
    }

    #[test]
    fn huge_lambda_flattens_weights() {
        let data = separable();
        let cfg = LogRegConfig {
            lambda: 1e6,
            learning_rate: 1e-7,
            ..LogRegConfig::default()
        };
        let m = train_logreg(&data, &[], 2, &cfg).unwrap();
        assert!(m.weights().iter().all(|w| w.abs() < 1e-2));
        for s in &data {
            let p = m.predict(&s.features).unwrap();
            assert!((p.confidence - 0.5).abs() < 0.05, "{:?}", p.distribution);
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = LinearModel::zeros(4, 3, 0.0);
        let p = m.predict(&SparseVector::from_dense(&[0.3, 0.0, 1.0])).unwrap();
        assert!(p.distribution.iter().all(|q| (q - 0.25).abs() < 1e-15));
        assert_eq!(p.confidence, 0.25);
    }

    #[test]
    fn dimension_mismatch() {
        let m = LinearModel::zeros(2, 3, 0.0);
        assert!(matches!(
            m.predict(&SparseVector::zeros(4)),
            Err(ClassifyError::DimensionMismatch { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let data = separable();
        let cfg = LogRegConfig {
            lambda: 10.0,
            learning_rate: 1e3,
            patience: 200,
            ..LogRegConfig::default()
        };
        assert!(matches!(train_logreg(&data, &[], 2, &cfg), Err(ClassifyError::Diverged { .. })));
    }

    #[test]
    fn full_batch_loss_is_non_increasing() {
        let data: Vec<TrainingSample> = (0..10)
            .map(|i| {
                let t = i as f64 / 10.0;
                sample(&[t, 1.0 - t, (i % 3) as f64 * 0.5], usize::from(i >= 5))
            })
            .collect();
        let cfg = LogRegConfig {
            learning_rate: 0.01,
            batch_size: 10,
            max_epochs: 50,
            patience: 50,
            ..LogRegConfig::default()
        };
        let (_, report) = train_logreg_with_report(&data, &[], 2, &cfg).unwrap();
        for w in report.val_loss.windows(2) {
            assert!(w[1] <= w[0], "{:?}", report.val_loss);
        }
    }

    #[test]
    fn file_round_trip() {
        let m = train_logreg(&separable(), &[], 2, &LogRegConfig::default()).unwrap();
        let back = LinearModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        let mut bad = m.to_bytes();
        bad[4] = 9;
        assert!(matches!(
            LinearModel::from_bytes(&bad),
            Err(ClassifyError::Format(FormatError::UnsupportedVersion { found: 9, .. }))
        ));
    }
}
