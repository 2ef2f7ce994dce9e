use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    check_dim, cross_entropy, softmax, validate_training_set, Classifier, ClassifyError, EarlyStopping, TrainReport,
    TrainingSample,
};
use crate::binio::{FormatError, Reader, Writer};
use crate::features::SparseVector;

const MAGIC: &[u8; 4] = b"MLP1";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden: (usize, usize),
    pub dropout: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: (256, 128),
            dropout: 0.3,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            max_epochs: 200,
            patience: 5,
            seed: 42,
        }
    }
}

/// Two hidden ReLU layers over a sparse input.
///
/// The first layer is stored input-major (`dim × h1`) so a sparse row only
/// touches the weight rows of its active features; the other layers are
/// output-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dim: usize,
    h1: usize,
    h2: usize,
    classes: usize,
    dropout: f64,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
}

/// Intermediate activations of one forward pass.
struct Forward {
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    logits: Vec<f64>,
}

/// Per-unit multipliers for inverted dropout: 0 or 1/(1−p).
struct DropMasks {
    m1: Vec<f64>,
    m2: Vec<f64>,
}

#[derive(Clone)]
struct Grads {
    w1_rows: Vec<(usize, Vec<f64>)>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
}

impl MlpModel {
    /// He-initialised weights (std √(2/fan_in)), zero biases.
    pub fn new(dim: usize, hidden: (usize, usize), classes: usize, dropout: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |n: usize, fan_in: usize| -> Vec<f64> {
            let scale = (2.0 / fan_in as f64).sqrt();
            (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let (h1, h2) = hidden;
        Self {
            dim,
            h1,
            h2,
            classes,
            dropout,
            w1: init(dim * h1, dim),
            b1: vec![0.0; h1],
            w2: init(h2 * h1, h1),
            b2: vec![0.0; h2],
            w3: init(classes * h2, h2),
            b3: vec![0.0; classes],
        }
    }

    pub fn hidden_sizes(&self) -> (usize, usize) {
        (self.h1, self.h2)
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + self.b3.len()
    }

    fn blocks(&self) -> [&Vec<f64>; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.w3, &mut self.b3]
    }

    /// Parameters flattened as W1, b1, W2, b2, W3, b3.
    pub fn params(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn set_param(&mut self, mut index: usize, value: f64) {
        for block in self.blocks_mut() {
            if index < block.len() {
                block[index] = value;
                return;
            }
            index -= block.len();
        }
        panic!("parameter index out of range");
    }

    fn forward(&self, x: &SparseVector, masks: Option<&DropMasks>) -> Forward {
        let mut a1 = self.b1.clone();
        for (j, v) in x.iter() {
            let row = &self.w1[j * self.h1..(j + 1) * self.h1];
            for (a, w) in a1.iter_mut().zip(row) {
                *a += v * w;
            }
        }
        let mut h1: Vec<f64> = a1.iter().map(|a| a.max(0.0)).collect();
        if let Some(m) = masks {
            h1.iter_mut().zip(&m.m1).for_each(|(h, k)| *h *= k);
        }
        let a2: Vec<f64> = (0..self.h2)
            .map(|o| self.b2[o] + dot(&self.w2[o * self.h1..(o + 1) * self.h1], &h1))
            .collect();
        let mut h2: Vec<f64> = a2.iter().map(|a| a.max(0.0)).collect();
        if let Some(m) = masks {
            h2.iter_mut().zip(&m.m2).for_each(|(h, k)| *h *= k);
        }
        let logits = (0..self.classes)
            .map(|o| self.b3[o] + dot(&self.w3[o * self.h2..(o + 1) * self.h2], &h2))
            .collect();
        Forward { a1, h1, a2, h2, logits }
    }

    fn zero_grads(&self) -> Grads {
        Grads {
            w1_rows: Vec::new(),
            b1: vec![0.0; self.h1],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.h2],
            w3: vec![0.0; self.w3.len()],
            b3: vec![0.0; self.classes],
        }
    }

    /// Backpropagate one sample, scaled by `scale`, into `g`. Returns its
    /// cross-entropy.
    fn backward(&self, s: &TrainingSample, masks: Option<&DropMasks>, scale: f64, g: &mut Grads) -> f64 {
        let f = self.forward(&s.features, masks);
        let mut dz = softmax(&f.logits);
        let loss = cross_entropy(dz[s.label]);
        dz[s.label] -= 1.0;
        dz.iter_mut().for_each(|d| *d *= scale);

        let mut dh2 = vec![0.0; self.h2];
        for (o, d) in dz.iter().enumerate() {
            g.b3[o] += d;
            let row = &self.w3[o * self.h2..(o + 1) * self.h2];
            let grow = &mut g.w3[o * self.h2..(o + 1) * self.h2];
            for i in 0..self.h2 {
                grow[i] += d * f.h2[i];
                dh2[i] += d * row[i];
            }
        }
        let da2: Vec<f64> = (0..self.h2)
            .map(|i| {
                let keep = masks.map_or(1.0, |m| m.m2[i]);
                if f.a2[i] > 0.0 {
                    dh2[i] * keep
                } else {
                    0.0
                }
            })
            .collect();

        let mut dh1 = vec![0.0; self.h1];
        for (o, d) in da2.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            g.b2[o] += d;
            let row = &self.w2[o * self.h1..(o + 1) * self.h1];
            let grow = &mut g.w2[o * self.h1..(o + 1) * self.h1];
            for i in 0..self.h1 {
                grow[i] += d * f.h1[i];
                dh1[i] += d * row[i];
            }
        }
        let da1: Vec<f64> = (0..self.h1)
            .map(|i| {
                let keep = masks.map_or(1.0, |m| m.m1[i]);
                if f.a1[i] > 0.0 {
                    dh1[i] * keep
                } else {
                    0.0
                }
            })
            .collect();
        for (b, d) in g.b1.iter_mut().zip(&da1) {
            *b += d;
        }
        for (j, v) in s.features.iter() {
            g.w1_rows.push((j, da1.iter().map(|d| d * v).collect()));
        }
        loss
    }

    /// Mean cross-entropy with dropout disabled.
    pub fn objective(&self, data: &[TrainingSample]) -> f64 {
        data.iter()
            .map(|s| cross_entropy(softmax(&self.forward(&s.features, None).logits)[s.label]))
            .sum::<f64>()
            / data.len() as f64
    }

    /// Gradient of [`Self::objective`], flattened like [`Self::params`].
    pub fn gradient(&self, data: &[TrainingSample]) -> Vec<f64> {
        let mut g = self.zero_grads();
        let scale = 1.0 / data.len() as f64;
        for s in data {
            self.backward(s, None, scale, &mut g);
        }
        let mut w1 = vec![0.0; self.w1.len()];
        for (j, row) in &g.w1_rows {
            for (k, v) in row.iter().enumerate() {
                w1[j * self.h1 + k] += v;
            }
        }
        [w1, g.b1, g.w2, g.b2, g.w3, g.b3].concat()
    }

    fn sample_masks(&self, rng: &mut ChaCha8Rng) -> DropMasks {
        let keep = 1.0 / (1.0 - self.dropout);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if rng.random::<f64>() < self.dropout { 0.0 } else { keep })
                .collect()
        };
        DropMasks {
            m1: draw(self.h1),
            m2: draw(self.h2),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u8(VERSION);
        for n in [self.dim, self.h1, self.h2, self.classes] {
            w.u64(n as u64);
        }
        w.f64(self.dropout);
        // Every layer is written output-major (out × in).
        for o in 0..self.h1 {
            for j in 0..self.dim {
                w.f64(self.w1[j * self.h1 + o]);
            }
        }
        for block in [&self.b1, &self.w2, &self.b2, &self.w3, &self.b3] {
            for v in block.iter() {
                w.f64(*v);
            }
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, ClassifyError> {
        let mut r = Reader::new(buf);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let dims_offset = r.offset();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u64()? as usize;
        }
        let [dim, h1, h2, classes] = dims;
        let dropout = r.f64()?;
        let total = [dim.checked_mul(h1), Some(h1), h2.checked_mul(h1), Some(h2), classes.checked_mul(h2), Some(classes)]
            .into_iter()
            .try_fold(0usize, |acc, n| n.and_then(|n| acc.checked_add(n)))
            .ok_or(FormatError::Corrupt {
                offset: dims_offset,
                message: "dimensions overflow".into(),
            })?;
        if total.saturating_mul(8) != buf.len() - r.offset() {
            return Err(FormatError::Truncated {
                offset: r.offset(),
                needed: total.saturating_mul(8),
                available: buf.len() - r.offset(),
            }
            .into());
        }
        let mut read = |n: usize| -> Result<Vec<f64>, FormatError> { (0..n).map(|_| r.f64()).collect() };
        let w1_out_major = read(dim * h1)?;
        let mut w1 = vec![0.0; dim * h1];
        for o in 0..h1 {
            for j in 0..dim {
                w1[j * h1 + o] = w1_out_major[o * dim + j];
            }
        }
        let model = Self {
            dim,
            h1,
            h2,
            classes,
            dropout,
            w1,
            b1: read(h1)?,
            w2: read(h2 * h1)?,
            b2: read(h2)?,
            w3: read(classes * h2)?,
            b3: read(classes)?,
        };
        if model.blocks().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(FormatError::Corrupt {
                offset: dims_offset,
                message: "non-finite parameter".into(),
            }
            .into());
        }
        Ok(model)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Classifier for MlpModel {
    fn n_classes(&self) -> usize {
        self.classes
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn logits(&self, x: &SparseVector) -> Result<Vec<f64>, ClassifyError> {
        check_dim(self.dim, x)?;
        Ok(self.forward(x, None).logits)
    }
}

/// Momentum state for the first layer, applied lazily: a row that received
/// no gradient for `k` steps is advanced in closed form when next touched.
struct LazyRowMomentum {
    velocity: Vec<f64>,
    last_step: Vec<u64>,
    width: usize,
    momentum: f64,
}

impl LazyRowMomentum {
    fn new(rows: usize, width: usize, momentum: f64) -> Self {
        Self {
            velocity: vec![0.0; rows * width],
            last_step: vec![0; rows],
            width,
            momentum,
        }
    }

    /// Advance `row` through the gradient-free steps up to `step`.
    fn catch_up(&mut self, weights: &mut [f64], row: usize, step: u64) {
        let k = step - self.last_step[row];
        if k == 0 {
            return;
        }
        let mu = self.momentum;
        let decay = mu.powi(k as i32);
        let travel = if mu == 1.0 { k as f64 } else { mu * (1.0 - decay) / (1.0 - mu) };
        let span = row * self.width..(row + 1) * self.width;
        for (w, v) in weights[span.clone()].iter_mut().zip(&mut self.velocity[span]) {
            *w += *v * travel;
            *v *= decay;
        }
        self.last_step[row] = step;
    }

    fn flush(&mut self, weights: &mut [f64], step: u64) {
        for row in 0..self.last_step.len() {
            self.catch_up(weights, row, step);
        }
    }
}

fn momentum_step(weights: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, mu: f64) {
    for ((w, v), g) in weights.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = mu * *v - lr * g;
        *w += *v;
    }
}

pub fn train_mlp(
    train: &[TrainingSample],
    val: &[TrainingSample],
    classes: usize,
    config: &MlpConfig,
) -> Result<MlpModel, ClassifyError> {
    train_mlp_with_report(train, val, classes, config).map(|(m, _)| m)
}

/// Momentum SGD with inverted dropout on both hidden layers and early
/// stopping on validation loss.
pub fn train_mlp_with_report(
    train: &[TrainingSample],
    val: &[TrainingSample],
    classes: usize,
    config: &MlpConfig,
) -> Result<(MlpModel, TrainReport), ClassifyError> {
    let dim = train.first().map(|s| s.features.dim).ok_or(ClassifyError::EmptyTrainingSet)?;
    validate_training_set(train, dim, classes)?;
    if !val.is_empty() {
        validate_training_set(val, dim, classes)?;
    }
    let mut model = MlpModel::new(dim, config.hidden, classes, config.dropout, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let (lr, mu) = (config.learning_rate, config.momentum);
    let mut w1_momentum = LazyRowMomentum::new(dim, model.h1, mu);
    let mut vel = [
        vec![0.0; model.h1],
        vec![0.0; model.w2.len()],
        vec![0.0; model.h2],
        vec![0.0; model.w3.len()],
        vec![0.0; classes],
    ];
    let mut best = model.clone();
    let mut report = TrainReport::default();
    let mut stopper = EarlyStopping::new(config.patience.max(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch_size = config.batch_size.max(1);
    let mut step: u64 = 0;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            step += 1;
            let mut g = model.zero_grads();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let masks = (model.dropout > 0.0).then(|| model.sample_masks(&mut rng));
                epoch_loss += model.backward(&train[i], masks.as_ref(), scale, &mut g);
            }
            // Merge per-sample row gradients, then step each touched row.
            g.w1_rows.sort_by_key(|(j, _)| *j);
            let mut merged: Vec<(usize, Vec<f64>)> = Vec::new();
            for (j, row) in g.w1_rows.drain(..) {
                match merged.last_mut() {
                    Some((last, acc)) if *last == j => acc.iter_mut().zip(&row).for_each(|(a, b)| *a += b),
                    _ => merged.push((j, row)),
                }
            }
            let h1 = model.h1;
            for (j, grad) in merged {
                w1_momentum.catch_up(&mut model.w1, j, step - 1);
                let span = j * h1..(j + 1) * h1;
                momentum_step(&mut model.w1[span.clone()], &mut w1_momentum.velocity[span], &grad, lr, mu);
                w1_momentum.last_step[j] = step;
            }
            let [vb1, vw2, vb2, vw3, vb3] = &mut vel;
            momentum_step(&mut model.b1, vb1, &g.b1, lr, mu);
            momentum_step(&mut model.w2, vw2, &g.w2, lr, mu);
            momentum_step(&mut model.b2, vb2, &g.b2, lr, mu);
            momentum_step(&mut model.w3, vw3, &g.w3, lr, mu);
            momentum_step(&mut model.b3, vb3, &g.b3, lr, mu);
        }
        w1_momentum.flush(&mut model.w1, step);
        let train_loss = epoch_loss / train.len() as f64;
        if !train_loss.is_finite() {
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

    fn xor() -> Vec<TrainingSample> {
        // Inputs embedded with a constant feature so the zero point is not
        // the all-zero row.
        [([0.0, 0.0], 0), ([0.0, 1.0], 1), ([1.0, 0.0], 1), ([1.0, 1.0], 0)]
            .iter()
            .map(|(x, y)| TrainingSample::new(SparseVector::from_dense(&[x[0], x[1], 1.0]), *y))
            .collect()
    }

    #[test]
    fn learns_xor() {
        let cfg = MlpConfig {
            hidden: (16, 8),
            dropout: 0.0,
            learning_rate: 0.05,
            batch_size: 4,
            max_epochs: 2000,
            patience: 2000,
            ..MlpConfig::default()
        };
        let data = xor();
        let m = train_mlp(&data, &[], 2, &cfg).unwrap();
        for s in &data {
            assert_eq!(m.predict(&s.features).unwrap().intent, s.label);
        }
    }

    #[test]
    fn zero_input_follows_bias_path() {
        let mut m = MlpModel::new(5, (4, 3), 2, 0.3, 9);
        m.b1 = vec![0.5, -0.2, 0.1, 0.0];
        m.b2 = vec![0.3, 0.1, -0.4];
        m.b3 = vec![0.05, -0.05];
        let h1: Vec<f64> = m.b1.iter().map(|b: &f64| b.max(0.0)).collect();
        let h2: Vec<f64> = (0..3).map(|o| (m.b2[o] + dot(&m.w2[o * 4..o * 4 + 4], &h1)).max(0.0)).collect();
        let expected: Vec<f64> = (0..2).map(|o| m.b3[o] + dot(&m.w3[o * 3..o * 3 + 3], &h2)).collect();
        assert_eq!(m.logits(&SparseVector::zeros(5)).unwrap(), expected);
    }

    #[test]
    fn inference_ignores_dropout() {
        let m = MlpModel::new(4, (8, 4), 3, 0.9, 1);
        let x = SparseVector::from_dense(&[0.5, 0.0, 0.2, 1.0]);
        assert_eq!(m.logits(&x).unwrap(), m.logits(&x).unwrap());
    }

    #[test]
    fn lazy_momentum_matches_dense_updates() {
        let mut dense_w = vec![1.0, -1.0];
        let mut dense_v = vec![0.0, 0.0];
        let mut lazy_w = dense_w.clone();
        let mut lazy = LazyRowMomentum::new(1, 2, 0.9);
        // step 1: gradient, steps 2..=6: no gradient
        momentum_step(&mut dense_w, &mut dense_v, &[0.5, -0.25], 0.1, 0.9);
        momentum_step(&mut lazy_w, &mut lazy.velocity, &[0.5, -0.25], 0.1, 0.9);
        lazy.last_step[0] = 1;
        for _ in 0..5 {
            momentum_step(&mut dense_w, &mut dense_v, &[0.0, 0.0], 0.1, 0.9);
        }
        lazy.flush(&mut lazy_w, 6);
        for (a, b) in dense_w.iter().zip(&lazy_w) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn file_round_trip() {
        let m = MlpModel::new(7, (5, 4), 3, 0.3, 11);
        let back = MlpModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        let bytes = m.to_bytes();
        assert!(MlpModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
