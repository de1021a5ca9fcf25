//! Small fully connected softmax classifier trained with mini-batch SGD.
//!
//! Hidden layers use ReLU, the output layer emits raw logits. Besides class
//! probabilities the model exposes penultimate activations (the feature space
//! the density and neighbour detectors work in) and exact input gradients for
//! ODIN and FGSM.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Architecture of the toy study: 2 inputs, hidden layers of 50 and 2 units, 2 classes.
pub const DEFAULT_ARCH: [usize; 4] = [2, 50, 2, 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Dense>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 300, batch_size: 32, learning_rate: 0.05, seed: 0, l2_penalty: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub accuracy: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub softmax: Vec<f64>,
    pub penultimate: Vec<f64>,
}

/// Scalar functions of the logits whose input gradient can be requested.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// `ln max_i softmax(logits / T)_i`
    LogMaxSoftmax { temperature: f64 },
    /// `-ln softmax(logits)_label`
    CrossEntropy { label: usize },
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    softmax_with_temperature(logits, 1.0)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Sign with `sign(0) = 0`.
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl MlpModel {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::invalid(format!("invalid architecture {layer_sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
                Dense { weights: Matrix::new(fan_out, fan_in, data).expect("finite init"), bias: vec![0.0; fan_out] }
            })
            .collect();
        Ok(MlpModel { layer_sizes: layer_sizes.to_vec(), layers })
    }

    /// All-zero parameters.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        let mut m = Self::init(layer_sizes, 0)?;
        for l in m.layers.iter_mut() {
            l.weights = Matrix::zeros(l.weights.rows(), l.weights.cols());
        }
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn penultimate_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layers.len() != self.layer_sizes.len() - 1 {
            return Err(Error::invalid("layer count does not match layer_sizes"));
        }
        for (l, w) in self.layers.iter().zip(self.layer_sizes.windows(2)) {
            if l.weights.cols() != w[0] || l.weights.rows() != w[1] || l.bias.len() != w[1] {
                return Err(Error::invalid("layer shape does not match layer_sizes"));
            }
            if l.weights.data().iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("model parameter".into()));
            }
        }
        Ok(())
    }

    /// Activations of every layer: `acts[0] = x`, hidden layers post-ReLU, last entry logits.
    fn trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weights.matvec(acts.last().expect("non-empty"))?;
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
                if i < last {
                    *zi = zi.max(0.0);
                }
            }
            acts.push(z);
        }
        Ok(acts)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.pop().expect("non-empty"))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        let mut acts = self.trace(x)?;
        let logits = acts.pop().expect("non-empty");
        let penultimate = acts.pop().expect("at least input");
        let softmax = softmax(&logits);
        Ok(Forward { logits, softmax, penultimate })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Propagates `dL/dlogits` back through the network. Returns the input
    /// gradient and, if `param_grads` is given, accumulates parameter gradients.
    fn backward(&self, acts: &[Vec<f64>], mut delta: Vec<f64>, mut param_grads: Option<&mut [Dense]>) -> Vec<f64> {
        for l in (0..self.layers.len()).rev() {
            let input = &acts[l];
            if let Some(grads) = param_grads.as_deref_mut() {
                let g = &mut grads[l];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    for (w, a) in g.weights.row_mut(o).iter_mut().zip(input) {
                        *w += d * a;
                    }
                }
            }
            let mut prev = self.layers[l].weights.transpose_matvec(&delta).expect("shapes agree");
            if l > 0 {
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    fn objective_logit_grad(logits: &[f64], objective: Objective) -> Vec<f64> {
        match objective {
            Objective::LogMaxSoftmax { temperature } => {
                let s = softmax_with_temperature(logits, temperature);
                let top = argmax(&s);
                s.iter().enumerate().map(|(j, sj)| ((if j == top { 1.0 } else { 0.0 }) - sj) / temperature).collect()
            }
            Objective::CrossEntropy { label } => {
                let mut s = softmax(logits);
                s[label] -= 1.0;
                s
            }
        }
    }

    /// Value of the objective at `x`.
    pub fn objective(&self, x: &[f64], objective: Objective) -> Result<f64> {
        let logits = self.logits(x)?;
        Ok(match objective {
            Objective::LogMaxSoftmax { temperature } => {
                softmax_with_temperature(&logits, temperature).iter().fold(0.0f64, |m, &p| m.max(p)).ln()
            }
            Objective::CrossEntropy { label } => cross_entropy(&logits, label),
        })
    }

    /// Exact gradient of the objective with respect to the input.
    pub fn input_gradient(&self, x: &[f64], objective: Objective) -> Result<Vec<f64>> {
        match objective {
            Objective::LogMaxSoftmax { temperature } if !(temperature > 0.0) => {
                return Err(Error::invalid("temperature must be > 0"));
            }
            Objective::CrossEntropy { label } if label >= self.n_classes() => {
                return Err(Error::invalid(format!("label {label} out of range")));
            }
            _ => {}
        }
        let acts = self.trace(x)?;
        let delta = Self::objective_logit_grad(acts.last().expect("non-empty"), objective);
        Ok(self.backward(&acts, delta, None))
    }

    /// `x + epsilon · sign(∇ₓ cross_entropy(x, label))`
    pub fn fgsm(&self, x: &[f64], label: usize, epsilon: f64) -> Result<Vec<f64>> {
        if !(epsilon >= 0.0) {
            return Err(Error::invalid("FGSM epsilon must be >= 0"));
        }
        let g = self.input_gradient(x, Objective::CrossEntropy { label })?;
        Ok(x.iter().zip(g).map(|(xi, gi)| xi + epsilon * sign(gi)).collect())
    }

    /// Mini-batch SGD on mean cross-entropy with optional L2 weight decay.
    pub fn train(data: &FeatureDataset, layer_sizes: &[usize], cfg: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
        if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
            return Err(Error::invalid("epochs, batch_size and learning_rate must be positive"));
        }
        if data.is_empty() {
            return Err(Error::invalid("training data is empty"));
        }
        let mut model = MlpModel::init(layer_sizes, cfg.seed)?;
        if data.dim() != model.input_dim() {
            return Err(Error::DimensionMismatch { expected: model.input_dim(), got: data.dim() });
        }
        let n_classes = model.n_classes();
        let labels: Vec<usize> = data
            .labels
            .iter()
            .map(|&l| {
                if l >= 0 && (l as usize) < n_classes {
                    Ok(l as usize)
                } else {
                    Err(Error::invalid(format!("label {l} outside 0..{n_classes}")))
                }
            })
            .collect::<Result<_>>()?;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut grads: Vec<Dense> = model.zeroed_like();
        let mut final_loss = f64::NAN;
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                for g in grads.iter_mut() {
                    g.weights = Matrix::zeros(g.weights.rows(), g.weights.cols());
                    g.bias.iter_mut().for_each(|b| *b = 0.0);
                }
                for &i in batch {
                    let acts = model.trace(data.row(i))?;
                    let logits = acts.last().expect("non-empty");
                    epoch_loss += cross_entropy(logits, labels[i]);
                    let delta = Self::objective_logit_grad(logits, Objective::CrossEntropy { label: labels[i] });
                    model.backward(&acts, delta, Some(&mut grads));
                }
                let scale = cfg.learning_rate / batch.len() as f64;
                for (layer, g) in model.layers.iter_mut().zip(&grads) {
                    let decay = cfg.learning_rate * cfg.l2_penalty;
                    for r in 0..layer.weights.rows() {
                        let wrow = layer.weights.row_mut(r);
                        for (w, gw) in wrow.iter_mut().zip(g.weights.row(r)) {
                            *w -= scale * gw + decay * *w;
                        }
                    }
                    for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                        *b -= scale * gb;
                    }
                }
            }
            final_loss = epoch_loss / data.len() as f64;
            if !final_loss.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1, loss: final_loss });
            }
        }
        model.validate()?;
        let correct = (0..data.len()).filter(|&i| model.predict(data.row(i)).ok() == Some(labels[i])).count();
        let report = TrainReport { accuracy: correct as f64 / data.len() as f64, final_loss };
        Ok((model, report))
    }

    fn zeroed_like(&self) -> Vec<Dense> {
        self.layers
            .iter()
            .map(|l| Dense {
                weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                bias: vec![0.0; l.bias.len()],
            })
            .collect()
    }
}

/// `-ln softmax(logits)_label`, computed with log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    lse - logits[label]
}
