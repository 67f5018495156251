//! Feed-forward network with hand-written backpropagation.
//!
//! Hidden layers use ReLU; the last layer is affine and produces raw logits.
//! A client's objective on one sample is `ce(z, y) + beta * kd(z, target)`
//! where `kd` is the temperature-scaled KL divergence
//! `T^2 * KL(softmax(target / T) || softmax(z / T))`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FdError, Result};

/// Raw (pre-softmax) model output for one sample.
pub type LogitVector = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Weight of the distillation term.
    pub beta: f64,
    pub temperature: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            beta: 1.0,
            temperature: 1.0,
            local_epochs: 2,
            batch_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FdError::config(format!("train.lr must be > 0, got {}", self.lr)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(FdError::config(format!(
                "train.beta must be >= 0, got {}",
                self.beta
            )));
        }
        check_temperature(self.temperature)?;
        if self.local_epochs == 0 {
            return Err(FdError::config("train.local_epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(FdError::config("train.batch_size must be >= 1"));
        }
        Ok(())
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(FdError::config(format!("temperature must be > 0, got {t}")))
    }
}

/// Weights and biases of a multilayer perceptron.
///
/// `weights[j]` is a row-major `layer_dims[j + 1] x layer_dims[j]` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ModelParams {
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1]])
            .collect();
        let biases = layer_dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(ModelParams {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init_uniform<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(layer_dims)?;
        for j in 0..params.num_layers() {
            let bound = 1.0 / (layer_dims[j] as f64).sqrt();
            for w in params.weights[j].iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
            for b in params.biases[j].iter_mut() {
                *b = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn from_parts(
        layer_dims: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_dims(layer_dims)?;
        let layers = layer_dims.len() - 1;
        if weights.len() != layers {
            return Err(FdError::Shape {
                expected: layers,
                actual: weights.len(),
            });
        }
        if biases.len() != layers {
            return Err(FdError::Shape {
                expected: layers,
                actual: biases.len(),
            });
        }
        for (j, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let (fan_in, fan_out) = (layer_dims[j], layer_dims[j + 1]);
            if w.len() != fan_in * fan_out {
                return Err(FdError::Shape {
                    expected: fan_in * fan_out,
                    actual: w.len(),
                });
            }
            if b.len() != fan_out {
                return Err(FdError::Shape {
                    expected: fan_out,
                    actual: b.len(),
                });
            }
        }
        let params = ModelParams {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        };
        if !params.is_finite() {
            return Err(FdError::config("model parameters must be finite"));
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.layer_dims).expect("dims already validated")
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    fn same_shape(&self, other: &ModelParams) -> bool {
        self.layer_dims == other.layer_dims
    }

    pub fn forward(&self, x: &[f64]) -> Result<LogitVector> {
        let acts = self.forward_trace(x)?;
        Ok(acts.into_iter().next_back().unwrap())
    }

    /// All layer activations, input first and logits last.
    fn forward_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim() {
            return Err(FdError::Shape {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let last = self.num_layers() - 1;
        let mut acts = Vec::with_capacity(self.num_layers() + 1);
        acts.push(x.to_vec());
        for j in 0..self.num_layers() {
            let fan_in = self.layer_dims[j];
            let input = &acts[j];
            let out: Vec<f64> = self.weights[j]
                .chunks_exact(fan_in)
                .zip(&self.biases[j])
                .map(|(row, b)| {
                    let z = dot(row, input) + b;
                    if j < last {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(out);
        }
        Ok(acts)
    }

    /// Accumulates `scale * d(loss)/d(params)` into `grads` given `d(loss)/d(logits)`.
    fn backward(&self, acts: &[Vec<f64>], dlogits: &[f64], scale: f64, grads: &mut ModelParams) {
        let mut delta: Vec<f64> = dlogits.iter().map(|d| d * scale).collect();
        for j in (0..self.num_layers()).rev() {
            let fan_in = self.layer_dims[j];
            let input = &acts[j];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.biases[j][o] += d;
                let grow = &mut grads.weights[j][o * fan_in..(o + 1) * fan_in];
                for (g, &a) in grow.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if j == 0 {
                break;
            }
            let mut prev = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &self.weights[j][o * fan_in..(o + 1) * fan_in];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // ReLU mask: activations of hidden layers are post-ReLU.
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// Gradient of `loss_fn(logits)` with respect to all parameters, via the
    /// supplied logit-gradient.
    pub fn gradient(&self, x: &[f64], dlogits: &[f64]) -> Result<ModelParams> {
        let acts = self.forward_trace(x)?;
        if dlogits.len() != self.n_classes() {
            return Err(FdError::Shape {
                expected: self.n_classes(),
                actual: dlogits.len(),
            });
        }
        let mut grads = self.zeros_like();
        self.backward(&acts, dlogits, 1.0, &mut grads);
        Ok(grads)
    }

    /// Flat view of every parameter, layer by layer (weights then biases).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(FdError::config(
            "layer_dims needs at least an input and an output dimension",
        ));
    }
    if layer_dims.contains(&0) {
        return Err(FdError::config("layer dimensions must be positive"));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_with_temperature(z: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
    softmax(&scaled)
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| v - lse).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

pub fn ce_loss(z: &[f64], label: usize) -> Result<f64> {
    if label >= z.len() {
        return Err(FdError::Index {
            index: label,
            len: z.len(),
        });
    }
    Ok((log_sum_exp(z) - z[label]).max(0.0))
}

/// d ce / d z = softmax(z) - onehot(label).
pub fn ce_grad(z: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= z.len() {
        return Err(FdError::Index {
            index: label,
            len: z.len(),
        });
    }
    let mut g = softmax(z);
    g[label] -= 1.0;
    Ok(g)
}

pub fn kd_loss(student: &[f64], target: &[f64], temperature: f64) -> Result<f64> {
    check_temperature(temperature)?;
    if student.len() != target.len() {
        return Err(FdError::Shape {
            expected: target.len(),
            actual: student.len(),
        });
    }
    let scale = |z: &[f64]| z.iter().map(|v| v / temperature).collect::<Vec<_>>();
    let log_p = log_softmax(&scale(student));
    let log_q = log_softmax(&scale(target));
    let kl: f64 = log_q
        .iter()
        .zip(&log_p)
        .map(|(&lq, &lp)| {
            let q = lq.exp();
            if q == 0.0 {
                0.0
            } else {
                q * (lq - lp)
            }
        })
        .sum();
    Ok(temperature * temperature * kl.max(0.0))
}

/// d kd / d student = T * (softmax(student / T) - softmax(target / T)).
pub fn kd_grad(student: &[f64], target: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if student.len() != target.len() {
        return Err(FdError::Shape {
            expected: target.len(),
            actual: student.len(),
        });
    }
    let p = softmax_with_temperature(student, temperature);
    let q = softmax_with_temperature(target, temperature);
    Ok(p.iter().zip(&q).map(|(a, b)| temperature * (a - b)).collect())
}

/// One training sample together with its distillation target, if any.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: usize,
    pub target: Option<&'a [f64]>,
}

fn sample_loss_and_dlogits(
    z: &[f64],
    ex: &Example<'_>,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut loss = ce_loss(z, ex.label)?;
    let mut g = ce_grad(z, ex.label)?;
    if let Some(target) = ex.target {
        if cfg.beta != 0.0 {
            loss += cfg.beta * kd_loss(z, target, cfg.temperature)?;
            let kg = kd_grad(z, target, cfg.temperature)?;
            for (gi, ki) in g.iter_mut().zip(kg) {
                *gi += cfg.beta * ki;
            }
        }
    }
    Ok((loss, g))
}

/// Mean of `ce + beta * kd` over the batch; samples without a target
/// contribute only their cross-entropy.
pub fn local_objective(params: &ModelParams, batch: &[Example<'_>], cfg: &TrainConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(FdError::usage("local objective over an empty batch"));
    }
    let mut total = 0.0;
    for ex in batch {
        let z = params.forward(ex.features)?;
        total += sample_loss_and_dlogits(&z, ex, cfg)?.0;
    }
    Ok(total / batch.len() as f64)
}

/// Objective value and its gradient with respect to every parameter.
pub fn objective_grad(
    params: &ModelParams,
    batch: &[Example<'_>],
    cfg: &TrainConfig,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(FdError::usage("local objective over an empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for ex in batch {
        let acts = params.forward_trace(ex.features)?;
        let (loss, dlogits) = sample_loss_and_dlogits(acts.last().unwrap(), ex, cfg)?;
        total += loss;
        params.backward(&acts, &dlogits, scale, &mut grads);
    }
    Ok((total * scale, grads))
}

/// `p - lr * g` for every parameter.
pub fn sgd_step(params: &ModelParams, grads: &ModelParams, lr: f64) -> Result<ModelParams> {
    let mut next = params.clone();
    apply_sgd(&mut next, grads, lr)?;
    Ok(next)
}

fn apply_sgd(params: &mut ModelParams, grads: &ModelParams, lr: f64) -> Result<()> {
    if !params.same_shape(grads) {
        return Err(FdError::Internal(format!(
            "gradient shape {:?} does not match parameters {:?}",
            grads.layer_dims, params.layer_dims
        )));
    }
    for (p, g) in params.flat_mut().zip(grads.flat()) {
        *p -= lr * g;
    }
    Ok(())
}

/// `cfg.local_epochs` passes of shuffled minibatch SGD over `examples`.
pub fn train_local<R: Rng + ?Sized>(
    params: &ModelParams,
    examples: &[Example<'_>],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ModelParams> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(FdError::usage("cannot train on an empty shard"));
    }
    let mut params = params.clone();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            let (_, grads) = objective_grad(&params, &batch, cfg)?;
            apply_sgd(&mut params, &grads, cfg.lr)?;
        }
    }
    if !params.is_finite() {
        return Err(FdError::Internal("training diverged to non-finite parameters".into()));
    }
    Ok(params)
}
