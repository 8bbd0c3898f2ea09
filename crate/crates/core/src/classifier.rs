//! Focal-loss MLP classifier.
//!
//! A small fully connected network (rectifier hidden layers, sigmoid
//! output) trained with mini-batch Adam on training normals plus selected
//! synthetic anomalies. Parameters live in one flat vector, which keeps the
//! optimizer state and finite-difference checks simple. Training is
//! single-threaded and bit-deterministic given the seeds.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{apply_minmax, fit_minmax, FeatureMatrix, ScalerParams};
use crate::error::{io_err, Error, Result};

/// Output probabilities, clamped to stay strictly inside (0,1).
#[derive(Debug, Clone)]
pub struct ProbabilityVector(pub Vec<f64>);

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![64, 32],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            batch_size: 256,
            learning_rate: 0.001,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            shuffle_seed: 1,
        }
    }
}

/// Trained network: layer sizes (input through output), flat parameters,
/// the input scaler fit on the training matrix, and training metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpModel {
    pub format: String,
    pub layer_dims: Vec<usize>,
    pub params: Vec<f64>,
    pub scaler: ScalerParams,
    pub mlp_config: MlpConfig,
    pub train_config: TrainConfig,
    pub final_loss: f64,
    pub epochs_run: usize,
    #[serde(skip)]
    pub epoch_losses: Vec<f64>,
}

pub const MODEL_FORMAT: &str = "synthad-mlp-v1";

/// Total parameter count for a layer-size chain.
fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Symmetric uniform fan-in initialization: weights in
/// `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
pub fn init_params(dims: &[usize], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(param_count(dims));
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            params.push(rng.random_range(-bound..bound));
        }
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    params
}

/// Mean focal loss over a batch:
/// `-(alpha (1-p)^gamma y ln p + (1-alpha) p^gamma (1-y) ln(1-p))`,
/// with probabilities clamped away from {0,1}.
pub fn focal_loss(probs: &[f64], labels: &[u8], alpha: f64, gamma: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: probs.len(),
        });
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        total += focal_loss_single(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP), y, alpha, gamma);
    }
    Ok(total / probs.len().max(1) as f64)
}

#[inline]
fn focal_loss_single(p: f64, y: u8, alpha: f64, gamma: f64) -> f64 {
    if y == 1 {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// d(loss)/dp for one sample. The gamma term is skipped at gamma == 0 to
/// avoid 0 * inf.
#[inline]
fn focal_grad_single(p: f64, y: u8, alpha: f64, gamma: f64) -> f64 {
    if y == 1 {
        let base = -alpha * (1.0 - p).powf(gamma) / p;
        if gamma == 0.0 {
            base
        } else {
            base + alpha * gamma * (1.0 - p).powf(gamma - 1.0) * p.ln()
        }
    } else {
        let base = (1.0 - alpha) * p.powf(gamma) / (1.0 - p);
        if gamma == 0.0 {
            base
        } else {
            base - (1.0 - alpha) * gamma * p.powf(gamma - 1.0) * (1.0 - p).ln()
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Forward pass on already-scaled rows; outputs clamped probabilities.
pub fn forward(dims: &[usize], params: &[f64], rows: &FeatureMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.n_rows());
    let mut buf_a = Vec::new();
    let mut buf_b = Vec::new();
    for row in rows.rows() {
        if rows.is_empty() {
            break;
        }
        buf_a.clear();
        buf_a.extend_from_slice(row);
        let mut offset = 0;
        for (l, w) in dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let biases = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            buf_b.clear();
            for o in 0..n_out {
                let mut z = biases[o];
                let wrow = &weights[o * n_in..(o + 1) * n_in];
                for (wi, ai) in wrow.iter().zip(buf_a.iter()) {
                    z += wi * ai;
                }
                let last = l == dims.len() - 2;
                buf_b.push(if last { sigmoid(z) } else { z.max(0.0) });
            }
            std::mem::swap(&mut buf_a, &mut buf_b);
        }
        out.push(buf_a[0].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP));
    }
    out
}

/// Mean focal loss and its gradient w.r.t. every parameter, on
/// already-scaled rows. This is the exact computation the trainer uses;
/// finite-difference tests call it directly.
pub fn network_loss_and_grad(
    dims: &[usize],
    params: &[f64],
    rows: &FeatureMatrix,
    labels: &[u8],
    alpha: f64,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    if rows.n_rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.n_rows(),
            got: labels.len(),
        });
    }
    let n = rows.n_rows().max(1) as f64;
    let mut grad = vec![0.0; params.len()];
    let mut total_loss = 0.0;

    let n_layers = dims.len() - 1;
    let mut offsets = Vec::with_capacity(n_layers);
    {
        let mut off = 0;
        for w in dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
    }

    // activations[l] holds the input to layer l; activations[n_layers] the output
    let mut activations: Vec<Vec<f64>> = dims.iter().map(|d| vec![0.0; *d]).collect();

    for (row, &label) in rows.rows().zip(labels) {
        activations[0].clear();
        activations[0].extend_from_slice(row);
        for l in 0..n_layers {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let base = offsets[l];
            let weights = &params[base..base + n_in * n_out];
            let biases = &params[base + n_in * n_out..base + n_in * n_out + n_out];
            let (head, tail) = activations.split_at_mut(l + 1);
            let a_in = &head[l];
            let a_out = &mut tail[0];
            for o in 0..n_out {
                let mut z = biases[o];
                let wrow = &weights[o * n_in..(o + 1) * n_in];
                for (wi, ai) in wrow.iter().zip(a_in.iter()) {
                    z += wi * ai;
                }
                a_out[o] = if l == n_layers - 1 {
                    sigmoid(z)
                } else {
                    z.max(0.0)
                };
            }
        }

        let p_raw = activations[n_layers][0];
        let p = p_raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total_loss += focal_loss_single(p, label, alpha, gamma);

        // the clamp gates the gradient when saturated
        let dl_dp = if p_raw <= PROB_CLAMP || p_raw >= 1.0 - PROB_CLAMP {
            0.0
        } else {
            focal_grad_single(p, label, alpha, gamma)
        };
        let mut delta = vec![dl_dp * p_raw * (1.0 - p_raw)];

        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let base = offsets[l];
            let a_in = &activations[l];
            for o in 0..n_out {
                let d = delta[o];
                let wbase = base + o * n_in;
                for i in 0..n_in {
                    grad[wbase + i] += d * a_in[i];
                }
                grad[base + n_in * n_out + o] += d;
            }
            if l > 0 {
                let weights = &params[base..base + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for (i, prev_i) in prev.iter_mut().enumerate() {
                    // rectifier gate: a_in[i] > 0 iff the pre-activation was positive
                    if a_in[i] > 0.0 {
                        let mut acc = 0.0;
                        for (o, d) in delta.iter().enumerate() {
                            acc += weights[o * n_in + i] * d;
                        }
                        *prev_i = acc;
                    }
                }
                delta = prev;
            }
        }
    }

    for g in &mut grad {
        *g /= n;
    }
    Ok((total_loss / n, grad))
}

/// Train on normals (label 0) and anomalies (label 1).
///
/// Inputs are min-max scaled with parameters fit on the combined matrix
/// and stored in the model. Identical inputs and seeds reproduce identical
/// weights.
pub fn train(
    normals: &FeatureMatrix,
    anomalies: &FeatureMatrix,
    mlp: &MlpConfig,
    cfg: &TrainConfig,
) -> Result<MlpModel> {
    if normals.is_empty() {
        return Err(Error::EmptyTrainingClass { class: "normal" });
    }
    if anomalies.is_empty() {
        return Err(Error::EmptyTrainingClass { class: "anomaly" });
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidParameter {
            name: "train_config",
            message: "epochs and batch_size must be at least 1".into(),
        });
    }

    let combined = FeatureMatrix::vstack(&[normals, anomalies])?;
    let labels: Vec<u8> = std::iter::repeat_n(0u8, normals.n_rows())
        .chain(std::iter::repeat_n(1u8, anomalies.n_rows()))
        .collect();
    let scaler = fit_minmax(&combined)?;
    let scaled = apply_minmax(&scaler, &combined)?;

    let mut dims = vec![combined.n_cols()];
    dims.extend_from_slice(&mlp.hidden_sizes);
    dims.push(1);

    let mut params = init_params(&dims, mlp.seed);
    let mut adam = AdamState::new(params.len(), cfg.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);

    let n = scaled.n_rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        shuffle(&mut order, &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let rows = scaled.select_rows(batch);
            let batch_labels: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = network_loss_and_grad(
                &dims,
                &params,
                &rows,
                &batch_labels,
                cfg.focal_alpha,
                cfg.focal_gamma,
            )?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch: epoch + 1 });
            }
            adam.step(&mut params, &grad);
            epoch_loss += loss * batch.len() as f64;
        }
        epoch_losses.push(epoch_loss / n as f64);
    }

    Ok(MlpModel {
        format: MODEL_FORMAT.to_string(),
        layer_dims: dims,
        params,
        scaler,
        mlp_config: mlp.clone(),
        train_config: cfg.clone(),
        final_loss: *epoch_losses.last().unwrap(),
        epochs_run: cfg.epochs,
        epoch_losses,
    })
}

/// Fisher-Yates with the given RNG.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

impl MlpModel {
    /// Scale with the stored parameters, run the forward pass, and return
    /// clamped probabilities.
    pub fn predict(&self, test: &FeatureMatrix) -> Result<ProbabilityVector> {
        if test.n_cols() != self.layer_dims[0] {
            return Err(Error::DimensionMismatch {
                expected: self.layer_dims[0],
                got: test.n_cols(),
            });
        }
        let scaled = apply_minmax(&self.scaler, test)?;
        Ok(ProbabilityVector(forward(
            &self.layer_dims,
            &self.params,
            &scaled,
        )))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<MlpModel> {
        let content = fs::read_to_string(path).map_err(io_err(path))?;
        let model: MlpModel = serde_json::from_str(&content)?;
        if model.format != MODEL_FORMAT {
            return Err(Error::ModelFormat {
                path: path.to_path_buf(),
                message: format!("unsupported format tag {:?}", model.format),
            });
        }
        Ok(model)
    }
}
