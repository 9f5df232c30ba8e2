//! Multinomial logistic regression trained with client SGD and server FedAdam.

use rand::seq::{index, SliceRandom};

use super::data::{ClientDataset, ClientPopulation, WeightingMode};
use crate::error::{Error, Result};
use crate::seed::{self, tag};
use crate::space::{self, HpConfig};

/// Adaptivity constant in the FedAdam denominator.
pub const ADAM_TAU: f64 = 1e-8;

/// Hyperparameters consumed by the training loop, extracted from an `HpConfig`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingHps {
    pub server_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lr_decay: f64,
    pub client_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl TrainingHps {
    pub fn from_config(config: &HpConfig) -> Result<Self> {
        let batch = config.real(space::BATCH_SIZE)?;
        let epochs = config.real(space::EPOCHS)?;
        if !(batch >= 1.0) || !(epochs >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "batch_size {batch} / epochs {epochs} out of range"
            )));
        }
        Ok(TrainingHps {
            server_lr: config.real(space::SERVER_LR)?,
            beta1: config.real(space::BETA1)?,
            beta2: config.real(space::BETA2)?,
            lr_decay: config.real(space::LR_DECAY)?,
            client_lr: config.real(space::CLIENT_LR)?,
            momentum: config.real(space::MOMENTUM)?,
            weight_decay: config.real(space::WEIGHT_DECAY)?,
            batch_size: batch as usize,
            epochs: epochs as usize,
        })
    }
}

/// Flattened weights (`classes x dim`, row-major) followed by `classes` biases,
/// plus the server optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: Vec<f64>,
    pub server_m: Vec<f64>,
    pub server_v: Vec<f64>,
    pub round_index: usize,
    pub classes: usize,
    pub dim: usize,
}

impl ModelState {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        let n = classes * dim + classes;
        ModelState {
            params: vec![0.0; n],
            server_m: vec![0.0; n],
            server_v: vec![0.0; n],
            round_index: 0,
            classes,
            dim,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }
}

/// Class scores `W x + b` written into `out`.
#[inline]
pub fn scores(params: &[f64], classes: usize, dim: usize, x: &[f64], out: &mut [f64]) {
    let bias = &params[classes * dim..];
    for c in 0..classes {
        let w = &params[c * dim..(c + 1) * dim];
        out[c] = bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

/// Mean cross-entropy over the selected rows.
pub fn loss(params: &[f64], classes: usize, data: &ClientDataset, rows: &[usize]) -> f64 {
    let mut z = vec![0.0; classes];
    let total: f64 = rows
        .iter()
        .map(|&i| {
            scores(params, classes, data.dim, data.row(i), &mut z);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - z[data.labels[i]]
        })
        .sum();
    total / rows.len() as f64
}

/// Gradient of [`loss`] with respect to the flattened parameters.
pub fn loss_gradient(
    params: &[f64],
    classes: usize,
    data: &ClientDataset,
    rows: &[usize],
    grad: &mut [f64],
) {
    let dim = data.dim;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut p = vec![0.0; classes];
    let scale = 1.0 / rows.len() as f64;
    for &i in rows {
        let x = data.row(i);
        scores(params, classes, dim, x, &mut p);
        softmax_in_place(&mut p);
        p[data.labels[i]] -= 1.0;
        for c in 0..classes {
            let r = p[c] * scale;
            if r == 0.0 {
                continue;
            }
            let g = &mut grad[c * dim..(c + 1) * dim];
            g.iter_mut().zip(x).for_each(|(g, &xv)| *g += r * xv);
            grad[classes * dim + c] += r;
        }
    }
}

/// Local mini-batch SGD with momentum and L2 weight decay, returning
/// `local_params - start_params`.
pub fn client_opt(
    params: &[f64],
    classes: usize,
    data: &ClientDataset,
    hps: &TrainingHps,
    rng: &mut seed::Rng,
) -> Vec<f64> {
    let n = data.len();
    let batch = hps.batch_size.clamp(1, n);
    let mut w = params.to_vec();
    let mut velocity = vec![0.0; w.len()];
    let mut grad = vec![0.0; w.len()];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..hps.epochs {
        order.shuffle(rng);
        for rows in order.chunks(batch) {
            loss_gradient(&w, classes, data, rows, &mut grad);
            for ((wi, vi), gi) in w.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                let g = gi + hps.weight_decay * *wi;
                *vi = hps.momentum * *vi + g;
                *wi -= hps.client_lr * *vi;
            }
        }
    }
    w.iter().zip(params).map(|(a, b)| a - b).collect()
}

/// One FedAdam step on the (optionally weighted) mean of client deltas.
pub fn server_opt(
    model: &mut ModelState,
    deltas: &[Vec<f64>],
    weights: Option<&[f64]>,
    hps: &TrainingHps,
) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::InvalidArgument("server_opt needs at least one delta".into()));
    }
    let n = model.num_params();
    if let Some(bad) = deltas.iter().find(|d| d.len() != n) {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: bad.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != deltas.len() {
            return Err(Error::ShapeMismatch {
                expected: deltas.len(),
                actual: w.len(),
            });
        }
    }
    let total: f64 = weights.map_or(deltas.len() as f64, |w| w.iter().sum());
    let mut mean = vec![0.0; n];
    for (k, d) in deltas.iter().enumerate() {
        let wk = weights.map_or(1.0, |w| w[k]) / total;
        mean.iter_mut().zip(d).for_each(|(m, x)| *m += wk * x);
    }
    let lr = hps.server_lr * hps.lr_decay.powi(model.round_index as i32);
    for (i, &d) in mean.iter().enumerate() {
        model.server_m[i] = hps.beta1 * model.server_m[i] + (1.0 - hps.beta1) * d;
        model.server_v[i] = hps.beta2 * model.server_v[i] + (1.0 - hps.beta2) * d * d;
        model.params[i] += lr * model.server_m[i] / (model.server_v[i].sqrt() + ADAM_TAU);
    }
    model.round_index += 1;
    Ok(())
}

/// Runs `rounds` more federated rounds on `model`. Round `r` draws its client
/// sample and batching from the stream `(seed, r)`, so training in pieces
/// reproduces training in one go.
pub fn train(
    model: &mut ModelState,
    hps: &TrainingHps,
    population: &ClientPopulation,
    rounds: usize,
    clients_per_round: usize,
    seed: u64,
) -> Result<()> {
    let n_train = population.train_clients.len();
    if clients_per_round == 0 || clients_per_round > n_train {
        return Err(Error::InvalidArgument(format!(
            "clients_per_round {clients_per_round} must be in 1..={n_train}"
        )));
    }
    let weighted = population.weighting_mode == WeightingMode::Weighted;
    for _ in 0..rounds {
        let r = model.round_index as u64;
        let mut rng = seed::derive_rng(seed, &[tag::TRAIN, r]);
        let chosen = index::sample(&mut rng, n_train, clients_per_round).into_vec();
        let deltas: Vec<Vec<f64>> = chosen
            .iter()
            .map(|&k| {
                let mut crng = seed::derive_rng(seed, &[tag::TRAIN, r, k as u64]);
                client_opt(
                    &model.params,
                    model.classes,
                    &population.train_clients[k],
                    hps,
                    &mut crng,
                )
            })
            .collect();
        let weights: Option<Vec<f64>> = weighted
            .then(|| chosen.iter().map(|&k| population.train_weights[k]).collect());
        server_opt(model, &deltas, weights.as_deref(), hps)?;
    }
    Ok(())
}
