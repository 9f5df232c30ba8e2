//! Synthetic federated populations: Gaussian class prototypes with
//! Dirichlet-skewed per-client label mixtures.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    /// Row-major `n x dim`.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
}

impl ClientDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("client dataset must be non-empty".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch {
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside {classes} classes"
            )));
        }
        Ok(ClientDataset {
            features,
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// Every client weighs 1.
    Uniform,
    /// Clients weigh their sample count.
    #[default]
    Weighted,
}

impl WeightingMode {
    pub fn weights(self, clients: &[ClientDataset]) -> Vec<f64> {
        clients
            .iter()
            .map(|c| match self {
                WeightingMode::Uniform => 1.0,
                WeightingMode::Weighted => c.len() as f64,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ClientPopulation {
    pub train_clients: Vec<ClientDataset>,
    pub val_clients: Vec<ClientDataset>,
    pub train_weights: Vec<f64>,
    pub val_weights: Vec<f64>,
    pub weighting_mode: WeightingMode,
    pub classes: usize,
    pub dim: usize,
}

impl ClientPopulation {
    pub fn new(
        train_clients: Vec<ClientDataset>,
        val_clients: Vec<ClientDataset>,
        weighting_mode: WeightingMode,
        classes: usize,
        dim: usize,
    ) -> Self {
        ClientPopulation {
            train_weights: weighting_mode.weights(&train_clients),
            val_weights: weighting_mode.weights(&val_clients),
            train_clients,
            val_clients,
            weighting_mode,
            classes,
            dim,
        }
    }

    pub fn n_val(&self) -> usize {
        self.val_clients.len()
    }

    /// Same training clients, different validation clients.
    pub fn with_val_clients(&self, val_clients: Vec<ClientDataset>) -> Self {
        ClientPopulation {
            val_weights: self.weighting_mode.weights(&val_clients),
            val_clients,
            ..self.clone()
        }
    }
}

/// Regeneration recipe for a population; this is what gets persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub classes: usize,
    pub dim: usize,
    pub alpha: f64,
    pub samples_per_client: usize,
    pub weighting: WeightingMode,
    /// Standard deviation of the class prototype coordinates.
    pub prototype_scale: f64,
    /// Rotation (radians) of every prototype in the plane of the first two
    /// feature axes. Used to dial proxy/target mismatch.
    pub rotation: f64,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            n_train: 400,
            n_val: 100,
            classes: 10,
            dim: 10,
            alpha: 0.1,
            samples_per_client: 100,
            weighting: WeightingMode::Weighted,
            prototype_scale: 1.0,
            rotation: 0.0,
            seed: 0,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_train", self.n_train),
            ("n_val", self.n_val),
            ("classes", self.classes),
            ("dim", self.dim),
            ("samples_per_client", self.samples_per_client),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be a positive finite number, got {}",
                self.alpha
            )));
        }
        if !(self.prototype_scale > 0.0) {
            return Err(Error::InvalidArgument("prototype_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<ClientPopulation> {
        generate_population(self)
    }
}

pub fn class_prototypes(spec: &PopulationSpec) -> Vec<Vec<f64>> {
    // Prototypes come from their own stream so that populations differing
    // only in alpha, client counts or rotation share the same geometry.
    let mut rng = seed::derive_rng(spec.seed, &[tag::DATA, 0]);
    let (sin, cos) = spec.rotation.sin_cos();
    (0..spec.classes)
        .map(|_| {
            let mut p: Vec<f64> = (0..spec.dim)
                .map(|_| spec.prototype_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if spec.dim >= 2 {
                let (x, y) = (p[0], p[1]);
                p[0] = cos * x - sin * y;
                p[1] = sin * x + cos * y;
            }
            p
        })
        .collect()
}

pub fn dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|x| *x /= total);
    } else {
        // every gamma draw underflowed (tiny alpha): all mass on one class
        draws.iter_mut().for_each(|x| *x = 0.0);
        draws[rng.random_range(0..k)] = 1.0;
    }
    draws
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn generate_client(
    spec: &PopulationSpec,
    prototypes: &[Vec<f64>],
    stream: &[u64],
) -> ClientDataset {
    let mut rng = seed::derive_rng(spec.seed, stream);
    let mix = dirichlet(spec.alpha, spec.classes, &mut rng);
    let n = spec.samples_per_client;
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = sample_categorical(&mix, &mut rng);
        labels.push(label);
        features.extend(
            prototypes[label]
                .iter()
                .map(|&m| m + rng.sample::<f64, _>(StandardNormal)),
        );
    }
    ClientDataset {
        features,
        labels,
        dim: spec.dim,
    }
}

pub fn generate_population(spec: &PopulationSpec) -> Result<ClientPopulation> {
    spec.validate()?;
    let prototypes = class_prototypes(spec);
    let train = (0..spec.n_train)
        .map(|i| generate_client(spec, &prototypes, &[tag::DATA, 1, i as u64]))
        .collect();
    let val = (0..spec.n_val)
        .map(|i| generate_client(spec, &prototypes, &[tag::DATA, 2, i as u64]))
        .collect();
    Ok(ClientPopulation::new(
        train,
        val,
        spec.weighting,
        spec.classes,
        spec.dim,
    ))
}

/// Shannon entropy (nats) of a label histogram.
pub fn label_entropy(hist: &[usize]) -> f64 {
    let n: usize = hist.iter().sum();
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}
