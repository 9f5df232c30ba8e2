//! Federated training and evaluation backends.

pub mod data;
pub mod eval;
pub mod model;
pub mod surrogate;

pub use data::{ClientDataset, ClientPopulation, PopulationSpec, WeightingMode};
pub use eval::{aggregate_error, client_error, full_validation_error};
pub use model::{ModelState, TrainingHps};
pub use surrogate::{surrogate_error, SurrogateResponse};

use crate::error::Result;
use crate::space::{HpConfig, SearchSpace};

/// Something that trains a config for a number of rounds and scores the
/// result on every validation client.
///
/// `advance` must be warm-start consistent: advancing by `a` then `b` rounds
/// yields the same model as advancing by `a + b`, for the same seed.
pub trait Backend: Sync {
    type Model: Clone + Send + Sync;

    fn init(&self, config: &HpConfig) -> Result<Self::Model>;

    fn advance(
        &self,
        model: &mut Self::Model,
        config: &HpConfig,
        rounds: usize,
        seed: u64,
    ) -> Result<()>;

    fn rounds_trained(&self, model: &Self::Model) -> usize;

    /// Error rate on each validation client, in client order.
    fn client_errors(&self, model: &Self::Model) -> Vec<f64>;

    fn val_weights(&self) -> &[f64];

    fn n_val(&self) -> usize {
        self.val_weights().len()
    }

    fn full_error(&self, model: &Self::Model) -> f64 {
        aggregate_error(&self.client_errors(model), self.val_weights())
            .expect("backend has validation clients")
    }

    /// Trains a fresh model for `rounds` rounds.
    fn train_fresh(&self, config: &HpConfig, rounds: usize, seed: u64) -> Result<Self::Model> {
        let mut model = self.init(config)?;
        self.advance(&mut model, config, rounds, seed)?;
        Ok(model)
    }
}

/// Logistic regression trained with FedAdam on a synthetic population.
#[derive(Debug, Clone)]
pub struct FedBackend {
    pub population: ClientPopulation,
    pub clients_per_round: usize,
}

impl FedBackend {
    pub const DEFAULT_CLIENTS_PER_ROUND: usize = 10;

    pub fn new(population: ClientPopulation) -> Self {
        let clients_per_round = Self::DEFAULT_CLIENTS_PER_ROUND.min(population.train_clients.len());
        FedBackend {
            population,
            clients_per_round,
        }
    }

    pub fn with_val_clients(&self, val_clients: Vec<ClientDataset>) -> Self {
        FedBackend {
            population: self.population.with_val_clients(val_clients),
            clients_per_round: self.clients_per_round,
        }
    }
}

impl Backend for FedBackend {
    type Model = ModelState;

    fn init(&self, config: &HpConfig) -> Result<ModelState> {
        TrainingHps::from_config(config)?;
        Ok(ModelState::zeros(self.population.classes, self.population.dim))
    }

    fn advance(&self, model: &mut ModelState, config: &HpConfig, rounds: usize, seed: u64) -> Result<()> {
        let hps = TrainingHps::from_config(config)?;
        model::train(model, &hps, &self.population, rounds, self.clients_per_round, seed)
    }

    fn rounds_trained(&self, model: &ModelState) -> usize {
        model.round_index
    }

    fn client_errors(&self, model: &ModelState) -> Vec<f64> {
        eval::val_client_errors(model, &self.population)
    }

    fn val_weights(&self) -> &[f64] {
        &self.population.val_weights
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub coords: Vec<f64>,
    pub rounds: usize,
}

/// Closed-form backend; validation clients are weighted uniformly.
#[derive(Debug, Clone)]
pub struct SurrogateBackend {
    pub response: SurrogateResponse,
    pub space: SearchSpace,
    weights: Vec<f64>,
}

impl SurrogateBackend {
    pub fn new(response: SurrogateResponse, space: SearchSpace) -> Result<Self> {
        response.validate()?;
        let dims = space.continuous().count();
        if dims != response.optimum.len() {
            return Err(crate::Error::ShapeMismatch {
                expected: dims,
                actual: response.optimum.len(),
            });
        }
        let weights = vec![1.0; response.n_val()];
        Ok(SurrogateBackend {
            response,
            space,
            weights,
        })
    }
}

impl Backend for SurrogateBackend {
    type Model = SurrogateModel;

    fn init(&self, config: &HpConfig) -> Result<SurrogateModel> {
        self.space.validate(config)?;
        Ok(SurrogateModel {
            coords: self.space.unit_coords(config),
            rounds: 0,
        })
    }

    fn advance(&self, model: &mut SurrogateModel, _: &HpConfig, rounds: usize, _: u64) -> Result<()> {
        model.rounds += rounds;
        Ok(())
    }

    fn rounds_trained(&self, model: &SurrogateModel) -> usize {
        model.rounds
    }

    fn client_errors(&self, model: &SurrogateModel) -> Vec<f64> {
        (0..self.response.n_val())
            .map(|k| surrogate_error(&self.response, &model.coords, k, model.rounds))
            .collect()
    }

    fn val_weights(&self) -> &[f64] {
        &self.weights
    }
}
