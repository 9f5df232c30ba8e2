//! Pools of trained configs with per-client errors cached at checkpoints.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::Backend;
use crate::seed::{self, tag};
use crate::space::{HpConfig, SearchSpace};

/// What gets persisted: configs, training streams and error tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolTable {
    pub configs: Vec<HpConfig>,
    pub train_seeds: Vec<u64>,
    /// Ascending cumulative round counts.
    pub checkpoints: Vec<usize>,
    /// `errors[config][checkpoint][client]`.
    pub errors: Vec<Vec<Vec<f64>>>,
    pub val_weights: Vec<f64>,
}

impl PoolTable {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn checkpoint_index(&self, rounds: usize) -> Option<usize> {
        self.checkpoints.iter().position(|&c| c == rounds)
    }

    /// Weighted full-validation error of config `i` at checkpoint `c`.
    pub fn full_error(&self, i: usize, c: usize) -> f64 {
        crate::fed::aggregate_error(&self.errors[i][c], &self.val_weights).expect("pool has validation clients")
    }

    pub fn final_errors(&self) -> Vec<f64> {
        let last = self.checkpoints.len() - 1;
        (0..self.len()).map(|i| self.full_error(i, last)).collect()
    }
}

/// A table plus the trained models behind it, so the errors can be
/// recomputed on other validation clients.
pub struct Pool<B: Backend> {
    pub table: PoolTable,
    pub models: Vec<Vec<B::Model>>,
}

/// Stream of pool config `i`.
pub fn pool_config_seed(pool_seed: u64, i: usize) -> u64 {
    seed::derive(pool_seed, &[tag::POOL, i as u64])
}

pub fn pool_train_seed(pool_seed: u64, i: usize) -> u64 {
    seed::derive(pool_seed, &[tag::POOL, i as u64, tag::TRAIN])
}

pub fn build_pool<B: Backend>(
    backend: &B,
    space: &SearchSpace,
    size: usize,
    checkpoints: &[usize],
    pool_seed: u64,
) -> Result<Pool<B>> {
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[0] >= w[1]) || checkpoints[0] == 0 {
        return Err(Error::InvalidArgument("checkpoints must be positive and strictly increasing".into()));
    }
    let configs: Vec<HpConfig> = (0..size)
        .map(|i| space.sample(&mut seed::rng(pool_config_seed(pool_seed, i))))
        .collect();
    let train_seeds: Vec<u64> = (0..size).map(|i| pool_train_seed(pool_seed, i)).collect();
    let trained = configs
        .par_iter()
        .zip(&train_seeds)
        .map(|(config, &s)| {
            let mut model = backend.init(config)?;
            let mut models = Vec::with_capacity(checkpoints.len());
            let mut errors = Vec::with_capacity(checkpoints.len());
            let mut done = 0;
            for &c in checkpoints {
                backend.advance(&mut model, config, c - done, s)?;
                done = c;
                errors.push(backend.client_errors(&model));
                models.push(model.clone());
            }
            Ok((models, errors))
        })
        .collect::<Result<Vec<_>>>()?;
    let (models, errors) = trained.into_iter().unzip();
    Ok(Pool {
        table: PoolTable {
            configs,
            train_seeds,
            checkpoints: checkpoints.to_vec(),
            errors,
            val_weights: backend.val_weights().to_vec(),
        },
        models,
    })
}

impl<B: Backend> Pool<B> {
    /// Error tables of the same models on another backend's validation
    /// clients.
    pub fn reevaluated<C: Backend<Model = B::Model>>(&self, other: &C) -> PoolTable {
        let errors = self
            .models
            .par_iter()
            .map(|ms| ms.iter().map(|m| other.client_errors(m)).collect())
            .collect();
        PoolTable {
            errors,
            val_weights: other.val_weights().to_vec(),
            ..self.table.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CachedModel {
    pub index: usize,
    pub rounds: usize,
}

/// Replays a pool's cached errors. Training may only stop at checkpoints.
pub struct CachedBackend<'p> {
    pub table: &'p PoolTable,
}

impl Backend for CachedBackend<'_> {
    type Model = CachedModel;

    fn init(&self, config: &HpConfig) -> Result<CachedModel> {
        let index = self
            .table
            .configs
            .iter()
            .position(|c| c == config)
            .ok_or_else(|| Error::InvalidConfig("config is not in the pool".into()))?;
        Ok(CachedModel { index, rounds: 0 })
    }

    fn advance(&self, model: &mut CachedModel, _: &HpConfig, rounds: usize, _: u64) -> Result<()> {
        let target = model.rounds + rounds;
        if rounds > 0 && self.table.checkpoint_index(target).is_none() {
            return Err(Error::InvalidArgument(format!("pool has no checkpoint at {target} rounds")));
        }
        model.rounds = target;
        Ok(())
    }

    fn rounds_trained(&self, model: &CachedModel) -> usize {
        model.rounds
    }

    fn client_errors(&self, model: &CachedModel) -> Vec<f64> {
        let c = self
            .table
            .checkpoint_index(model.rounds)
            .expect("cached models only sit at checkpoints");
        self.table.errors[model.index][c].clone()
    }

    fn val_weights(&self) -> &[f64] {
        &self.table.val_weights
    }
}
