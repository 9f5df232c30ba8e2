use rand::seq::index;
use rayon::prelude::*;

use super::pool::{CachedBackend, PoolTable};
use crate::error::{Error, Result};
use crate::noise::EvalPolicy;
use crate::seed::{self, tag};
use crate::tuners::{rs_over, TrialOutcome, TrialSeed, TunerSettings};

/// Seeds of trial `t` at the grid point hashed to `point`: sampling and
/// training streams depend on the trial only, evaluation noise also on the
/// point.
pub fn trial_seed(master_seed: u64, point: u64, t: usize) -> TrialSeed {
    TrialSeed {
        base: seed::derive(master_seed, &[tag::TRIAL, t as u64]),
        noise: seed::derive(master_seed, &[tag::TRIAL, t as u64, point]),
    }
}

/// Pool indices of the `k` configs trial `t` draws, in draw order.
pub fn trial_draw(master_seed: u64, t: usize, pool_size: usize, k: usize) -> Vec<usize> {
    let mut rng = seed::derive_rng(master_seed, &[tag::TRIAL, t as u64, tag::SAMPLE]);
    index::sample(&mut rng, pool_size, k).into_vec()
}

pub struct BootstrapTrial {
    pub seed: TrialSeed,
    /// Pool index of every trial-local config id.
    pub pool_ids: Vec<usize>,
    pub outcome: TrialOutcome,
}

impl BootstrapTrial {
    pub fn chosen(&self) -> usize {
        self.pool_ids[self.outcome.best_id]
    }
}

/// Random search replayed on a cached pool: every trial draws `k` distinct
/// configs and runs [`rs_over`] on their cached errors.
pub fn bootstrap_rs(
    table: &PoolTable,
    k: usize,
    trials: usize,
    policy: &EvalPolicy,
    settings: &TunerSettings,
    master_seed: u64,
    point: u64,
) -> Result<Vec<BootstrapTrial>> {
    if k == 0 || k > table.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {k} configs from a pool of {}",
            table.len()
        )));
    }
    if table.checkpoint_index(settings.rounds).is_none() {
        return Err(Error::InvalidArgument(format!(
            "pool has no checkpoint at {} rounds",
            settings.rounds
        )));
    }
    let backend = CachedBackend { table };
    let settings = TunerSettings { k, ..*settings };
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let pool_ids = trial_draw(master_seed, t, table.len(), k);
            let configs = pool_ids
                .iter()
                .map(|&j| (table.configs[j].clone(), table.train_seeds[j]))
                .collect();
            let seed = trial_seed(master_seed, point, t);
            let outcome = rs_over(&backend, configs, &settings, policy, seed)?;
            Ok(BootstrapTrial {
                seed,
                pool_ids,
                outcome,
            })
        })
        .collect()
}
