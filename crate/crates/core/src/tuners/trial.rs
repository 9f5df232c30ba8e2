//! Shared bookkeeping for one tuner run: configs, warm-started models,
//! budget and privacy accounting, and the observation trace.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::budget::BudgetLedger;
use crate::error::{Error, Result};
use crate::fed::Backend;
use crate::noise::privacy::{lowest_k, Mechanism, PrivacyLedger};
use crate::noise::{subsample_score, EvalPolicy};
use crate::seed::{self, tag};
use crate::space::HpConfig;

/// One evaluated (config, resource) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub config_id: usize,
    pub rounds: usize,
    /// Score the tuner saw; may be privatized and fall outside `[0, 1]`.
    pub score: f64,
    pub noisy: bool,
    pub epsilon_spent: f64,
    /// Ground-truth full-validation error of the same model.
    pub full_error: f64,
    /// Training rounds consumed by the whole trial when this was recorded.
    pub consumed: usize,
}

/// Stream for the evaluation of config `id` after `rounds` rounds.
pub fn eval_seed(trial_seed: u64, id: usize, rounds: usize) -> u64 {
    seed::derive(trial_seed, &[tag::EVAL, id as u64, rounds as u64])
}

/// Training stream of config `id` in a trial.
pub fn train_seed(trial_seed: u64, id: usize) -> u64 {
    seed::derive(trial_seed, &[tag::TRAIN, id as u64])
}

/// Seeds of one tuner run. `base` drives config sampling and training,
/// `noise` drives client subsampling and privacy noise, so runs that differ
/// only in evaluation policy can share everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeed {
    pub base: u64,
    pub noise: u64,
}

impl From<u64> for TrialSeed {
    fn from(seed: u64) -> Self {
        TrialSeed { base: seed, noise: seed }
    }
}

pub struct Trial<'a, B: Backend> {
    backend: &'a B,
    policy: &'a EvalPolicy,
    seed: TrialSeed,
    pub budget: BudgetLedger,
    privacy: Option<PrivacyLedger>,
    configs: Vec<HpConfig>,
    train_seeds: Vec<u64>,
    models: Vec<Option<B::Model>>,
    raw: Vec<Option<f64>>,
    trace: Vec<Observation>,
    releases: u64,
}

impl<'a, B: Backend> Trial<'a, B> {
    /// `evaluations` and `rounds` size the privacy ledger for whichever
    /// mechanism the policy ends up using.
    pub fn new(
        backend: &'a B,
        policy: &'a EvalPolicy,
        seed: impl Into<TrialSeed>,
        budget: BudgetLedger,
        natural: Mechanism,
        evaluations: usize,
        rounds: usize,
    ) -> Result<Self> {
        policy.validate(backend.n_val())?;
        let privacy = match policy.mechanism(natural) {
            None => None,
            Some(m) => {
                let capacity = match m {
                    Mechanism::PerEval => evaluations,
                    Mechanism::OneshotTopK => rounds,
                };
                Some(PrivacyLedger::new(m, policy.epsilon.unwrap_or(f64::INFINITY), capacity)?)
            }
        };
        Ok(Trial {
            backend,
            policy,
            seed: seed.into(),
            budget,
            privacy,
            configs: Vec::new(),
            train_seeds: Vec::new(),
            models: Vec::new(),
            raw: Vec::new(),
            trace: Vec::new(),
            releases: 0,
        })
    }

    pub fn seed(&self) -> TrialSeed {
        self.seed
    }

    pub fn mechanism(&self) -> Option<Mechanism> {
        self.privacy.as_ref().map(|p| p.mechanism)
    }

    pub fn epsilon_spent(&self) -> f64 {
        self.privacy.as_ref().map_or(0.0, PrivacyLedger::epsilon_spent)
    }

    pub fn configs(&self) -> &[HpConfig] {
        &self.configs
    }

    pub fn trace(&self) -> &[Observation] {
        &self.trace
    }

    pub fn backend(&self) -> &B {
        self.backend
    }

    pub fn add_config(&mut self, config: HpConfig) -> Result<usize> {
        let s = train_seed(self.seed.base, self.configs.len());
        self.add_config_with_seed(config, s)
    }

    pub fn add_config_with_seed(&mut self, config: HpConfig, train_seed: u64) -> Result<usize> {
        let model = self.backend.init(&config)?;
        self.configs.push(config);
        self.train_seeds.push(train_seed);
        self.models.push(Some(model));
        self.raw.push(None);
        Ok(self.configs.len() - 1)
    }

    pub fn rounds_of(&self, id: usize) -> usize {
        self.backend.rounds_trained(self.model(id))
    }

    pub fn model(&self, id: usize) -> &B::Model {
        self.models[id].as_ref().expect("model is checked in")
    }

    /// Brings every listed config to `target` cumulative rounds, paying only
    /// the increment. Budget is charged in id order before any training.
    pub fn train_to(&mut self, ids: &[usize], target: usize) -> Result<()> {
        let mut increments = Vec::with_capacity(ids.len());
        for &id in ids {
            let have = self.rounds_of(id);
            if have > target {
                return Err(Error::InvalidArgument(format!(
                    "config {id} already has {have} rounds, cannot train to {target}"
                )));
            }
            increments.push(target - have);
        }
        let mut probe = self.budget.clone();
        for (&id, &inc) in ids.iter().zip(&increments) {
            probe.charge(id, inc)?;
        }
        self.budget = probe;

        let backend = self.backend;
        let mut jobs: Vec<(usize, usize, B::Model)> = ids
            .iter()
            .zip(&increments)
            .map(|(&id, &inc)| (id, inc, self.models[id].take().expect("model is checked in")))
            .collect();
        let configs = &self.configs;
        let seeds = &self.train_seeds;
        let result = jobs
            .par_iter_mut()
            .try_for_each(|(id, inc, model)| backend.advance(model, &configs[*id], *inc, seeds[*id]));
        for (id, _, model) in jobs {
            self.models[id] = Some(model);
        }
        result
    }

    /// Raw policy score (subsampled, biased, never privatized) and
    /// full-validation error of each config, in the given order.
    fn measure(&self, ids: &[usize]) -> Result<Vec<(f64, f64)>> {
        ids.par_iter()
            .map(|&id| {
                let model = self.model(id);
                let errors = self.backend.client_errors(model);
                let weights = self.backend.val_weights();
                let mut rng = seed::rng(eval_seed(self.seed.noise, id, self.backend.rounds_trained(model)));
                let raw = subsample_score(&errors, weights, self.policy, &mut rng)?;
                let full = crate::fed::aggregate_error(&errors, weights)?;
                Ok((raw, full))
            })
            .collect()
    }

    fn privacy_rng(&mut self) -> seed::Rng {
        self.releases += 1;
        seed::derive_rng(self.seed.noise, &[tag::PRIVACY, self.releases])
    }

    /// Evaluates `ids` (ascending) at their current fidelity as one selection
    /// event, records an observation per config, and returns the `keep`
    /// selected ids in ascending order.
    pub fn evaluate(&mut self, ids: &[usize], keep: usize) -> Result<Vec<usize>> {
        if ids.is_empty() || keep == 0 || keep > ids.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {keep} of {} configs",
                ids.len()
            )));
        }
        let measured = self.measure(ids)?;
        let raw: Vec<f64> = measured.iter().map(|m| m.0).collect();
        for (&id, &r) in ids.iter().zip(&raw) {
            self.raw[id] = Some(r);
        }
        let s = self.policy.subsample.size(self.backend.n_val());
        let (scores, picked) = match self.mechanism() {
            None => {
                let picked = lowest_k(&raw, keep);
                (raw, picked)
            }
            Some(Mechanism::PerEval) => {
                let mut rng = self.privacy_rng();
                let ledger = self.privacy.as_mut().expect("private");
                let released = raw
                    .iter()
                    .map(|&r| ledger.release(r, s, &mut rng))
                    .collect::<Result<Vec<f64>>>()?;
                let picked = lowest_k(&released, keep);
                (released, picked)
            }
            Some(Mechanism::OneshotTopK) => {
                let mut rng = self.privacy_rng();
                let ledger = self.privacy.as_mut().expect("private");
                let (picked, noisy) = ledger.topk_round(&raw, keep, s, &mut rng)?;
                (noisy, picked)
            }
        };
        let noisy = !self.policy.is_noiseless();
        let eps = self.epsilon_spent();
        for (i, &id) in ids.iter().enumerate() {
            self.trace.push(Observation {
                config_id: id,
                rounds: self.rounds_of(id),
                score: scores[i],
                noisy,
                epsilon_spent: eps,
                full_error: measured[i].1,
                consumed: self.budget.consumed(),
            });
        }
        let mut out: Vec<usize> = picked.into_iter().map(|i| ids[i]).collect();
        out.sort_unstable();
        Ok(out)
    }

    /// One private top-1 round over the latest raw scores of `ids`, without
    /// recording observations.
    pub fn private_pick(&mut self, ids: &[usize]) -> Result<usize> {
        let raw: Vec<f64> = ids
            .iter()
            .map(|&id| {
                self.raw[id].ok_or_else(|| {
                    Error::InvalidArgument(format!("config {id} has not been evaluated"))
                })
            })
            .collect::<Result<_>>()?;
        let s = self.policy.subsample.size(self.backend.n_val());
        let mut rng = self.privacy_rng();
        match self.privacy.as_mut() {
            Some(ledger) if ledger.mechanism == Mechanism::OneshotTopK => {
                Ok(ids[ledger.topk_round(&raw, 1, s, &mut rng)?.0[0]])
            }
            _ => Ok(ids[lowest_k(&raw, 1)[0]]),
        }
    }

    pub fn finish(self, best: usize, schedule: Option<super::Schedule>) -> TrialOutcome {
        let full_error = self.backend.full_error(self.model(best));
        TrialOutcome {
            best_id: best,
            best_config: self.configs[best].clone(),
            best_rounds: self.rounds_of(best),
            full_error,
            rounds_consumed: self.budget.consumed(),
            epsilon_spent: self.epsilon_spent(),
            configs: self.configs,
            trace: self.trace,
            schedule,
            budget: self.budget,
            sampler_fidelity: Vec::new(),
        }
    }
}

/// Result of one tuner run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub best_id: usize,
    pub best_config: HpConfig,
    pub best_rounds: usize,
    /// Noiseless full-validation error of the selected model.
    pub full_error: f64,
    pub rounds_consumed: usize,
    pub epsilon_spent: f64,
    pub configs: Vec<HpConfig>,
    pub trace: Vec<Observation>,
    pub schedule: Option<super::Schedule>,
    pub budget: BudgetLedger,
    /// Fidelity the sampler's model was fitted on, per sampled config
    /// (`None` for uniform draws); empty for tuners without a model.
    #[serde(default)]
    pub sampler_fidelity: Vec<Option<usize>>,
}
