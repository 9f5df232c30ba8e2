use super::tpe::tpe_suggest;
use super::trial::{train_seed, Trial, TrialOutcome, TrialSeed};
use super::{select_final, TunerSettings};
use crate::error::{Error, Result};
use crate::fed::Backend;
use crate::noise::privacy::Mechanism;
use crate::noise::EvalPolicy;
use crate::seed::{self, tag};
use crate::space::{HpConfig, SearchSpace};

/// Stream for the `k`-th config a trial samples.
pub fn sample_seed(trial_seed: u64, k: usize) -> u64 {
    seed::derive(trial_seed, &[tag::SAMPLE, k as u64])
}

fn check_budget(settings: &TunerSettings, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one config".into()));
    }
    let need = k * settings.rounds;
    if need > settings.total_rounds {
        return Err(Error::BudgetExhausted {
            requested: need,
            remaining: settings.total_rounds,
        });
    }
    Ok(())
}

/// Random search over `settings.k` configs drawn from `space`.
pub fn rs_run<B: Backend>(
    backend: &B,
    space: &SearchSpace,
    settings: &TunerSettings,
    policy: &EvalPolicy,
    seed_: impl Into<TrialSeed>,
) -> Result<TrialOutcome> {
    let seed_ = seed_.into();
    let configs = (0..settings.k)
        .map(|k| {
            let config = space.sample(&mut seed::rng(sample_seed(seed_.base, k)));
            (config, train_seed(seed_.base, k))
        })
        .collect();
    rs_over(backend, configs, settings, policy, seed_)
}

/// Random search over given `(config, training seed)` pairs: train each to
/// `settings.rounds`, evaluate once, keep the lowest score.
pub fn rs_over<B: Backend>(
    backend: &B,
    configs: Vec<(HpConfig, u64)>,
    settings: &TunerSettings,
    policy: &EvalPolicy,
    seed_: impl Into<TrialSeed>,
) -> Result<TrialOutcome> {
    let k = configs.len();
    check_budget(settings, k)?;
    let mut trial = Trial::new(backend, policy, seed_, settings.ledger(), Mechanism::PerEval, k, 1)?;
    for (config, s) in configs {
        trial.add_config_with_seed(config, s)?;
    }
    let ids: Vec<usize> = (0..k).collect();
    if trial.mechanism() == Some(Mechanism::OneshotTopK) {
        // a single selection round over every config
        trial.train_to(&ids, settings.rounds)?;
        let best = trial.evaluate(&ids, 1)?[0];
        return Ok(trial.finish(best, None));
    }
    for &id in &ids {
        trial.train_to(&[id], settings.rounds)?;
        trial.evaluate(&[id], 1)?;
    }
    let best = select_final(trial.trace()).expect("k >= 1 observations");
    Ok(trial.finish(best, None))
}

/// Sequential TPE: each of `settings.k` suggestions is trained to
/// `settings.rounds` and observed before the next is made.
pub fn tpe_run<B: Backend>(
    backend: &B,
    space: &SearchSpace,
    settings: &TunerSettings,
    policy: &EvalPolicy,
    seed_: impl Into<TrialSeed>,
) -> Result<TrialOutcome> {
    let seed_ = seed_.into();
    let k = settings.k;
    check_budget(settings, k)?;
    let mut trial = Trial::new(backend, policy, seed_, settings.ledger(), Mechanism::PerEval, k, k)?;
    for i in 0..k {
        let history: Vec<(HpConfig, f64)> = trial
            .trace()
            .iter()
            .map(|o| (trial.configs()[o.config_id].clone(), o.score))
            .collect();
        let mut rng = seed::rng(sample_seed(seed_.base, i));
        let config = tpe_suggest(&history, space, &settings.tpe, &mut rng);
        let id = trial.add_config(config)?;
        trial.train_to(&[id], settings.rounds)?;
        trial.evaluate(&[id], 1)?;
    }
    let best = select_final(trial.trace()).expect("k >= 1 observations");
    Ok(trial.finish(best, None))
}
