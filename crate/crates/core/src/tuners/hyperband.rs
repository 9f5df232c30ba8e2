//! Successive halving, Hyperband and BOHB.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::random::sample_seed;
use super::tpe::tpe_suggest;
use super::trial::{Observation, Trial, TrialOutcome, TrialSeed};
use super::{select_final, TunerSettings};
use crate::error::{Error, Result};
use crate::fed::Backend;
use crate::noise::privacy::Mechanism;
use crate::noise::EvalPolicy;
use crate::seed;
use crate::space::{HpConfig, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rung {
    pub configs: usize,
    /// Cumulative rounds each config has after this rung.
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: usize,
    pub rungs: Vec<Rung>,
}

impl Bracket {
    pub fn cost(&self) -> usize {
        let mut prev = 0;
        self.rungs
            .iter()
            .map(|r| {
                let c = r.configs * (r.rounds - prev);
                prev = r.rounds;
                c
            })
            .sum()
    }
}

/// Realized multi-fidelity plan, fixed before any training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub brackets: Vec<Bracket>,
    /// True when the budget cut the plan short.
    pub truncated: bool,
}

impl Schedule {
    pub fn total_rounds(&self) -> usize {
        self.brackets.iter().map(Bracket::cost).sum()
    }

    pub fn evaluations(&self) -> usize {
        self.brackets
            .iter()
            .flat_map(|b| &b.rungs)
            .map(|r| r.configs)
            .sum()
    }

    pub fn rung_count(&self) -> usize {
        self.brackets.iter().map(|b| b.rungs.len()).sum()
    }

    pub fn max_rounds(&self) -> usize {
        self.brackets
            .iter()
            .flat_map(|b| &b.rungs)
            .map(|r| r.rounds)
            .max()
            .unwrap_or(0)
    }
}

/// Successive-halving ladder: keep `floor(n / eta)` and multiply resources by
/// `eta` until fewer than `eta` remain or the next resource exceeds `cap`.
pub fn sha_rungs(n: usize, eta: usize, r0: usize, cap: usize) -> Vec<Rung> {
    let mut rungs = vec![Rung { configs: n, rounds: r0 }];
    let (mut n, mut r) = (n, r0);
    while n >= eta && r * eta <= cap {
        n /= eta;
        r *= eta;
        rungs.push(Rung { configs: n, rounds: r });
    }
    rungs
}

/// Brackets `s = s_max ..= 0` with `r0 = R / eta^s` and
/// `n = ceil((s_max + 1) eta^s / (s + 1))`, cut to fit `budget`.
pub fn plan_hyperband(max_rounds: usize, eta: usize, s_max: usize, budget: usize) -> Result<Schedule> {
    if eta < 2 {
        return Err(Error::InvalidArgument(format!("eta must be >= 2, got {eta}")));
    }
    let top = eta.checked_pow(s_max as u32).unwrap_or(usize::MAX);
    if top > max_rounds {
        return Err(Error::InvalidArgument(format!(
            "{s_max} brackets need at least {top} rounds per config, cap is {max_rounds}"
        )));
    }
    let mut brackets = Vec::new();
    let mut left = budget;
    let mut truncated = false;
    for s in (0..=s_max).rev() {
        let pow = eta.pow(s as u32);
        let r0 = max_rounds / pow;
        let n = ((s_max + 1) * pow).div_ceil(s + 1);
        let full = Bracket { s, rungs: sha_rungs(n, eta, r0, max_rounds) };
        if full.cost() <= left {
            left -= full.cost();
            brackets.push(full);
            continue;
        }
        // shrink the bracket until its whole ladder fits
        truncated = true;
        if let Some(smaller) = (1..n)
            .rev()
            .map(|m| Bracket { s, rungs: sha_rungs(m, eta, r0, max_rounds) })
            .find(|b| b.cost() <= left)
        {
            brackets.push(smaller);
        }
        break;
    }
    Ok(Schedule { brackets, truncated })
}

/// Latest scores at one fidelity, as TPE history.
fn rung_history(trace: &[Observation], configs: &[HpConfig], rounds: usize) -> Vec<(HpConfig, f64)> {
    let mut latest: BTreeMap<usize, f64> = BTreeMap::new();
    for o in trace.iter().filter(|o| o.rounds == rounds) {
        latest.insert(o.config_id, o.score);
    }
    latest
        .into_iter()
        .map(|(id, y)| (configs[id].clone(), y))
        .collect()
}

/// Highest fidelity with at least `n_min` observations.
fn fitting_fidelity(trace: &[Observation], n_min: usize) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for o in trace {
        *counts.entry(o.rounds).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .rev()
        .find(|&(_, c)| c >= n_min)
        .map(|(r, _)| r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NewConfigs {
    Uniform,
    Tpe,
}

fn run_schedule<B: Backend>(
    trial: &mut Trial<'_, B>,
    space: &SearchSpace,
    settings: &TunerSettings,
    schedule: &Schedule,
    sampler: NewConfigs,
    fidelity_log: &mut Vec<Option<usize>>,
) -> Result<Vec<usize>> {
    let mut winners = Vec::new();
    for bracket in &schedule.brackets {
        let n0 = bracket.rungs[0].configs;
        let fidelity = match sampler {
            NewConfigs::Uniform => None,
            NewConfigs::Tpe => fitting_fidelity(trial.trace(), settings.tpe.n_min),
        };
        let history = match fidelity {
            Some(r) => rung_history(trial.trace(), trial.configs(), r),
            None => Vec::new(),
        };
        let mut ids = Vec::with_capacity(n0);
        for _ in 0..n0 {
            let k = trial.configs().len();
            let mut rng = seed::rng(sample_seed(trial.seed().base, k));
            let config = tpe_suggest(&history, space, &settings.tpe, &mut rng);
            fidelity_log.push(fidelity);
            ids.push(trial.add_config(config)?);
        }
        for (i, rung) in bracket.rungs.iter().enumerate() {
            trial.train_to(&ids, rung.rounds)?;
            let keep = bracket.rungs.get(i + 1).map_or(1, |next| next.configs);
            ids = trial.evaluate(&ids, keep)?;
        }
        winners.extend(ids);
    }
    Ok(winners)
}

fn finish_schedule<B: Backend>(
    mut trial: Trial<'_, B>,
    schedule: Schedule,
    winners: &[usize],
    fidelity_log: Vec<Option<usize>>,
) -> Result<TrialOutcome> {
    let best = if trial.mechanism() == Some(Mechanism::OneshotTopK) {
        let top = winners.iter().map(|&id| trial.rounds_of(id)).max().unwrap_or(0);
        let candidates: Vec<usize> = winners
            .iter()
            .copied()
            .filter(|&id| trial.rounds_of(id) == top)
            .collect();
        trial.private_pick(&candidates)?
    } else {
        select_final(trial.trace()).ok_or_else(|| Error::InvalidArgument("empty schedule".into()))?
    };
    let mut out = trial.finish(best, Some(schedule));
    out.sampler_fidelity = fidelity_log;
    Ok(out)
}

/// One successive-halving bracket over the given configs, starting at `r0`
/// rounds and capped at `settings.rounds`.
pub fn sha_run<B: Backend>(
    backend: &B,
    configs: Vec<HpConfig>,
    r0: usize,
    settings: &TunerSettings,
    policy: &EvalPolicy,
    seed_: impl Into<TrialSeed>,
) -> Result<TrialOutcome> {
    let eta = settings.eta;
    if eta < 2 || r0 == 0 || r0 > settings.rounds || configs.is_empty() {
        return Err(Error::InvalidArgument(
            "successive halving needs eta >= 2, 1 <= r0 <= cap and at least one config".into(),
        ));
    }
    let rungs = sha_rungs(configs.len(), eta, r0, settings.rounds);
    let schedule = Schedule {
        brackets: vec![Bracket { s: 0, rungs: rungs.clone() }],
        truncated: false,
    };
    let mut trial = Trial::new(
        backend,
        policy,
        seed_,
        settings.ledger(),
        Mechanism::OneshotTopK,
        schedule.evaluations(),
        schedule.rung_count(),
    )?;
    let mut ids = Vec::new();
    for c in configs {
        ids.push(trial.add_config(c)?);
    }
    for (i, rung) in rungs.iter().enumerate() {
        trial.train_to(&ids, rung.rounds)?;
        let keep = rungs.get(i + 1).map_or(1, |next| next.configs);
        ids = trial.evaluate(&ids, keep)?;
    }
    Ok(trial.finish(ids[0], Some(schedule)))
}

fn run_bracketed<B: Backend>(
    backend: &B,
    space: &SearchSpace,
    settings: &TunerSettings,
    policy: &EvalPolicy,
    seed_: impl Into<TrialSeed>,
    sampler: NewConfigs,
) -> Result<TrialOutcome> {
    let schedule = plan_hyperband(settings.rounds, settings.eta, settings.s_max, settings.total_rounds)?;
    if schedule.brackets.is_empty() {
        return Err(Error::BudgetExhausted {
            requested: settings.rounds,
            remaining: settings.total_rounds,
        });
    }
    let mut trial = Trial::new(
        backend,
        policy,
        seed_,
        settings.ledger(),
        Mechanism::OneshotTopK,
        schedule.evaluations(),
        schedule.rung_count() + 1,
    )?;
    let mut log = Vec::new();
    let winners = run_schedule(&mut trial, space, settings, &schedule, sampler, &mut log)?;
    finish_schedule(trial, schedule, &winners, log)
}

pub fn hyperband_run<B: Backend>(
    backend: &B,
    space: &SearchSpace,
    settings: &TunerSettings,
    policy: &EvalPolicy,
    seed_: impl Into<TrialSeed>,
) -> Result<TrialOutcome> {
    run_bracketed(backend, space, settings, policy, seed_, NewConfigs::Uniform)
}

/// Hyperband whose new configs come from TPE fitted on the highest rung
/// holding at least `n_min` observations.
pub fn bohb_run<B: Backend>(
    backend: &B,
    space: &SearchSpace,
    settings: &TunerSettings,
    policy: &EvalPolicy,
    seed_: impl Into<TrialSeed>,
) -> Result<TrialOutcome> {
    run_bracketed(backend, space, settings, policy, seed_, NewConfigs::Tpe)
}
