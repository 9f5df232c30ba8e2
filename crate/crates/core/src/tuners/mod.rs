//! Hyperparameter tuners with round-denominated budgets: random search,
//! successive halving / Hyperband, TPE and BOHB.

pub mod budget;
pub mod hyperband;
pub mod random;
pub mod tpe;
pub mod trial;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use budget::BudgetLedger;
pub use hyperband::{bohb_run, hyperband_run, plan_hyperband, sha_run, sha_rungs, Bracket, Rung, Schedule};
pub use random::{rs_over, rs_run, tpe_run};
pub use tpe::{tpe_suggest, TpeParams};
pub use trial::{Observation, Trial, TrialOutcome, TrialSeed};

use crate::error::{Error, Result};
use crate::fed::Backend;
use crate::noise::EvalPolicy;
use crate::space::SearchSpace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TunerSettings {
    /// Configs searched by RS and TPE.
    pub k: usize,
    /// Rounds per config for RS/TPE, and the per-config cap everywhere.
    pub rounds: usize,
    pub eta: usize,
    pub s_max: usize,
    pub total_rounds: usize,
    pub tpe: TpeParams,
}

impl Default for TunerSettings {
    fn default() -> Self {
        TunerSettings {
            k: 16,
            rounds: budget::DEFAULT_PER_CONFIG_CAP,
            eta: 3,
            s_max: 4,
            total_rounds: budget::DEFAULT_TOTAL_ROUNDS,
            tpe: TpeParams::default(),
        }
    }
}

impl TunerSettings {
    pub fn ledger(&self) -> BudgetLedger {
        BudgetLedger::new(self.total_rounds, self.rounds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TunerKind {
    Rs,
    Hb,
    Tpe,
    Bohb,
}

impl TunerKind {
    pub const ALL: [TunerKind; 4] = [TunerKind::Rs, TunerKind::Hb, TunerKind::Tpe, TunerKind::Bohb];
}

impl fmt::Display for TunerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TunerKind::Rs => "rs",
            TunerKind::Hb => "hb",
            TunerKind::Tpe => "tpe",
            TunerKind::Bohb => "bohb",
        })
    }
}

impl FromStr for TunerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rs" => Ok(TunerKind::Rs),
            "hb" | "hyperband" => Ok(TunerKind::Hb),
            "tpe" => Ok(TunerKind::Tpe),
            "bohb" => Ok(TunerKind::Bohb),
            _ => Err(Error::InvalidSpec(format!("unknown tuner {s:?}"))),
        }
    }
}

pub fn run_tuner<B: Backend>(
    kind: TunerKind,
    backend: &B,
    space: &SearchSpace,
    settings: &TunerSettings,
    policy: &EvalPolicy,
    seed: impl Into<TrialSeed>,
) -> Result<TrialOutcome> {
    let seed = seed.into();
    match kind {
        TunerKind::Rs => rs_run(backend, space, settings, policy, seed),
        TunerKind::Hb => hyperband_run(backend, space, settings, policy, seed),
        TunerKind::Tpe => tpe_run(backend, space, settings, policy, seed),
        TunerKind::Bohb => bohb_run(backend, space, settings, policy, seed),
    }
}

/// Config the tuner reports: lowest latest score among configs observed at
/// the highest fidelity present, ties to the earliest id.
pub fn select_final(trace: &[Observation]) -> Option<usize> {
    let top = trace.iter().map(|o| o.rounds).max()?;
    let mut latest: BTreeMap<usize, &Observation> = BTreeMap::new();
    for o in trace {
        latest.insert(o.config_id, o);
    }
    latest
        .into_values()
        .filter(|o| o.rounds == top)
        .min_by(|a, b| a.score.total_cmp(&b.score).then(a.config_id.cmp(&b.config_id)))
        .map(|o| o.config_id)
}
