use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOTAL_ROUNDS: usize = 6480;
pub const DEFAULT_PER_CONFIG_CAP: usize = 405;

/// Round-denominated training budget. Evaluation rounds are free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub total_rounds: usize,
    pub per_config_cap: usize,
    consumed: usize,
    per_config: BTreeMap<usize, usize>,
}

impl Default for BudgetLedger {
    fn default() -> Self {
        BudgetLedger::new(DEFAULT_TOTAL_ROUNDS, DEFAULT_PER_CONFIG_CAP)
    }
}

impl BudgetLedger {
    pub fn new(total_rounds: usize, per_config_cap: usize) -> Self {
        BudgetLedger {
            total_rounds,
            per_config_cap,
            consumed: 0,
            per_config: BTreeMap::new(),
        }
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn remaining(&self) -> usize {
        self.total_rounds - self.consumed
    }

    pub fn config_rounds(&self, config: usize) -> usize {
        self.per_config.get(&config).copied().unwrap_or(0)
    }

    pub fn per_config(&self) -> &BTreeMap<usize, usize> {
        &self.per_config
    }

    pub fn check(&self, config: usize, rounds: usize) -> Result<()> {
        if rounds > self.remaining() {
            return Err(Error::BudgetExhausted {
                requested: rounds,
                remaining: self.remaining(),
            });
        }
        let after = self.config_rounds(config) + rounds;
        if after > self.per_config_cap {
            return Err(Error::ConfigCapExceeded {
                config,
                rounds: after,
                cap: self.per_config_cap,
            });
        }
        Ok(())
    }

    /// Records `rounds` more rounds for `config`; all-or-nothing.
    pub fn charge(&mut self, config: usize, rounds: usize) -> Result<()> {
        self.check(config, rounds)?;
        self.consumed += rounds;
        *self.per_config.entry(config).or_insert(0) += rounds;
        Ok(())
    }

    /// `consumed == sum(per_config) <= total` and every config within the cap.
    pub fn is_consistent(&self) -> bool {
        self.per_config.values().sum::<usize>() == self.consumed
            && self.consumed <= self.total_rounds
            && self.per_config.values().all(|&r| r <= self.per_config_cap)
    }
}
