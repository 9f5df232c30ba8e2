//! Tuning on public server-side proxy data, and how well configs transfer
//! between populations.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fed::{Backend, ClientPopulation, PopulationSpec};
use crate::noise::EvalPolicy;
use crate::space::{HpConfig, SearchSpace};
use crate::stats::spearman;
use crate::tuners::trial::train_seed;
use crate::tuners::{rs_run, TrialOutcome, TunerSettings};

/// How the proxy population's generation parameters differ from the target's.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MismatchKnobs {
    /// Added to the target's prototype rotation (radians).
    pub rotation: f64,
    pub alpha: Option<f64>,
    pub classes: Option<usize>,
    pub seed: Option<u64>,
}

impl MismatchKnobs {
    pub fn apply(&self, target: &PopulationSpec) -> PopulationSpec {
        PopulationSpec {
            rotation: target.rotation + self.rotation,
            alpha: self.alpha.unwrap_or(target.alpha),
            classes: self.classes.unwrap_or(target.classes),
            seed: self.seed.unwrap_or(target.seed),
            ..target.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PopulationPair {
    pub proxy: ClientPopulation,
    pub target: ClientPopulation,
    pub knobs: MismatchKnobs,
}

impl PopulationPair {
    pub fn generate(target: &PopulationSpec, knobs: MismatchKnobs) -> Result<Self> {
        Ok(PopulationPair {
            proxy: knobs.apply(target).generate()?,
            target: target.generate()?,
            knobs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyOutcome {
    pub config: HpConfig,
    /// Full record of the noiseless search on the proxy.
    pub proxy_trial: TrialOutcome,
    /// Full-validation error of the winner trained on the target.
    pub target_error: f64,
}

/// Random search trained and evaluated entirely on `proxy` (always full,
/// noiseless evaluation), then the winner trained once on `target`.
///
/// The winner trains on the target with the same stream it would get as
/// config `best_id` of a target-side [`rs_run`] under `seed`.
pub fn oneshot_proxy_rs<P: Backend, T: Backend>(
    proxy: &P,
    target: &T,
    space: &SearchSpace,
    settings: &TunerSettings,
    seed: u64,
) -> Result<ProxyOutcome> {
    let proxy_trial = rs_run(proxy, space, settings, &EvalPolicy::noiseless(), seed)?;
    let config = proxy_trial.best_config.clone();
    let model = target.train_fresh(&config, settings.rounds, train_seed(seed, proxy_trial.best_id))?;
    Ok(ProxyOutcome {
        config,
        target_error: target.full_error(&model),
        proxy_trial,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub config_id: usize,
    pub error_a: f64,
    pub error_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatter {
    pub points: Vec<ScatterPoint>,
    pub spearman: f64,
}

impl Scatter {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "config_id,error_a,error_b")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.config_id, p.error_a, p.error_b)?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.points.len(),
            "spearman": if self.spearman.is_finite() { Some(self.spearman) } else { None },
        })
    }

    /// Pairs with the two populations swapped.
    pub fn transposed(&self) -> Scatter {
        Scatter {
            points: self
                .points
                .iter()
                .map(|p| ScatterPoint {
                    config_id: p.config_id,
                    error_a: p.error_b,
                    error_b: p.error_a,
                })
                .collect(),
            spearman: self.spearman,
        }
    }
}

/// Trains every config separately on both populations. Config `i` trains on
/// population `a` with stream `train_seed(seed_a, i)`, likewise for `b`, so
/// passing the same seed twice shares training randomness.
pub fn transfer_scatter<A: Backend, B: Backend>(
    configs: &[HpConfig],
    a: &A,
    seed_a: u64,
    b: &B,
    seed_b: u64,
    rounds: usize,
) -> Result<Scatter> {
    if configs.is_empty() {
        return Err(crate::Error::InvalidArgument("transfer scatter needs configs".into()));
    }
    let points = configs
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let ma = a.train_fresh(c, rounds, train_seed(seed_a, i))?;
            let mb = b.train_fresh(c, rounds, train_seed(seed_b, i))?;
            Ok(ScatterPoint {
                config_id: i,
                error_a: a.full_error(&ma),
                error_b: b.full_error(&mb),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xa: Vec<f64> = points.iter().map(|p| p.error_a).collect();
    let xb: Vec<f64> = points.iter().map(|p| p.error_b).collect();
    Ok(Scatter {
        spearman: spearman(&xa, &xb),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knobs_only_touch_what_they_name() {
        let t = PopulationSpec::default();
        assert_eq!(MismatchKnobs::default().apply(&t), t);
        let p = MismatchKnobs {
            rotation: 0.3,
            classes: Some(5),
            ..Default::default()
        }
        .apply(&t);
        assert_eq!(p.classes, 5);
        assert_eq!(p.rotation, 0.3);
        assert_eq!(p.alpha, t.alpha);
    }

    #[test]
    fn csv_layout() {
        let s = Scatter {
            points: vec![ScatterPoint {
                config_id: 0,
                error_a: 0.25,
                error_b: 0.5,
            }],
            spearman: f64::NAN,
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "config_id,error_a,error_b\n0,0.25,0.5\n");
        assert_eq!(s.summary_json()["spearman"], serde_json::Value::Null);
    }
}
