//! Experiment specification files (JSON or TOML).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::{ClientPopulation, FedBackend, PopulationSpec, SurrogateBackend, SurrogateResponse};
use crate::noise::{repartition_iid, EvalPolicy, PrivacyMode, Subsample};
use crate::proxy::MismatchKnobs;
use crate::seed::{self, tag};
use crate::space::{default_space, nested_server_lr_space, SearchSpace};
use crate::tuners::{TunerKind, TunerSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Fedtrain,
    Surrogate,
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedtrain" => Ok(BackendKind::Fedtrain),
            "surrogate" => Ok(BackendKind::Surrogate),
            _ => Err(Error::InvalidSpec(format!("backend must be fedtrain or surrogate, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub backend: BackendKind,
    /// Population for `fedtrain`; for `surrogate` only `n_val` and `seed` are used.
    pub population: PopulationSpec,
    pub clients_per_round: usize,
    /// Client offset spread of a generated surrogate response.
    pub surrogate_offset_sd: f64,
    /// Explicit surrogate response, overriding the generated one.
    pub surrogate: Option<SurrogateResponse>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            backend: BackendKind::Fedtrain,
            population: PopulationSpec::default(),
            clients_per_round: FedBackend::DEFAULT_CLIENTS_PER_ROUND,
            surrogate_offset_sd: 0.03,
            surrogate: None,
        }
    }
}

impl WorkloadSpec {
    pub fn fed_backend(&self) -> Result<FedBackend> {
        let population = self.population.generate()?;
        Ok(self.wrap_population(population))
    }

    pub fn wrap_population(&self, population: ClientPopulation) -> FedBackend {
        let mut b = FedBackend::new(population);
        b.clients_per_round = self.clients_per_round.min(b.population.train_clients.len());
        b
    }

    pub fn surrogate_response(&self, space: &SearchSpace) -> SurrogateResponse {
        self.surrogate.clone().unwrap_or_else(|| {
            SurrogateResponse::random(
                self.population.n_val,
                space.continuous().count(),
                self.surrogate_offset_sd,
                seed::derive(self.population.seed, &[tag::DATA, 3]),
            )
        })
    }

    pub fn surrogate_backend(&self, space: &SearchSpace) -> Result<SurrogateBackend> {
        SurrogateBackend::new(self.surrogate_response(space), space.clone())
    }

    /// `backend` with its validation clients repartitioned to iid fraction `p`.
    pub fn repartitioned(&self, backend: &FedBackend, p: f64, master_seed: u64) -> Result<FedBackend> {
        if p == 0.0 {
            return Ok(backend.clone());
        }
        let mut rng = seed::derive_rng(master_seed, &[tag::REPARTITION, p.to_bits()]);
        let val = repartition_iid(&backend.population.val_clients, p, &mut rng)?;
        Ok(backend.with_val_clients(val))
    }

    fn validate(&self) -> Result<()> {
        self.population
            .validate()
            .map_err(|e| Error::InvalidSpec(format!("workload.population: {e}")))?;
        if self.clients_per_round == 0 {
            return Err(Error::InvalidSpec("clients_per_round must be at least 1".into()));
        }
        if let Some(r) = &self.surrogate {
            r.validate().map_err(|e| Error::InvalidSpec(format!("workload.surrogate: {e}")))?;
        }
        Ok(())
    }

    pub fn n_val(&self) -> usize {
        match (&self.backend, &self.surrogate) {
            (BackendKind::Surrogate, Some(r)) => r.n_val(),
            _ => self.population.n_val,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceSpec {
    /// Narrow the server learning rate to this many decades.
    pub nested_server_lr_width: Option<u32>,
}

impl SpaceSpec {
    pub fn build(&self) -> Result<SearchSpace> {
        match self.nested_server_lr_width {
            None => Ok(default_space()),
            Some(w) => nested_server_lr_space(w).map_err(|e| Error::InvalidSpec(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TunerChoice {
    #[default]
    Rs,
    Hb,
    Tpe,
    Bohb,
    Proxy,
}

impl TunerChoice {
    pub fn kind(self) -> Option<TunerKind> {
        match self {
            TunerChoice::Rs => Some(TunerKind::Rs),
            TunerChoice::Hb => Some(TunerKind::Hb),
            TunerChoice::Tpe => Some(TunerKind::Tpe),
            TunerChoice::Bohb => Some(TunerKind::Bohb),
            TunerChoice::Proxy => None,
        }
    }
}

impl fmt::Display for TunerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            Some(k) => k.fmt(f),
            None => f.write_str("proxy"),
        }
    }
}

impl FromStr for TunerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("proxy") {
            return Ok(TunerChoice::Proxy);
        }
        Ok(match s.parse::<TunerKind>()? {
            TunerKind::Rs => TunerChoice::Rs,
            TunerKind::Hb => TunerChoice::Hb,
            TunerKind::Tpe => TunerChoice::Tpe,
            TunerKind::Bohb => TunerChoice::Bohb,
        })
    }
}

/// Total privacy budget; infinity (written `"inf"`) disables privacy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epsilon(pub f64);

impl Epsilon {
    pub const INF: Epsilon = Epsilon(f64::INFINITY);
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Epsilon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Epsilon::INF);
        }
        match t.parse::<f64>() {
            Ok(x) if x > 0.0 => Ok(Epsilon(x)),
            _ => Err(Error::InvalidSpec(format!("epsilon must be positive or \"inf\", got {s:?}"))),
        }
    }
}

impl Serialize for Epsilon {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            ser.serialize_str("inf")
        } else {
            ser.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(x) if x > 0.0 => Ok(Epsilon(x)),
            Raw::Num(x) => Err(serde::de::Error::custom(format!("epsilon must be positive, got {x}"))),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Lists of policy values; the experiment runs their Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub subsample: Vec<Subsample>,
    pub bias_b: Vec<f64>,
    pub iid_p: Vec<f64>,
    pub epsilon: Vec<Epsilon>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            subsample: vec![Subsample::Full],
            bias_b: vec![0.0],
            iid_p: vec![0.0],
            epsilon: vec![Epsilon::INF],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub subsample: Subsample,
    pub bias_b: f64,
    pub iid_p: f64,
    pub epsilon: Epsilon,
}

impl GridPoint {
    /// Stable identity of the point, independent of the rest of the spec.
    pub fn hash(&self) -> u64 {
        seed::fnv1a(serde_json::to_string(self).expect("grid point serializes").as_bytes())
    }

    pub fn policy(&self, spec: &ExperimentSpec) -> EvalPolicy {
        EvalPolicy {
            subsample: self.subsample,
            bias_b: self.bias_b,
            bias_delta: spec.bias_delta,
            iid_p: self.iid_p,
            epsilon: self.epsilon.0.is_finite().then_some(self.epsilon.0),
            privacy_mode: spec.privacy_mode,
        }
    }
}

impl GridSpec {
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &subsample in &self.subsample {
            for &bias_b in &self.bias_b {
                for &iid_p in &self.iid_p {
                    for &epsilon in &self.epsilon {
                        out.push(GridPoint {
                            subsample,
                            bias_b,
                            iid_p,
                            epsilon,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub workload: WorkloadSpec,
    pub space: SpaceSpec,
    pub tuner: TunerChoice,
    pub grid: GridSpec,
    pub privacy_mode: PrivacyMode,
    pub bias_delta: f64,
    pub trials: usize,
    pub pool_size: usize,
    pub k: usize,
    pub master_seed: u64,
    /// Budget and tuner knobs; `k` above overrides `tuning.k`.
    pub tuning: TunerSettings,
    /// Proxy population relative to the workload population (`proxy` tuner).
    pub proxy: MismatchKnobs,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            workload: WorkloadSpec::default(),
            space: SpaceSpec::default(),
            tuner: TunerChoice::Rs,
            grid: GridSpec::default(),
            privacy_mode: PrivacyMode::Auto,
            bias_delta: crate::noise::policy::DEFAULT_BIAS_DELTA,
            trials: 100,
            pool_size: 128,
            k: 16,
            master_seed: 0,
            tuning: TunerSettings::default(),
            proxy: MismatchKnobs::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    /// Reads a spec; `.toml` files are TOML, anything else JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    pub fn settings(&self) -> TunerSettings {
        TunerSettings {
            k: self.k,
            ..self.tuning
        }
    }

    /// Checkpoints cached per pool config: the successive-halving ladder
    /// below the per-config cap.
    pub fn checkpoints(&self) -> Vec<usize> {
        let s = self.settings();
        (0..=s.s_max)
            .rev()
            .map(|i| s.rounds / s.eta.pow(i as u32))
            .filter(|&r| r > 0)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        self.workload.validate()?;
        let space = self.space.build()?;
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.k == 0 || self.pool_size < self.k {
            return bad(format!("need 1 <= k <= pool_size, got k = {} and pool_size = {}", self.k, self.pool_size));
        }
        let s = self.settings();
        if s.eta < 2 || s.rounds == 0 {
            return bad("tuning.eta must be >= 2 and tuning.rounds >= 1".into());
        }
        if matches!(self.tuner, TunerChoice::Rs | TunerChoice::Tpe | TunerChoice::Proxy)
            && self.k * s.rounds > s.total_rounds
        {
            return Err(Error::BudgetExhausted {
                requested: self.k * s.rounds,
                remaining: s.total_rounds,
            });
        }
        let g = &self.grid;
        if g.subsample.is_empty() || g.bias_b.is_empty() || g.iid_p.is_empty() || g.epsilon.is_empty() {
            return bad("every policy grid list needs at least one value".into());
        }
        let n_val = self.workload.n_val();
        for point in g.points() {
            point
                .policy(self)
                .validate(n_val)
                .map_err(|e| Error::InvalidSpec(format!("grid point {point:?}: {e}")))?;
            if point.iid_p > 0.0 && self.workload.backend == BackendKind::Surrogate {
                return bad("iid_p > 0 needs client data; the surrogate backend has none".into());
            }
        }
        if self.workload.backend == BackendKind::Surrogate {
            let r = self.workload.surrogate_response(&space);
            if r.optimum.len() != space.continuous().count() {
                return bad(format!(
                    "surrogate has {} dimensions, space has {} continuous ones",
                    r.optimum.len(),
                    space.continuous().count()
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let toml = r#"
            tuner = "hb"
            trials = 8
            master_seed = 3
            [workload]
            backend = "surrogate"
            [workload.population]
            n_val = 50
            [grid]
            subsample = ["1%", 10, "full"]
            epsilon = ["inf", 100.0]
        "#;
        let a = ExperimentSpec::from_toml(toml).unwrap();
        let b = ExperimentSpec::from_json(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tuner, TunerChoice::Hb);
        assert_eq!(a.grid.points().len(), 6);
        assert_eq!(a.grid.epsilon[0], Epsilon::INF);
        a.validate().unwrap();
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = ExperimentSpec::default();
        s.grid.epsilon.clear();
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        let mut s = ExperimentSpec::default();
        s.grid.subsample = vec![Subsample::Count(1000)];
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::default();
        s.k = 200;
        assert!(s.validate().is_err());
        assert!(ExperimentSpec::from_json(r#"{"tunr": "rs"}"#).is_err());
        let mut s = ExperimentSpec::default();
        s.workload.backend = BackendKind::Surrogate;
        s.grid.iid_p = vec![0.5];
        assert!(s.validate().is_err());
    }

    #[test]
    fn checkpoint_ladder() {
        assert_eq!(ExperimentSpec::default().checkpoints(), vec![5, 15, 45, 135, 405]);
    }

    #[test]
    fn grid_hash_depends_only_on_point() {
        let p = ExperimentSpec::default().grid.points()[0];
        let mut q = p;
        assert_eq!(p.hash(), q.hash());
        q.bias_b = 1.0;
        assert_ne!(p.hash(), q.hash());
    }
}
