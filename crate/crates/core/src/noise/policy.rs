use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::privacy::{Mechanism, PrivacyLedger};
use super::sampling::biased_sample;
use crate::error::{Error, Result};
use crate::fed::aggregate_error;

pub const DEFAULT_BIAS_DELTA: f64 = 1e-4;

/// How many validation clients an evaluation sees.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Subsample {
    #[default]
    Full,
    Count(usize),
    /// Fraction of the validation population, rounded, at least one client.
    Fraction(f64),
}

impl Subsample {
    pub fn size(self, n_val: usize) -> usize {
        match self {
            Subsample::Full => n_val,
            Subsample::Count(s) => s,
            Subsample::Fraction(f) => ((f * n_val as f64).round() as usize).max(1),
        }
    }
}

impl fmt::Display for Subsample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subsample::Full => f.write_str("full"),
            Subsample::Count(s) => write!(f, "{s}"),
            Subsample::Fraction(x) => write!(f, "{}%", x * 100.0),
        }
    }
}

impl FromStr for Subsample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("full") {
            return Ok(Subsample::Full);
        }
        if let Some(pct) = s.strip_suffix('%') {
            let x: f64 = pct
                .trim()
                .parse()
                .map_err(|_| Error::InvalidSpec(format!("bad subsample percentage {s:?}")))?;
            if !(x > 0.0 && x <= 100.0) {
                return Err(Error::InvalidSpec(format!("subsample percentage {s:?} out of range")));
            }
            return Ok(Subsample::Fraction(x / 100.0));
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Subsample::Count(n)),
            _ => Err(Error::InvalidSpec(format!(
                "subsample must be \"full\", a positive count or a percentage, got {s:?}"
            ))),
        }
    }
}

impl Serialize for Subsample {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Subsample::Count(n) => ser.serialize_u64(*n as u64),
            other => ser.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Subsample {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Int(0) => Err(serde::de::Error::custom("subsample count must be positive")),
            Raw::Int(n) => Ok(Subsample::Count(n as usize)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyMode {
    /// The tuner's natural mechanism: per-evaluation for RS/TPE, one-shot
    /// top-k for the successive-halving family.
    #[default]
    Auto,
    Off,
    PerEval,
    OneshotTopk,
}

impl FromStr for PrivacyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(PrivacyMode::Auto),
            "off" => Ok(PrivacyMode::Off),
            "per_eval" => Ok(PrivacyMode::PerEval),
            "oneshot_topk" => Ok(PrivacyMode::OneshotTopk),
            _ => Err(Error::InvalidSpec(format!(
                "privacy_mode must be one of auto, off, per_eval, oneshot_topk; got {s:?}"
            ))),
        }
    }
}

/// Composable evaluation-noise configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalPolicy {
    pub subsample: Subsample,
    pub bias_b: f64,
    pub bias_delta: f64,
    /// Fraction of validation data resampled iid; applied once per experiment
    /// to the population, not per evaluation.
    pub iid_p: f64,
    /// Total privacy budget; `None` or infinity means no privacy.
    pub epsilon: Option<f64>,
    pub privacy_mode: PrivacyMode,
}

impl Default for EvalPolicy {
    fn default() -> Self {
        EvalPolicy {
            subsample: Subsample::Full,
            bias_b: 0.0,
            bias_delta: DEFAULT_BIAS_DELTA,
            iid_p: 0.0,
            epsilon: None,
            privacy_mode: PrivacyMode::Auto,
        }
    }
}

impl EvalPolicy {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn subsampled(subsample: Subsample) -> Self {
        EvalPolicy {
            subsample,
            ..Self::default()
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    pub fn validate(&self, n_val: usize) -> Result<()> {
        let s = self.subsample.size(n_val);
        if s == 0 || s > n_val {
            return Err(Error::InvalidSpec(format!(
                "subsample {} exceeds the {n_val} validation clients",
                self.subsample
            )));
        }
        if !(self.bias_b >= 0.0) {
            return Err(Error::InvalidSpec(format!("bias_b must be >= 0, got {}", self.bias_b)));
        }
        if !(self.bias_delta > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "bias_delta must be > 0, got {}",
                self.bias_delta
            )));
        }
        if !(0.0..=1.0).contains(&self.iid_p) {
            return Err(Error::InvalidSpec(format!("iid_p must be in [0, 1], got {}", self.iid_p)));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) {
                return Err(Error::InvalidSpec(format!("epsilon must be positive, got {eps}")));
            }
        }
        Ok(())
    }

    /// Whether evaluations are privatized at all.
    pub fn is_private(&self) -> bool {
        self.privacy_mode != PrivacyMode::Off && self.epsilon.is_some_and(f64::is_finite)
    }

    /// Mechanism to use, given the tuner's natural one.
    pub fn mechanism(&self, natural: Mechanism) -> Option<Mechanism> {
        if !self.is_private() {
            return None;
        }
        Some(match self.privacy_mode {
            PrivacyMode::PerEval => Mechanism::PerEval,
            PrivacyMode::OneshotTopk => Mechanism::OneshotTopK,
            _ => natural,
        })
    }

    /// True when nothing perturbs the evaluation.
    pub fn is_noiseless(&self) -> bool {
        self.subsample == Subsample::Full && !self.is_private()
    }
}

/// Samples clients under the policy and aggregates their errors, without
/// any privacy noise. Sampling is biased by accuracy `1 - error` when
/// `bias_b > 0`; weights are uniform whenever the policy is private.
pub fn subsample_score<R: Rng + ?Sized>(
    client_errors: &[f64],
    weights: &[f64],
    policy: &EvalPolicy,
    rng: &mut R,
) -> Result<f64> {
    let n = client_errors.len();
    let s = policy.subsample.size(n);
    let uniform = policy.is_private();
    if s == n {
        // full evaluation: no client draw needed
        return if uniform {
            aggregate_error(client_errors, &vec![1.0; n])
        } else {
            aggregate_error(client_errors, weights)
        };
    }
    let accuracies: Vec<f64> = client_errors.iter().map(|e| 1.0 - e).collect();
    let chosen = biased_sample(&accuracies, policy.bias_b, policy.bias_delta, s, rng)?;
    let errors: Vec<f64> = chosen.iter().map(|&k| client_errors[k]).collect();
    let w: Vec<f64> = if uniform {
        vec![1.0; s]
    } else {
        chosen.iter().map(|&k| weights[k]).collect()
    };
    aggregate_error(&errors, &w)
}

/// Subsampled, possibly biased, possibly privatized evaluation. A ledger is
/// only consulted when it uses the per-evaluation mechanism; one-shot
/// releases happen at selection time instead.
pub fn noisy_evaluate<R: Rng + ?Sized>(
    client_errors: &[f64],
    weights: &[f64],
    policy: &EvalPolicy,
    ledger: Option<&mut PrivacyLedger>,
    rng: &mut R,
) -> Result<f64> {
    let raw = subsample_score(client_errors, weights, policy, rng)?;
    match ledger {
        Some(l) if policy.is_private() && l.mechanism == Mechanism::PerEval => {
            l.release(raw, policy.subsample.size(client_errors.len()), rng)
        }
        _ => Ok(raw),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn errors() -> (Vec<f64>, Vec<f64>) {
        let e: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let w: Vec<f64> = (0..50).map(|i| 1.0 + i as f64).collect();
        (e, w)
    }

    #[test]
    fn noiseless_policy_is_full_validation() {
        let (e, w) = errors();
        let got = noisy_evaluate(&e, &w, &EvalPolicy::noiseless(), None, &mut seed::rng(0)).unwrap();
        assert_eq!(got, aggregate_error(&e, &w).unwrap());
    }

    #[test]
    fn single_client_policy_returns_one_clients_error() {
        let (e, w) = errors();
        let p = EvalPolicy::subsampled(Subsample::Count(1));
        let mut rng = seed::rng(1);
        for _ in 0..50 {
            let v = noisy_evaluate(&e, &w, &p, None, &mut rng).unwrap();
            assert!(e.iter().any(|x| (x - v).abs() < 1e-15));
        }
    }

    #[test]
    fn privacy_forces_uniform_weights() {
        let (e, w) = errors();
        let p = EvalPolicy::noiseless().with_epsilon(f64::MAX);
        assert!(p.is_private());
        let got = subsample_score(&e, &w, &p, &mut seed::rng(2)).unwrap();
        let uniform = e.iter().sum::<f64>() / e.len() as f64;
        assert!((got - uniform).abs() < 1e-12);
        assert!(!EvalPolicy::noiseless().with_epsilon(f64::INFINITY).is_private());
    }

    #[test]
    fn per_eval_release_charges_ledger() {
        let (e, w) = errors();
        let p = EvalPolicy::subsampled(Subsample::Count(5)).with_epsilon(1.0);
        let mut ledger = PrivacyLedger::new(Mechanism::PerEval, 1.0, 2).unwrap();
        let mut rng = seed::rng(3);
        noisy_evaluate(&e, &w, &p, Some(&mut ledger), &mut rng).unwrap();
        noisy_evaluate(&e, &w, &p, Some(&mut ledger), &mut rng).unwrap();
        assert!(matches!(
            noisy_evaluate(&e, &w, &p, Some(&mut ledger), &mut rng),
            Err(Error::PrivacyExhausted { .. })
        ));
    }

    #[test]
    fn subsample_parsing() {
        assert_eq!("full".parse::<Subsample>().unwrap(), Subsample::Full);
        assert_eq!("10".parse::<Subsample>().unwrap(), Subsample::Count(10));
        assert_eq!("1%".parse::<Subsample>().unwrap(), Subsample::Fraction(0.01));
        assert_eq!(Subsample::Fraction(0.01).size(100), 1);
        assert_eq!(Subsample::Fraction(0.001).size(100), 1);
        assert!("0".parse::<Subsample>().is_err());
        assert!("lots".parse::<Subsample>().is_err());
        let json = serde_json::to_string(&[Subsample::Full, Subsample::Count(3)]).unwrap();
        assert_eq!(json, r#"["full",3]"#);
        let back: Vec<Subsample> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![Subsample::Full, Subsample::Count(3)]);
    }

    #[test]
    fn validation() {
        assert!(EvalPolicy::subsampled(Subsample::Count(101)).validate(100).is_err());
        let mut p = EvalPolicy::noiseless();
        p.iid_p = 1.5;
        assert!(p.validate(10).is_err());
        assert!(EvalPolicy::noiseless().with_epsilon(-1.0).validate(10).is_err());
        assert!(EvalPolicy::noiseless().validate(10).is_ok());
    }
}
