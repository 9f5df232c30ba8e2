//! Laplace releases of evaluation scores under basic composition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Draws from `Laplace(0, scale)` by inverting the CDF.
pub fn laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    // u in (-1/2, 1/2]; 1 - 2|u| stays in [0, 1)
    let u: f64 = 0.5 - rng.random::<f64>();
    let tail = 1.0 - 2.0 * u.abs();
    if tail <= 0.0 {
        return 0.0;
    }
    -scale * u.signum() * tail.ln()
}

/// Noise scale of a per-evaluation release: `M / (epsilon |S|)`.
pub fn per_eval_scale(total_evaluations: usize, epsilon: f64, subsample: usize) -> f64 {
    total_evaluations as f64 / (epsilon * subsample as f64)
}

/// Noise scale of one one-shot top-k round: `2 T k / (epsilon |S|)`.
pub fn oneshot_scale(rounds: usize, k: usize, epsilon: f64, subsample: usize) -> f64 {
    2.0 * rounds as f64 * k as f64 / (epsilon * subsample as f64)
}

/// `value + Lap(sensitivity / eps_per_query)`, unclamped.
pub fn private_release<R: Rng + ?Sized>(
    value: f64,
    sensitivity: f64,
    eps_per_query: f64,
    rng: &mut R,
) -> f64 {
    value + laplace(sensitivity / eps_per_query, rng)
}

/// Adds one Laplace draw to every score and returns the noisy scores.
pub fn oneshot_noisy_scores<R: Rng + ?Sized>(scores: &[f64], scale: f64, rng: &mut R) -> Vec<f64> {
    scores.iter().map(|&s| s + laplace(scale, rng)).collect()
}

/// Indices of the `k` lowest scores, ties to the lower index.
pub fn lowest_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// One-shot Laplace top-k over error scores (lower is better), without
/// budget tracking. See [`PrivacyLedger::topk_round`] for the accounted form.
pub fn oneshot_topk<R: Rng + ?Sized>(
    scores: &[f64],
    k: usize,
    rounds: usize,
    epsilon: f64,
    subsample: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::InvalidArgument(format!(
            "top-k size {k} must be in 1..={}",
            scores.len()
        )));
    }
    let noisy = oneshot_noisy_scores(scores, oneshot_scale(rounds, k, epsilon, subsample), rng);
    Ok(lowest_k(&noisy, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// Every evaluation is released with `Lap(M / (eps |S|))`.
    PerEval,
    /// Every selection round releases top-k identities with `Lap(2 T k / (eps |S|))`.
    OneshotTopK,
}

/// Append-only accounting of a fixed privacy budget split evenly over
/// `capacity` releases (evaluations or rounds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub capacity: usize,
    consumed: usize,
}

impl PrivacyLedger {
    pub fn new(mechanism: Mechanism, epsilon: f64, capacity: usize) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        if capacity == 0 {
            return Err(Error::InvalidArgument("privacy capacity must be at least 1".into()));
        }
        Ok(PrivacyLedger {
            mechanism,
            epsilon,
            capacity,
            consumed: 0,
        })
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    /// Epsilon spent so far, `epsilon * consumed / capacity`.
    pub fn epsilon_spent(&self) -> f64 {
        if self.epsilon.is_infinite() {
            return if self.consumed == 0 { 0.0 } else { f64::INFINITY };
        }
        self.epsilon * self.consumed as f64 / self.capacity as f64
    }

    pub fn epsilon_per_release(&self) -> f64 {
        self.epsilon / self.capacity as f64
    }

    fn charge(&mut self) -> Result<()> {
        if self.consumed >= self.capacity {
            return Err(Error::PrivacyExhausted {
                capacity: self.capacity,
            });
        }
        self.consumed += 1;
        Ok(())
    }

    /// Per-evaluation release of an average over `subsample` clients.
    pub fn release<R: Rng + ?Sized>(&mut self, value: f64, subsample: usize, rng: &mut R) -> Result<f64> {
        self.charge()?;
        let sensitivity = 1.0 / subsample as f64;
        Ok(private_release(value, sensitivity, self.epsilon_per_release(), rng))
    }

    /// One accounted one-shot round: returns the noisy scores and the indices
    /// of the `k` best.
    pub fn topk_round<R: Rng + ?Sized>(
        &mut self,
        scores: &[f64],
        k: usize,
        subsample: usize,
        rng: &mut R,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        if k == 0 || k > scores.len() {
            return Err(Error::InvalidArgument(format!(
                "top-k size {k} must be in 1..={}",
                scores.len()
            )));
        }
        self.charge()?;
        let scale = oneshot_scale(self.capacity, k, self.epsilon, subsample);
        let noisy = oneshot_noisy_scores(scores, scale, rng);
        Ok((lowest_k(&noisy, k), noisy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn scale_arithmetic() {
        assert!((per_eval_scale(16, 100.0, 4) - 0.04).abs() < 1e-15);
        assert!((oneshot_scale(5, 3, 10.0, 10) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn infinite_epsilon_is_exact() {
        let mut rng = seed::rng(0);
        assert_eq!(private_release(0.37, 0.25, f64::INFINITY, &mut rng), 0.37);
        for _ in 0..100 {
            let scores: Vec<f64> = (0..20).map(|_| rng.random()).collect();
            let k = rng.random_range(1..=20);
            let got = oneshot_topk(&scores, k, 5, f64::INFINITY, 3, &mut rng).unwrap();
            assert_eq!(got, lowest_k(&scores, k));
        }
    }

    #[test]
    fn laplace_moments() {
        let mut rng = seed::rng(1);
        let scale = 0.04;
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| private_release(0.3, 0.25, 6.25, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = 2.0 * scale * scale;
        assert!((var / expected - 1.0).abs() < 0.05, "var {var} vs {expected}");
        let se = (expected / n as f64).sqrt();
        assert!((mean - 0.3).abs() < 3.0 * se);
    }

    #[test]
    fn ledger_stops_at_capacity() {
        let mut ledger = PrivacyLedger::new(Mechanism::PerEval, 1.0, 3).unwrap();
        let mut rng = seed::rng(2);
        for _ in 0..3 {
            ledger.release(0.5, 1, &mut rng).unwrap();
            assert!(ledger.epsilon_spent() <= 1.0);
        }
        assert_eq!(ledger.epsilon_spent(), 1.0);
        assert!(matches!(
            ledger.release(0.5, 1, &mut rng),
            Err(Error::PrivacyExhausted { capacity: 3 })
        ));
        assert_eq!(ledger.consumed(), 3);
    }

    #[test]
    fn topk_rounds_are_accounted() {
        let mut ledger = PrivacyLedger::new(Mechanism::OneshotTopK, 10.0, 2).unwrap();
        let mut rng = seed::rng(3);
        ledger.topk_round(&[0.1, 0.2, 0.3], 2, 10, &mut rng).unwrap();
        ledger.topk_round(&[0.1, 0.2, 0.3], 1, 10, &mut rng).unwrap();
        assert!(ledger.topk_round(&[0.1], 1, 10, &mut rng).is_err());
        assert!(PrivacyLedger::new(Mechanism::PerEval, 0.0, 1).is_err());
    }

    #[test]
    fn heavy_noise_makes_selection_a_coin_flip() {
        let mut rng = seed::rng(4);
        let trials = 100_000;
        let wins = (0..trials)
            .filter(|_| oneshot_topk(&[0.1, 0.9], 1, 1, 0.1, 1, &mut rng).unwrap()[0] == 0)
            .count();
        let rate = wins as f64 / trials as f64;
        assert!((rate - 0.5).abs() < 0.02, "{rate}");
    }
}
