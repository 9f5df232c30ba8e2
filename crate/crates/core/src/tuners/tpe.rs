//! Tree-structured Parzen estimator over a [`SearchSpace`].

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::space::{DimensionKind, HpConfig, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpeParams {
    pub gamma: f64,
    pub n_candidates: usize,
    pub n_min: usize,
    /// Lower bound on kernel bandwidth in unit coordinates.
    pub min_bandwidth: f64,
}

impl Default for TpeParams {
    fn default() -> Self {
        TpeParams {
            gamma: 0.25,
            n_candidates: 24,
            n_min: 8,
            min_bandwidth: 0.05,
        }
    }
}

/// Size of the "good" set for `n` observations.
pub fn split_count(n: usize, gamma: f64) -> usize {
    ((gamma * n as f64).ceil() as usize).clamp(1, n.saturating_sub(1).max(1))
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Gaussian mixture on `[0, 1]`, each kernel renormalized to the interval.
#[derive(Debug, Clone, PartialEq)]
struct Parzen {
    centers: Vec<f64>,
    bandwidth: f64,
}

impl Parzen {
    fn fit(centers: Vec<f64>, min_bandwidth: f64) -> Self {
        let n = centers.len() as f64;
        let mean = centers.iter().sum::<f64>() / n;
        let var = if centers.len() > 1 {
            centers.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        // Scott's rule
        let h = 1.06 * var.sqrt() * n.powf(-0.2);
        Parzen {
            centers,
            bandwidth: h.clamp(min_bandwidth, 1.0),
        }
    }

    fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = (2.0 * std::f64::consts::PI).sqrt() * h;
        self.centers
            .iter()
            .map(|&c| {
                let mass = std_normal_cdf((1.0 - c) / h) - std_normal_cdf(-c / h);
                (-0.5 * ((x - c) / h).powi(2)).exp() / (norm * mass)
            })
            .sum::<f64>()
            / self.centers.len() as f64
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let c = self.centers[rng.random_range(0..self.centers.len())];
        for _ in 0..64 {
            let z: f64 = rng.sample(StandardNormal);
            let x = c + self.bandwidth * z;
            if (0.0..=1.0).contains(&x) {
                return x;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Marginal {
    Continuous(Parzen),
    Categorical(Vec<f64>),
    Fixed,
}

/// Product of per-dimension densities fitted to one side of the split.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    marginals: Vec<Marginal>,
}

impl DensityModel {
    fn fit(space: &SearchSpace, configs: &[&HpConfig], min_bandwidth: f64) -> Self {
        let marginals = space
            .dimensions()
            .iter()
            .map(|d| match &d.kind {
                DimensionKind::LogUniform { .. } | DimensionKind::Uniform { .. } => {
                    let centers = configs
                        .iter()
                        .map(|c| {
                            c.get(&d.name)
                                .and_then(|v| d.to_unit(v))
                                .unwrap_or(0.5)
                                .clamp(0.0, 1.0)
                        })
                        .collect();
                    Marginal::Continuous(Parzen::fit(centers, min_bandwidth))
                }
                DimensionKind::Categorical { values } => {
                    let mut counts = vec![1.0; values.len()];
                    for c in configs {
                        if let Some(i) = c.get(&d.name).and_then(|v| values.iter().position(|x| *x == v)) {
                            counts[i] += 1.0;
                        }
                    }
                    let total: f64 = counts.iter().sum();
                    Marginal::Categorical(counts.into_iter().map(|c| c / total).collect())
                }
                DimensionKind::Fixed { .. } => Marginal::Fixed,
            })
            .collect();
        DensityModel { marginals }
    }

    pub fn log_density(&self, space: &SearchSpace, config: &HpConfig) -> f64 {
        space
            .dimensions()
            .iter()
            .zip(&self.marginals)
            .map(|(d, m)| match (m, &d.kind) {
                (Marginal::Continuous(p), _) => {
                    let u = config.get(&d.name).and_then(|v| d.to_unit(v)).unwrap_or(f64::NAN);
                    p.density(u.clamp(0.0, 1.0)).ln()
                }
                (Marginal::Categorical(probs), DimensionKind::Categorical { values }) => config
                    .get(&d.name)
                    .and_then(|v| values.iter().position(|x| *x == v))
                    .map_or(f64::NEG_INFINITY, |i| probs[i].ln()),
                _ => 0.0,
            })
            .sum()
    }

    fn sample<R: Rng + ?Sized>(&self, space: &SearchSpace, rng: &mut R) -> HpConfig {
        let values = space.dimensions().iter().zip(&self.marginals).map(|(d, m)| {
            let v = match (m, &d.kind) {
                (Marginal::Continuous(p), _) => d.from_unit(p.sample(rng)).expect("continuous"),
                (Marginal::Categorical(probs), DimensionKind::Categorical { values }) => {
                    let mut t = rng.random::<f64>();
                    let mut pick = values.len() - 1;
                    for (i, &p) in probs.iter().enumerate() {
                        if t < p {
                            pick = i;
                            break;
                        }
                        t -= p;
                    }
                    values[pick]
                }
                (_, DimensionKind::Fixed { value }) => *value,
                _ => unreachable!("marginal matches its dimension"),
            };
            (d.name.clone(), v)
        });
        HpConfig::from_values(values)
    }
}

/// Good-set density `l` and rest density `g`; `None` when the history is too
/// short or carries no ranking information.
pub fn fit_densities(
    history: &[(HpConfig, f64)],
    space: &SearchSpace,
    params: &TpeParams,
) -> Option<(DensityModel, DensityModel)> {
    let n = history.len();
    if n < params.n_min.max(2) {
        return None;
    }
    let first = history[0].1;
    if history.iter().all(|(_, y)| *y == first) {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| history[a].1.total_cmp(&history[b].1).then(a.cmp(&b)));
    let n_good = split_count(n, params.gamma);
    let good: Vec<&HpConfig> = order[..n_good].iter().map(|&i| &history[i].0).collect();
    let bad: Vec<&HpConfig> = order[n_good..].iter().map(|&i| &history[i].0).collect();
    Some((
        DensityModel::fit(space, &good, params.min_bandwidth),
        DensityModel::fit(space, &bad, params.min_bandwidth),
    ))
}

/// Next config to try given `(config, score)` history, lower scores better.
/// Falls back to a uniform draw, consuming `rng` exactly like
/// [`SearchSpace::sample`], when no model can be fitted.
pub fn tpe_suggest<R: Rng + ?Sized>(
    history: &[(HpConfig, f64)],
    space: &SearchSpace,
    params: &TpeParams,
    rng: &mut R,
) -> HpConfig {
    let Some((good, bad)) = fit_densities(history, space, params) else {
        return space.sample(rng);
    };
    let mut best: Option<(f64, HpConfig)> = None;
    for _ in 0..params.n_candidates.max(1) {
        let cand = good.sample(space, rng);
        let gain = good.log_density(space, &cand) - bad.log_density(space, &cand);
        if best.as_ref().is_none_or(|(b, _)| gain > *b) {
            best = Some((gain, cand));
        }
    }
    best.expect("at least one candidate").1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::space::{default_space, Dimension};

    fn line_space() -> SearchSpace {
        SearchSpace::new(vec![Dimension::new("x", DimensionKind::Uniform { lo: 0.0, hi: 1.0 }).unwrap()])
            .unwrap()
    }

    fn quadratic_history(n: usize, seed_: u64) -> Vec<(HpConfig, f64)> {
        let space = line_space();
        let mut rng = seed::rng(seed_);
        (0..n)
            .map(|_| {
                let c = space.sample(&mut rng);
                let x = c.real("x").unwrap();
                (c, (x - 0.3).powi(2))
            })
            .collect()
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_count(16, 0.25), 4);
        assert_eq!(split_count(8, 0.25), 2);
        assert_eq!(split_count(50, 0.25), 13);
    }

    #[test]
    fn cold_start_matches_uniform_sampling() {
        let space = default_space();
        let p = TpeParams::default();
        let a = tpe_suggest(&[], &space, &p, &mut seed::rng(5));
        assert_eq!(a, space.sample(&mut seed::rng(5)));
        let flat: Vec<(HpConfig, f64)> = (0..20).map(|i| (space.sample(&mut seed::rng(i)), 0.4)).collect();
        let b = tpe_suggest(&flat, &space, &p, &mut seed::rng(6));
        assert_eq!(b, space.sample(&mut seed::rng(6)));
    }

    #[test]
    fn suggestion_is_denser_under_good_model() {
        let space = line_space();
        let p = TpeParams::default();
        for s in 0..10 {
            let hist = quadratic_history(50, s);
            let (good, bad) = fit_densities(&hist, &space, &p).unwrap();
            let x = tpe_suggest(&hist, &space, &p, &mut seed::rng(100 + s));
            assert!(good.log_density(&space, &x) > bad.log_density(&space, &x));
            assert!((x.real("x").unwrap() - 0.3).abs() < 0.25);
        }
    }

    #[test]
    fn truncated_kernel_integrates_to_one() {
        let p = Parzen::fit(vec![0.02, 0.5, 0.97], 0.05);
        let n = 20_000;
        let integral: f64 = (0..n).map(|i| p.density((i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64;
        assert!((integral - 1.0).abs() < 1e-6, "{integral}");
    }

    #[test]
    fn suggestions_stay_in_space() {
        let space = default_space();
        let mut rng = seed::rng(9);
        let hist: Vec<(HpConfig, f64)> = (0..30)
            .map(|_| {
                let c = space.sample(&mut rng);
                let y = c.real("beta1").unwrap();
                (c, y)
            })
            .collect();
        for s in 0..20 {
            let c = tpe_suggest(&hist, &space, &TpeParams::default(), &mut seed::rng(s));
            space.validate(&c).unwrap();
        }
    }
}
