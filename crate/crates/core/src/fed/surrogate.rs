//! Deterministic closed-form stand-in for federated training.
//!
//! Client `k` sees
//!
//! ```text
//! clamp01(base + sum_i c_i (u_i - o_i - s_ki)^2 + offset_k) * (floor + (1 - floor) 2^(-r / halflife))
//! ```
//!
//! where `u` are the config's unit-cube coordinates (log scale for
//! log-uniform dims), `o` the optimum, `s_k` an optional per-client shift of
//! the optimum and `r` the number of training rounds.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateResponse {
    pub base: f64,
    /// Optimum in unit coordinates, one entry per continuous dimension.
    pub optimum: Vec<f64>,
    pub curvature: Vec<f64>,
    pub per_client_offset: Vec<f64>,
    /// Per-client displacement of the optimum. Empty means no displacement.
    #[serde(default)]
    pub per_client_shift: Vec<Vec<f64>>,
    pub fidelity_floor: f64,
    pub fidelity_halflife: f64,
}

impl SurrogateResponse {
    /// A well-behaved response: optimum drawn inside `[0.15, 0.85]^dims`,
    /// small Gaussian client offsets.
    pub fn random(n_val: usize, dims: usize, offset_sd: f64, seed_: u64) -> Self {
        let mut rng = seed::rng(seed_);
        SurrogateResponse {
            base: 0.12,
            optimum: (0..dims).map(|_| rng.random_range(0.15..0.85)).collect(),
            curvature: vec![0.25; dims],
            per_client_offset: (0..n_val)
                .map(|_| offset_sd * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            per_client_shift: Vec::new(),
            fidelity_floor: 0.5,
            fidelity_halflife: 40.0,
        }
    }

    pub fn n_val(&self) -> usize {
        self.per_client_offset.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.optimum.len() != self.curvature.len() {
            return Err(Error::ShapeMismatch {
                expected: self.optimum.len(),
                actual: self.curvature.len(),
            });
        }
        if self.per_client_offset.is_empty() {
            return Err(Error::InvalidArgument("surrogate needs at least one client".into()));
        }
        if self.curvature.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::InvalidArgument("curvatures must be positive".into()));
        }
        if !(self.fidelity_halflife > 0.0) || !(0.0..=1.0).contains(&self.fidelity_floor) {
            return Err(Error::InvalidArgument(
                "fidelity_halflife must be positive and fidelity_floor in [0, 1]".into(),
            ));
        }
        if !self.per_client_shift.is_empty()
            && (self.per_client_shift.len() != self.n_val()
                || self.per_client_shift.iter().any(|s| s.len() != self.optimum.len()))
        {
            return Err(Error::InvalidArgument(
                "per_client_shift must be n_val x dims when present".into(),
            ));
        }
        Ok(())
    }

    /// Round-independent part of client `client`'s error, before the fidelity factor.
    pub fn asymptotic_error(&self, coords: &[f64], client: usize) -> f64 {
        let shift = self.per_client_shift.get(client);
        let quad: f64 = coords
            .iter()
            .zip(&self.optimum)
            .zip(&self.curvature)
            .enumerate()
            .map(|(i, ((u, o), c))| {
                let target = o + shift.map_or(0.0, |s| s[i]);
                c * (u - target) * (u - target)
            })
            .sum();
        (self.base + quad + self.per_client_offset[client]).clamp(0.0, 1.0)
    }

    pub fn fidelity_factor(&self, rounds: usize) -> f64 {
        let decay = (-(rounds as f64) / self.fidelity_halflife).exp2();
        self.fidelity_floor + (1.0 - self.fidelity_floor) * decay
    }
}

pub fn surrogate_error(
    response: &SurrogateResponse,
    coords: &[f64],
    client: usize,
    rounds: usize,
) -> f64 {
    response.asymptotic_error(coords, client) * response.fidelity_factor(rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::default_space;

    #[test]
    fn optimum_at_infinite_rounds() {
        let r = SurrogateResponse {
            per_client_offset: vec![0.0, 0.1],
            ..SurrogateResponse::random(2, 5, 0.0, 1)
        };
        let e = surrogate_error(&r, &r.optimum.clone(), 0, usize::MAX / 2);
        assert!((e - r.base * r.fidelity_floor).abs() < 1e-12);
    }

    #[test]
    fn monotone_in_rounds_and_bounded() {
        let r = SurrogateResponse::random(10, 5, 0.05, 2);
        let space = default_space();
        let mut rng = seed::rng(3);
        for _ in 0..200 {
            let u = space.unit_coords(&space.sample(&mut rng));
            for k in 0..10 {
                let mut prev = f64::INFINITY;
                for rounds in [0, 1, 5, 15, 45, 135, 405, 5000] {
                    let e = surrogate_error(&r, &u, k, rounds);
                    assert!((0.0..=1.0).contains(&e));
                    assert!(e <= prev);
                    prev = e;
                }
            }
        }
    }

    #[test]
    fn pool_argmin_is_nearest_to_optimum() {
        let r = SurrogateResponse::random(4, 5, 0.0, 4);
        let space = default_space();
        let mut rng = seed::rng(5);
        let pool: Vec<Vec<f64>> = (0..128)
            .map(|_| space.unit_coords(&space.sample(&mut rng)))
            .collect();
        let full = |u: &[f64]| (0..4).map(|k| surrogate_error(&r, u, k, 405)).sum::<f64>();
        let brute = (0..128)
            .min_by(|&a, &b| full(&pool[a]).total_cmp(&full(&pool[b])))
            .unwrap();
        let dist = |u: &[f64]| -> f64 {
            u.iter()
                .zip(&r.optimum)
                .zip(&r.curvature)
                .map(|((a, b), c)| c * (a - b) * (a - b))
                .sum()
        };
        let nearest = (0..128)
            .min_by(|&a, &b| dist(&pool[a]).total_cmp(&dist(&pool[b])))
            .unwrap();
        assert_eq!(brute, nearest);
    }

    #[test]
    fn shifted_clients_have_their_own_optimum() {
        let mut r = SurrogateResponse::random(2, 2, 0.0, 6);
        r.optimum = vec![0.5, 0.5];
        r.per_client_shift = vec![vec![0.0, 0.0], vec![-0.5, 0.0]];
        r.per_client_offset = vec![0.0, -r.base];
        r.validate().unwrap();
        assert_eq!(r.asymptotic_error(&[0.0, 0.5], 1), 0.0);
        assert!(r.asymptotic_error(&[0.5, 0.5], 1) > 0.0);
        r.per_client_shift.pop();
        assert!(r.validate().is_err());
    }
}
