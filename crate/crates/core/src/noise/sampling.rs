use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// `s` distinct client indices, uniform over subsets, in ascending order.
pub fn subsample_uniform<R: Rng + ?Sized>(n_val: usize, s: usize, rng: &mut R) -> Result<Vec<usize>> {
    if s == 0 || s > n_val {
        return Err(Error::InvalidArgument(format!(
            "subsample size {s} must be in 1..={n_val}"
        )));
    }
    let mut picked = index::sample(rng, n_val, s).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Participation weight `(a + delta)^b` of a client with accuracy `a`.
#[inline]
pub fn participation_weight(accuracy: f64, b: f64, delta: f64) -> f64 {
    (accuracy + delta).powf(b)
}

/// Samples `s` clients without replacement, each draw proportional to the
/// remaining clients' participation weights. Returned in ascending order.
pub fn biased_sample<R: Rng + ?Sized>(
    accuracies: &[f64],
    b: f64,
    delta: f64,
    s: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = accuracies.len();
    if s == 0 || s > n {
        return Err(Error::InvalidArgument(format!(
            "subsample size {s} must be in 1..={n}"
        )));
    }
    let mut weights: Vec<f64> = accuracies
        .iter()
        .map(|&a| participation_weight(a, b, delta))
        .collect();
    let mut picked = Vec::with_capacity(s);
    for _ in 0..s {
        // picked clients carry weight 0 and are skipped below
        let total: f64 = weights.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut choice = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            choice = Some(i);
            if target < acc {
                break;
            }
        }
        let i = choice.ok_or_else(|| {
            Error::InvalidArgument("participation weights must be positive".into())
        })?;
        picked.push(i);
        weights[i] = 0.0;
    }
    picked.sort_unstable();
    Ok(picked)
}
