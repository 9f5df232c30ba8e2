//! Client error rates and their weighted aggregation.

use super::data::{ClientDataset, ClientPopulation};
use super::model::{scores, ModelState};
use crate::error::{Error, Result};

/// Index of the largest score; ties go to the lowest class index.
#[inline]
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = c;
        }
    }
    best
}

/// Fraction of misclassified points.
pub fn client_error(model: &ModelState, data: &ClientDataset) -> f64 {
    let mut z = vec![0.0; model.classes];
    let wrong = (0..data.len())
        .filter(|&i| {
            scores(&model.params, model.classes, model.dim, data.row(i), &mut z);
            argmax(&z) != data.labels[i]
        })
        .count();
    wrong as f64 / data.len() as f64
}

/// `sum(p_k F_k) / sum(p_k)`.
pub fn aggregate_error(errors: &[f64], weights: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate zero clients".into()));
    }
    if errors.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            expected: errors.len(),
            actual: weights.len(),
        });
    }
    let (num, den) = errors
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |(n, d), (e, w)| (n + e * w, d + w));
    Ok(num / den)
}

pub fn val_client_errors(model: &ModelState, population: &ClientPopulation) -> Vec<f64> {
    population
        .val_clients
        .iter()
        .map(|c| client_error(model, c))
        .collect()
}

/// Weighted error over every validation client.
pub fn full_validation_error(model: &ModelState, population: &ClientPopulation) -> f64 {
    aggregate_error(&val_client_errors(model, population), &population.val_weights)
        .expect("population has validation clients")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn aggregation_examples() {
        assert!((aggregate_error(&[0.2, 0.4], &[1.0, 3.0]).unwrap() - 0.35).abs() < 1e-15);
        assert!((aggregate_error(&[0.2, 0.4], &[1.0, 1.0]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(aggregate_error(&[0.7], &[5.0]).unwrap(), 0.7);
        assert!(aggregate_error(&[], &[]).is_err());
        assert!(aggregate_error(&[0.1], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_model_on_balanced_binary_data() {
        let labels: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let data = ClientDataset::new(vec![1.0; 50], labels, 1, 2).unwrap();
        let e = client_error(&ModelState::zeros(2, 1), &data);
        assert!((e - 0.5).abs() <= 1.0 / 50.0);
    }

    #[test]
    fn perfectly_separated() {
        let data = ClientDataset::new(vec![-1.0, 1.0, -2.0, 3.0], vec![0, 1, 0, 1], 1, 2).unwrap();
        let mut m = ModelState::zeros(2, 1);
        m.params = vec![-1.0, 1.0, 0.0, 0.0];
        assert_eq!(client_error(&m, &data), 0.0);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = seed::rng(17);
        for _ in 0..100 {
            let classes = rng.random_range(2..6);
            let dim = rng.random_range(1..5);
            let n = rng.random_range(1..40);
            let features: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let data = ClientDataset::new(features.clone(), labels.clone(), dim, classes).unwrap();
            let mut m = ModelState::zeros(classes, dim);
            m.params.iter_mut().for_each(|p| *p = rng.random_range(-1.0..1.0));

            let mut wrong = 0;
            for i in 0..n {
                let mut best = (f64::NEG_INFINITY, 0);
                for c in 0..classes {
                    let mut s = m.params[classes * dim + c];
                    for j in 0..dim {
                        s += m.params[c * dim + j] * features[i * dim + j];
                    }
                    if s > best.0 {
                        best = (s, c);
                    }
                }
                if best.1 != labels[i] {
                    wrong += 1;
                }
            }
            assert_eq!(client_error(&m, &data), wrong as f64 / n as f64);
        }
    }

    proptest! {
        #[test]
        fn aggregation_is_weight_scale_invariant(
            pairs in prop::collection::vec((0.0f64..1.0, 0.01f64..100.0), 1..50),
            c in 1e-3f64..1e3,
        ) {
            let (e, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
            let a = aggregate_error(&e, &w).unwrap();
            let b = aggregate_error(&e, &scaled).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
