use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fed::ClientDataset;

/// Replaces a fraction `p` of every client's data with iid draws from the
/// pooled data of all clients. `p = 0` is the identity, `p = 1` makes every
/// client an iid sample of the pool. Client sizes are preserved.
pub fn repartition_iid<R: Rng + ?Sized>(
    clients: &[ClientDataset],
    p: f64,
    rng: &mut R,
) -> Result<Vec<ClientDataset>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("iid fraction {p} outside [0, 1]")));
    }
    if p == 0.0 {
        return Ok(clients.to_vec());
    }
    let Some(dim) = clients.first().map(|c| c.dim) else {
        return Ok(Vec::new());
    };
    let pooled: Vec<(usize, usize)> = clients
        .iter()
        .enumerate()
        .flat_map(|(k, c)| (0..c.len()).map(move |i| (k, i)))
        .collect();

    Ok(clients
        .iter()
        .map(|client| {
            let n = client.len();
            let keep = ((1.0 - p) * n as f64).round() as usize;
            let mut kept = index::sample(rng, n, keep.min(n)).into_vec();
            kept.sort_unstable();
            let mut features = Vec::with_capacity(n * dim);
            let mut labels = Vec::with_capacity(n);
            for i in kept {
                features.extend_from_slice(client.row(i));
                labels.push(client.labels[i]);
            }
            while labels.len() < n {
                let (k, i) = pooled[rng.random_range(0..pooled.len())];
                features.extend_from_slice(clients[k].row(i));
                labels.push(clients[k].labels[i]);
            }
            ClientDataset {
                features,
                labels,
                dim,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fed::PopulationSpec;
    use crate::seed;
    use proptest::prelude::*;

    fn clients() -> Vec<ClientDataset> {
        PopulationSpec {
            n_train: 1,
            n_val: 40,
            classes: 5,
            dim: 3,
            alpha: 0.1,
            samples_per_client: 60,
            seed: 21,
            ..Default::default()
        }
        .generate()
        .unwrap()
        .val_clients
    }

    #[test]
    fn zero_fraction_is_identity() {
        let c = clients();
        assert_eq!(repartition_iid(&c, 0.0, &mut seed::rng(0)).unwrap(), c);
    }

    #[test]
    fn full_fraction_matches_pooled_histogram() {
        let c = clients();
        let out = repartition_iid(&c, 1.0, &mut seed::rng(1)).unwrap();
        let classes = 5;
        let mut pooled = vec![0f64; classes];
        for cl in &c {
            for (k, n) in cl.label_histogram(classes).into_iter().enumerate() {
                pooled[k] += n as f64;
            }
        }
        let total: f64 = pooled.iter().sum();
        // chi-square goodness of fit of the repartitioned labels against the pool
        let mut observed = vec![0f64; classes];
        for cl in &out {
            for (k, n) in cl.label_histogram(classes).into_iter().enumerate() {
                observed[k] += n as f64;
            }
        }
        let n_out: f64 = observed.iter().sum();
        let chi2: f64 = (0..classes)
            .filter(|&k| pooled[k] > 0.0)
            .map(|k| {
                let e = n_out * pooled[k] / total;
                (observed[k] - e).powi(2) / e
            })
            .sum();
        // 99th percentile with 4 dof
        assert!(chi2 < 13.28, "chi2 {chi2}");

        // each client's labels are now spread out: a fresh iid sample of 60
        // points from a 5-class pool almost never has a single class
        let single_class = out
            .iter()
            .filter(|cl| cl.label_histogram(classes).iter().filter(|&&n| n > 0).count() == 1)
            .count();
        assert_eq!(single_class, 0);
    }

    #[test]
    fn rejects_bad_fraction() {
        assert!(repartition_iid(&clients(), 1.5, &mut seed::rng(0)).is_err());
    }

    proptest! {
        #[test]
        fn sizes_are_conserved(p in 0.0f64..=1.0, s in any::<u64>()) {
            let c = clients();
            let out = repartition_iid(&c, p, &mut seed::rng(s)).unwrap();
            prop_assert_eq!(out.len(), c.len());
            for (a, b) in c.iter().zip(&out) {
                prop_assert_eq!(a.len(), b.len());
                prop_assert_eq!(b.features.len(), b.len() * b.dim);
            }
        }
    }
}
