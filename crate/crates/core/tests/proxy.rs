use fedtune::fed::{Backend, FedBackend, PopulationSpec};
use fedtune::harness::{self, BackendKind, Epsilon, ExperimentSpec, GridSpec, TunerChoice};
use fedtune::noise::{EvalPolicy, Subsample};
use fedtune::proxy::{oneshot_proxy_rs, transfer_scatter, MismatchKnobs, PopulationPair};
use fedtune::seed;
use fedtune::space::{default_space, HpConfig};
use fedtune::tuners::{rs_run, TunerSettings};
use fedtune::Result;
use statrs::distribution::{ContinuousCDF, Normal};

fn target_spec() -> PopulationSpec {
    PopulationSpec {
        n_train: 40,
        n_val: 20,
        samples_per_client: 40,
        seed: 17,
        ..PopulationSpec::default()
    }
}

fn configs(n: usize, salt: u64) -> Vec<HpConfig> {
    let space = default_space();
    (0..n).map(|i| space.sample(&mut seed::rng(salt * 10_000 + i as u64))).collect()
}

#[test]
fn identical_proxy_reproduces_target_search() {
    let pair = PopulationPair::generate(&target_spec(), MismatchKnobs::default()).unwrap();
    let proxy = FedBackend::new(pair.proxy);
    let target = FedBackend::new(pair.target);
    let settings = TunerSettings::default();
    for s in 0..3 {
        let p = oneshot_proxy_rs(&proxy, &target, &default_space(), &settings, s).unwrap();
        let direct = rs_run(&target, &default_space(), &settings, &EvalPolicy::noiseless(), s).unwrap();
        assert_eq!(p.config, direct.best_config);
        assert_eq!(p.target_error, direct.full_error);
        assert_eq!(p.proxy_trial.rounds_consumed, 6480);
    }
}

#[test]
fn shared_stream_scatter_is_the_diagonal() {
    let b = FedBackend::new(target_spec().generate().unwrap());
    let sc = transfer_scatter(&configs(24, 1), &b, 3, &b, 3, 45).unwrap();
    assert!(sc.points.iter().all(|p| p.error_a == p.error_b));
    assert!((sc.spearman - 1.0).abs() < 1e-12);
}

#[test]
fn swapping_populations_transposes_the_scatter() {
    let pair = PopulationPair::generate(
        &target_spec(),
        MismatchKnobs {
            rotation: 0.8,
            ..MismatchKnobs::default()
        },
    )
    .unwrap();
    let (a, b) = (FedBackend::new(pair.proxy), FedBackend::new(pair.target));
    let cs = configs(16, 2);
    let ab = transfer_scatter(&cs, &a, 1, &b, 2, 45).unwrap();
    let ba = transfer_scatter(&cs, &b, 2, &a, 1, 45).unwrap();
    assert_eq!(ba, ab.transposed());
    let mut csv = Vec::new();
    ab.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("config_id,error_a,error_b\n"));
    assert_eq!(text.lines().count(), 17);
}

#[test]
fn matched_pair_ranks_configs_alike() {
    let pair = PopulationPair::generate(
        &target_spec(),
        MismatchKnobs {
            alpha: Some(1.0),
            ..MismatchKnobs::default()
        },
    )
    .unwrap();
    let (a, b) = (FedBackend::new(pair.proxy), FedBackend::new(pair.target));
    let sc = transfer_scatter(&configs(64, 3), &a, 1, &b, 2, 405).unwrap();
    assert!(sc.spearman > 0.7, "rho = {}", sc.spearman);
}

/// Errors drawn independently per config from a salted hash.
struct NoiseBackend {
    salt: u64,
}

impl Backend for NoiseBackend {
    type Model = u64;

    fn init(&self, config: &HpConfig) -> Result<u64> {
        Ok(seed::fnv1a(serde_json::to_string(config).unwrap().as_bytes()))
    }

    fn advance(&self, _: &mut u64, _: &HpConfig, _: usize, _: u64) -> Result<()> {
        Ok(())
    }

    fn rounds_trained(&self, _: &u64) -> usize {
        0
    }

    fn client_errors(&self, m: &u64) -> Vec<f64> {
        vec![(seed::derive(self.salt, &[*m]) >> 11) as f64 / (1u64 << 53) as f64]
    }

    fn val_weights(&self) -> &[f64] {
        &[1.0]
    }
}

#[test]
fn independent_errors_are_uncorrelated() {
    let seeds = 400;
    let mut inside = 0;
    for s in 0..seeds {
        let sc = transfer_scatter(
            &configs(64, 100 + s),
            &NoiseBackend { salt: 2 * s },
            0,
            &NoiseBackend { salt: 2 * s + 1 },
            0,
            1,
        )
        .unwrap();
        if sc.spearman.abs() < 0.3 {
            inside += 1;
        }
    }
    // the null rank correlation is close to N(0, 1/(n-1)) at n = 64
    let z = 0.3 * 63f64.sqrt();
    let expected = 2.0 * Normal::standard().cdf(z) - 1.0;
    assert!(expected > 0.95);
    assert!(inside as f64 >= 0.95 * seeds as f64, "{inside}/{seeds}, expected rate {expected:.3}");
}

#[test]
fn proxy_sweep_ignores_the_target_policy() {
    let mut spec = ExperimentSpec::default();
    spec.workload.backend = BackendKind::Surrogate;
    spec.workload.population.n_val = 20;
    spec.tuner = TunerChoice::Proxy;
    spec.trials = 8;
    spec.proxy.rotation = 0.2;
    spec.grid = GridSpec {
        subsample: vec![Subsample::Count(1), Subsample::Full],
        bias_b: vec![0.0, 2.0],
        iid_p: vec![0.0],
        epsilon: vec![Epsilon(1.0), Epsilon::INF],
    };
    let space = default_space();
    let w = spec.workload.surrogate_backend(&space).unwrap();
    let points = spec.grid.points();
    let reference = harness::run_point(&spec, &space, &w, None, &points[0]).unwrap();
    for p in &points[1..] {
        let (records, traces) = harness::run_point(&spec, &space, &w, None, p).unwrap();
        assert_eq!(traces, reference.1);
        for (r, r0) in records.iter().zip(&reference.0) {
            assert_eq!((r.config_id, r.full_error, r.seed), (r0.config_id, r0.full_error, r0.seed));
            assert_eq!(r.rounds_consumed, 6480 + 405);
            assert_eq!(r.epsilon_spent, 0.0);
        }
    }
}
