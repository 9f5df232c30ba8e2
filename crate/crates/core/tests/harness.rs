use std::fs;
use std::path::Path;

use rand::Rng;

use fedtune::fed::{Backend, FedBackend, PopulationSpec};
use fedtune::harness::{
    self, bootstrap_rs, budget_curve, build_pool, summarize, trial_draw, trial_seed, BackendKind, Epsilon,
    ExperimentSpec, GridSpec, Pool, TunerChoice,
};
use fedtune::noise::{EvalPolicy, Subsample};
use fedtune::seed;
use fedtune::space::default_space;
use fedtune::tuners::{rs_over, TunerSettings};
use fedtune::Error;

const CHECKPOINTS: [usize; 5] = [5, 15, 45, 135, 405];

fn small_population() -> PopulationSpec {
    PopulationSpec {
        n_train: 40,
        n_val: 20,
        samples_per_client: 40,
        seed: 11,
        ..PopulationSpec::default()
    }
}

fn fed() -> FedBackend {
    FedBackend::new(small_population().generate().unwrap())
}

fn fed_pool(b: &FedBackend, size: usize) -> Pool<FedBackend> {
    build_pool(b, &default_space(), size, &CHECKPOINTS, 5).unwrap()
}

fn surrogate_spec() -> ExperimentSpec {
    let mut s = ExperimentSpec::default();
    s.workload.backend = BackendKind::Surrogate;
    s.workload.population.n_val = 30;
    s.pool_size = 32;
    s.trials = 100;
    s.master_seed = 9;
    s.grid = GridSpec {
        subsample: vec![Subsample::Count(1), Subsample::Full],
        bias_b: vec![0.0],
        iid_p: vec![0.0],
        epsilon: vec![Epsilon::INF],
    };
    s
}

/// Sort-based quantile with linear interpolation between order statistics.
fn oracle_quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = q * (s.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

#[test]
fn summaries_match_sort_oracle_on_random_groups() {
    let mut rng = seed::rng(4);
    let items: Vec<(u32, f64)> = (0..20_000)
        .map(|_| (rng.random_range(0..1000u32), rng.random::<f64>()))
        .collect();
    let table = summarize(items.iter().copied());
    assert_eq!(table.len(), 1000);
    for (g, q) in &table {
        let vals: Vec<f64> = items.iter().filter(|x| x.0 == *g).map(|x| x.1).collect();
        assert_eq!(q.count, vals.len());
        assert_eq!(q.median, oracle_quantile(&vals, 0.5));
        assert_eq!(q.q1, oracle_quantile(&vals, 0.25));
        assert_eq!(q.q3, oracle_quantile(&vals, 0.75));
    }
}

#[test]
fn cached_errors_equal_fresh_training() {
    let b = fed();
    let pool = fed_pool(&b, 4);
    for i in 0..4 {
        for (c, &r) in CHECKPOINTS.iter().enumerate() {
            let m = b.train_fresh(&pool.table.configs[i], r, pool.table.train_seeds[i]).unwrap();
            assert_eq!(b.client_errors(&m), pool.table.errors[i][c]);
            assert_eq!(b.full_error(&m), pool.table.full_error(i, c));
        }
    }
}

#[test]
fn median_error_falls_with_training() {
    let b = fed();
    let pool = fed_pool(&b, 24);
    let medians: Vec<f64> = (0..CHECKPOINTS.len())
        .map(|c| {
            let v: Vec<f64> = (0..pool.table.len()).map(|i| pool.table.full_error(i, c)).collect();
            oracle_quantile(&v, 0.5)
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[1] <= w[0]), "{medians:?}");
}

#[test]
fn noiseless_bootstrap_picks_pool_argmin() {
    let b = fed();
    let pool = fed_pool(&b, 32);
    let finals = pool.table.final_errors();
    let settings = TunerSettings::default();
    let trials = bootstrap_rs(&pool.table, 16, 50, &EvalPolicy::noiseless(), &settings, 3, 0).unwrap();
    for t in &trials {
        let best = t
            .pool_ids
            .iter()
            .copied()
            .min_by(|&x, &y| finals[x].total_cmp(&finals[y]))
            .unwrap();
        assert_eq!(finals[t.chosen()], finals[best]);
        assert_eq!(t.outcome.full_error, finals[best]);
    }
}

#[test]
fn bootstrap_replays_live_search_bitwise() {
    let b = fed();
    let pool = fed_pool(&b, 24);
    let settings = TunerSettings::default();
    let policy = EvalPolicy::subsampled(Subsample::Count(1)).with_epsilon(5.0);
    let (master, point) = (21, 77);
    let trials = bootstrap_rs(&pool.table, 16, 3, &policy, &settings, master, point).unwrap();
    for (t, bt) in trials.iter().enumerate() {
        assert_eq!(bt.pool_ids, trial_draw(master, t, 24, 16));
        let configs = bt
            .pool_ids
            .iter()
            .map(|&j| (pool.table.configs[j].clone(), pool.table.train_seeds[j]))
            .collect();
        let live = rs_over(&b, configs, &settings, &policy, trial_seed(master, point, t)).unwrap();
        assert_eq!(live.best_id, bt.outcome.best_id);
        assert_eq!(live.full_error, bt.outcome.full_error);
        assert_eq!(live.trace, bt.outcome.trace);
    }
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "records", "traces"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = fs::read_dir(&d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            let rel = p.strip_prefix(dir).unwrap().display().to_string();
            out.push((rel, fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn sweep_is_reproducible_and_resumable() {
    let spec = surrogate_spec();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = harness::run(&spec, a.path()).unwrap();
    assert_eq!((first.points, first.skipped, first.records), (2, 0, 200));
    let records = harness::load_records(a.path()).unwrap();
    assert_eq!(records.len(), 200);
    for point in spec.grid.points() {
        let n = records.iter().filter(|r| r.point == point).count();
        assert_eq!(n, 100);
    }
    harness::run(&spec, b.path()).unwrap();
    assert_eq!(read_tree(a.path()), read_tree(b.path()));

    let again = harness::run(&spec, a.path()).unwrap();
    assert_eq!((again.skipped, again.records), (2, 0));
    assert_eq!(read_tree(a.path()), read_tree(b.path()));

    let summary = fs::read_to_string(a.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("tuner,subsample,bias_b,iid_p,epsilon,count,median,q1,q3\n"));
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn empty_grid_is_rejected_before_writing() {
    let mut spec = surrogate_spec();
    spec.grid.subsample.clear();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let err = harness::run(&spec, &out).unwrap_err();
    assert!(matches!(err, Error::InvalidSpec(_)), "{err}");
    assert!(!out.exists());
}

#[test]
fn curves_end_at_the_reported_result() {
    let mut spec = surrogate_spec();
    spec.trials = 20;
    spec.grid.subsample = vec![Subsample::Full];
    let space = default_space();
    let w = spec.workload.surrogate_backend(&space).unwrap();
    let pool = build_pool(&w, &space, spec.pool_size, &spec.checkpoints(), 1).unwrap();
    let point = spec.grid.points()[0];
    let (records, traces) = harness::run_point(&spec, &space, &w, Some(&pool), &point).unwrap();
    for (r, tl) in records.iter().zip(&traces) {
        let c = budget_curve(&tl.observations, tl.rounds_consumed, tl.full_error);
        assert_eq!(*c.last().unwrap(), (r.rounds_consumed, r.full_error));
        assert!(c.windows(2).all(|w| w[1].1 <= w[0].1), "noiseless curve rose: {c:?}");
        assert!(c.windows(2).all(|w| w[1].0 > w[0].0));
        assert_eq!(Some(r.full_error), r.oracle_error);
    }
}

#[test]
fn live_tuner_sweep_spends_budget() {
    let mut spec = surrogate_spec();
    spec.tuner = TunerChoice::Hb;
    spec.trials = 4;
    spec.grid.subsample = vec![Subsample::Count(1)];
    spec.grid.epsilon = vec![Epsilon(10.0)];
    let dir = tempfile::tempdir().unwrap();
    harness::run(&spec, dir.path()).unwrap();
    let records = harness::load_records(dir.path()).unwrap();
    assert_eq!(records.len(), 4);
    for r in &records {
        assert!(r.rounds_consumed <= 6480);
        assert!((r.epsilon_spent - 10.0).abs() < 1e-9);
    }
}
