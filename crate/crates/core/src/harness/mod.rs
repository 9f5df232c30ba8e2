//! Experiment orchestration: config pools, bootstrap random search, live
//! tuner trials over a policy grid, and plot-ready summaries.

pub mod bootstrap;
pub mod pool;
pub mod report;
pub mod spec;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap_rs, trial_draw, trial_seed, BootstrapTrial};
pub use pool::{build_pool, CachedBackend, Pool, PoolTable};
pub use report::{budget_curve, curve_quantiles, summarize, Quartiles};
pub use spec::{BackendKind, Epsilon, ExperimentSpec, GridPoint, GridSpec, SpaceSpec, TunerChoice, WorkloadSpec};

use crate::error::{Error, Result};
use crate::fed::{Backend, FedBackend, SurrogateBackend};
use crate::proxy::oneshot_proxy_rs;
use crate::seed::{self, tag};
use crate::space::SearchSpace;
use crate::tuners::{run_tuner, Observation, TrialOutcome};

/// One trial at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub tuner: TunerChoice,
    pub point: GridPoint,
    pub trial: usize,
    /// Evaluation-noise seed of the trial.
    pub seed: u64,
    /// Pool index for bootstrap trials, trial-local id otherwise.
    pub config_id: usize,
    pub full_error: f64,
    pub rounds_consumed: usize,
    pub epsilon_spent: f64,
    /// Lowest full-validation error among the configs the trial trained
    /// (bootstrap trials only).
    pub oracle_error: Option<f64>,
    /// `<file>#<line>` of the trial's observation trace.
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub trial: usize,
    pub rounds_consumed: usize,
    pub full_error: f64,
    pub observations: Vec<Observation>,
}

/// File stem for a grid point: the point plus everything else in the spec
/// except the grid lists.
pub fn point_key(spec: &ExperimentSpec, point: &GridPoint) -> String {
    let mut base = spec.clone();
    base.grid = GridSpec {
        subsample: vec![],
        bias_b: vec![],
        iid_p: vec![],
        epsilon: vec![],
    };
    let text = serde_json::to_string(&(base, point)).expect("spec serializes");
    format!("{:016x}", seed::fnv1a(text.as_bytes()))
}

/// Writes through a temporary file so readers never see partial content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// What a backend must offer to serve as an experiment workload.
pub trait Workload: Backend + Sized {
    fn with_iid(&self, spec: &ExperimentSpec, p: f64) -> Result<Self>;
    fn proxy(&self, spec: &ExperimentSpec, space: &SearchSpace) -> Result<Self>;
}

impl Workload for FedBackend {
    fn with_iid(&self, spec: &ExperimentSpec, p: f64) -> Result<Self> {
        spec.workload.repartitioned(self, p, spec.master_seed)
    }

    fn proxy(&self, spec: &ExperimentSpec, _: &SearchSpace) -> Result<Self> {
        let population = spec.proxy.apply(&spec.workload.population).generate()?;
        Ok(spec.workload.wrap_population(population))
    }
}

/// Reflects `x` into `[0, 1]`.
fn reflect_unit(x: f64) -> f64 {
    let y = x.rem_euclid(2.0);
    if y > 1.0 {
        2.0 - y
    } else {
        y
    }
}

impl Workload for SurrogateBackend {
    fn with_iid(&self, _: &ExperimentSpec, p: f64) -> Result<Self> {
        if p == 0.0 {
            Ok(self.clone())
        } else {
            Err(Error::InvalidSpec("the surrogate backend has no client data to repartition".into()))
        }
    }

    /// For surrogates, `proxy.rotation` moves the optimum by that much along
    /// every unit coordinate and `proxy.seed` regenerates the response.
    fn proxy(&self, spec: &ExperimentSpec, space: &SearchSpace) -> Result<Self> {
        let mut response = match spec.proxy.seed {
            Some(s) => {
                let mut w = spec.workload.clone();
                w.population.seed = s;
                w.surrogate = None;
                w.surrogate_response(space)
            }
            None => self.response.clone(),
        };
        for o in &mut response.optimum {
            *o = reflect_unit(*o + spec.proxy.rotation);
        }
        SurrogateBackend::new(response, space.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub points: usize,
    pub skipped: usize,
    pub records: usize,
}

fn records_dir(out: &Path) -> PathBuf {
    out.join("records")
}

fn traces_dir(out: &Path) -> PathBuf {
    out.join("traces")
}

fn trace_line(t: usize, o: &TrialOutcome) -> TraceLine {
    TraceLine {
        trial: t,
        rounds_consumed: o.rounds_consumed,
        full_error: o.full_error,
        observations: o.trace.clone(),
    }
}

/// Runs every grid point of `spec` into `out`, skipping points whose record
/// file already exists, then rewrites the summaries.
pub fn run(spec: &ExperimentSpec, out: &Path) -> Result<RunSummary> {
    spec.validate()?;
    let space = spec.space.build()?;
    fs::create_dir_all(records_dir(out))?;
    fs::create_dir_all(traces_dir(out))?;
    write_atomic(&out.join("spec.json"), serde_json::to_string_pretty(spec)?.as_bytes())?;
    let summary = match spec.workload.backend {
        BackendKind::Fedtrain => run_points(spec, &space, &spec.workload.fed_backend()?, out)?,
        BackendKind::Surrogate => run_points(spec, &space, &spec.workload.surrogate_backend(&space)?, out)?,
    };
    report(out)?;
    Ok(summary)
}

/// Records and traces of one grid point, without touching the disk.
pub fn run_point<W: Workload>(
    spec: &ExperimentSpec,
    space: &SearchSpace,
    workload: &W,
    pool: Option<&Pool<W>>,
    point: &GridPoint,
) -> Result<(Vec<TrialRecord>, Vec<TraceLine>)> {
    let policy = point.policy(spec);
    let settings = spec.settings();
    let target = workload.with_iid(spec, point.iid_p)?;
    let hash = point.hash();
    let trace_file = format!("traces/{}.jsonl", point_key(spec, point));
    let mut records = Vec::with_capacity(spec.trials);
    let mut traces = Vec::with_capacity(spec.trials);
    let mut push = |t: usize, seed: u64, config_id: usize, oracle: Option<f64>, o: &TrialOutcome| {
        records.push(TrialRecord {
            tuner: spec.tuner,
            point: *point,
            trial: t,
            seed,
            config_id,
            full_error: o.full_error,
            rounds_consumed: o.rounds_consumed,
            epsilon_spent: o.epsilon_spent,
            oracle_error: oracle,
            trace: format!("{trace_file}#{}", t + 1),
        });
        traces.push(trace_line(t, o));
    };
    match spec.tuner.kind() {
        Some(crate::tuners::TunerKind::Rs) => {
            let pool = pool.ok_or_else(|| Error::InvalidArgument("random search needs a pool".into()))?;
            let table = if point.iid_p == 0.0 {
                pool.table.clone()
            } else {
                pool.reevaluated(&target)
            };
            let last = table.checkpoints.len() - 1;
            for (t, bt) in bootstrap_rs(&table, spec.k, spec.trials, &policy, &settings, spec.master_seed, hash)?
                .iter()
                .enumerate()
            {
                let oracle = bt
                    .pool_ids
                    .iter()
                    .map(|&j| table.full_error(j, last))
                    .fold(f64::INFINITY, f64::min);
                push(t, bt.seed.noise, bt.chosen(), Some(oracle), &bt.outcome);
            }
        }
        Some(kind) => {
            let outcomes: Vec<(u64, TrialOutcome)> = (0..spec.trials)
                .into_par_iter()
                .map(|t| {
                    let seed = trial_seed(spec.master_seed, hash, t);
                    Ok((seed.noise, run_tuner(kind, &target, space, &settings, &policy, seed)?))
                })
                .collect::<Result<_>>()?;
            for (t, (seed, o)) in outcomes.iter().enumerate() {
                push(t, *seed, o.best_id, None, o);
            }
        }
        None => {
            // proxy selection never sees the target policy, so nothing here
            // depends on the grid point except the target's data
            let proxy = workload.proxy(spec, space)?;
            let outcomes: Vec<(u64, TrialOutcome, f64)> = (0..spec.trials)
                .into_par_iter()
                .map(|t| {
                    let seed = seed::derive(spec.master_seed, &[tag::TRIAL, t as u64]);
                    let p = oneshot_proxy_rs(&proxy, &target, space, &settings, seed)?;
                    Ok((seed, p.proxy_trial, p.target_error))
                })
                .collect::<Result<_>>()?;
            for (t, (seed, mut o, target_error)) in outcomes.into_iter().enumerate() {
                o.full_error = target_error;
                o.rounds_consumed += settings.rounds;
                push(t, seed, o.best_id, None, &o);
            }
        }
    }
    Ok((records, traces))
}

fn run_points<W: Workload>(
    spec: &ExperimentSpec,
    space: &SearchSpace,
    workload: &W,
    out: &Path,
) -> Result<RunSummary> {
    let mut summary = RunSummary::default();
    let mut pool: Option<Pool<W>> = None;
    for point in spec.grid.points() {
        summary.points += 1;
        let key = point_key(spec, &point);
        let rec_path = records_dir(out).join(format!("{key}.jsonl"));
        if rec_path.exists() {
            summary.skipped += 1;
            continue;
        }
        if spec.tuner == TunerChoice::Rs && pool.is_none() {
            let pool_seed = seed::derive(spec.master_seed, &[tag::POOL]);
            pool = Some(build_pool(workload, space, spec.pool_size, &spec.checkpoints(), pool_seed)?);
        }
        let (records, traces) = run_point(spec, space, workload, pool.as_ref(), &point)?;
        summary.records += records.len();
        // traces first: a record file marks the point complete
        write_atomic(&traces_dir(out).join(format!("{key}.jsonl")), &jsonl(&traces)?)?;
        write_atomic(&rec_path, &jsonl(&records)?)?;
    }
    Ok(summary)
}

type GroupKey = (String, String, String, String, String);

fn group_key(r: &TrialRecord) -> GroupKey {
    (
        r.tuner.to_string(),
        r.point.subsample.to_string(),
        r.point.bias_b.to_string(),
        r.point.iid_p.to_string(),
        r.point.epsilon.to_string(),
    )
}

const GROUP_HEADER: &str = "tuner,subsample,bias_b,iid_p,epsilon";

fn sorted_jsonl_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if dir.exists() {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Every record under `out/records`, in file then line order.
pub fn load_records(out: &Path) -> Result<Vec<TrialRecord>> {
    let mut all = Vec::new();
    for f in sorted_jsonl_files(&records_dir(out))? {
        all.extend(read_jsonl::<TrialRecord>(&f)?);
    }
    Ok(all)
}

/// Rewrites `summary.csv` and `curves.csv` from the records and traces in `out`.
pub fn report(out: &Path) -> Result<()> {
    let records = load_records(out)?;
    let table = summarize(records.iter().map(|r| (group_key(r), r.full_error)));
    let mut csv = format!("{GROUP_HEADER},count,median,q1,q3\n");
    for ((a, b, c, d, e), q) in &table {
        csv.push_str(&format!("{a},{b},{c},{d},{e},{},{},{},{}\n", q.count, q.median, q.q1, q.q3));
    }
    write_atomic(&out.join("summary.csv"), csv.as_bytes())?;

    let mut curves: BTreeMap<GroupKey, Vec<Vec<(usize, f64)>>> = BTreeMap::new();
    let mut cache: BTreeMap<String, Vec<TraceLine>> = BTreeMap::new();
    for r in &records {
        let (file, line) = r
            .trace
            .rsplit_once('#')
            .ok_or_else(|| Error::InvalidArgument(format!("bad trace reference {:?}", r.trace)))?;
        if !cache.contains_key(file) {
            cache.insert(file.to_string(), read_jsonl(&out.join(file))?);
        }
        let idx: usize = line
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad trace reference {:?}", r.trace)))?;
        let tl = cache[file]
            .get(idx - 1)
            .ok_or_else(|| Error::InvalidArgument(format!("missing trace {:?}", r.trace)))?;
        curves
            .entry(group_key(r))
            .or_default()
            .push(budget_curve(&tl.observations, tl.rounds_consumed, tl.full_error));
    }
    let mut csv = format!("{GROUP_HEADER},budget,count,median,q1,q3\n");
    for ((a, b, c, d, e), cs) in &curves {
        for (budget, q) in curve_quantiles(cs) {
            csv.push_str(&format!(
                "{a},{b},{c},{d},{e},{budget},{},{},{},{}\n",
                q.count, q.median, q.q1, q.q3
            ));
        }
    }
    write_atomic(&out.join("curves.csv"), csv.as_bytes())?;
    Ok(())
}
