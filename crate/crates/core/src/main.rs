use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedtune::fed::{Backend, FedBackend, SurrogateBackend};
use fedtune::harness::{
    self, build_pool, write_atomic, BackendKind, Epsilon, ExperimentSpec, TunerChoice, Workload,
};
use fedtune::noise::{PrivacyMode, Subsample};
use fedtune::proxy::{oneshot_proxy_rs, transfer_scatter};
use fedtune::seed::{self, tag};
use fedtune::space::{write_configs, SearchSpace};
use fedtune::tuners::run_tuner;
use fedtune::{Error, Result};

#[derive(Parser)]
#[command(name = "fedtune", version, about = "Federated hyperparameter tuning under noisy evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a config pool and cache its per-client errors at every checkpoint
    Pool(Common),
    /// Run one live tuner trial
    Tune(Common),
    /// Run a policy grid
    Sweep(Common),
    /// Bootstrap random search over a cached pool
    Bootstrap(Common),
    /// One-shot proxy random search and the transfer scatter
    Proxy(Common),
    /// Rebuild summary.csv and curves.csv from a result directory
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment spec (.json or .toml); flags override its fields
    #[arg(long)]
    spec: Option<PathBuf>,
    /// fedtrain or surrogate
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    /// Dirichlet concentration of client label mixtures
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated subsample sizes: counts, percentages or "full"
    #[arg(long, value_delimiter = ',')]
    subsample: Option<Vec<Subsample>>,
    #[arg(long, value_delimiter = ',')]
    bias_b: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    iid_p: Option<Vec<f64>>,
    /// Comma-separated privacy budgets; "inf" disables privacy
    #[arg(long, value_delimiter = ',')]
    epsilon: Option<Vec<Epsilon>>,
    /// auto, off, per_eval or oneshot_topk
    #[arg(long)]
    privacy_mode: Option<PrivacyMode>,
    /// rs, hb, tpe, bohb or proxy
    #[arg(long)]
    tuner: Option<TunerChoice>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Proxy prototype rotation relative to the target (radians)
    #[arg(long)]
    proxy_rotation: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut s = match &self.spec {
            Some(p) => ExperimentSpec::load(p)?,
            None => ExperimentSpec::default(),
        };
        let w = &mut s.workload;
        if let Some(b) = self.backend {
            w.backend = b;
        }
        if let Some(n) = self.n_train {
            w.population.n_train = n;
        }
        if let Some(n) = self.n_val {
            w.population.n_val = n;
        }
        if let Some(a) = self.alpha {
            w.population.alpha = a;
        }
        if let Some(v) = &self.subsample {
            s.grid.subsample = v.clone();
        }
        if let Some(v) = &self.bias_b {
            s.grid.bias_b = v.clone();
        }
        if let Some(v) = &self.iid_p {
            s.grid.iid_p = v.clone();
        }
        if let Some(v) = &self.epsilon {
            s.grid.epsilon = v.clone();
        }
        if let Some(m) = self.privacy_mode {
            s.privacy_mode = m;
        }
        if let Some(t) = self.tuner {
            s.tuner = t;
        }
        if let Some(t) = self.trials {
            s.trials = t;
        }
        if let Some(k) = self.k {
            s.k = k;
        }
        if let Some(n) = self.pool_size {
            s.pool_size = n;
        }
        if let Some(seed) = self.seed {
            s.master_seed = seed;
        }
        if let Some(r) = self.proxy_rotation {
            s.proxy.rotation = r;
        }
        Ok(s)
    }

    fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::InvalidSpec("--out DIR is required".into()))
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_pool<W: Workload>(spec: &ExperimentSpec, space: &SearchSpace, w: &W, out: &Path) -> Result<()> {
    let pool_seed = seed::derive(spec.master_seed, &[tag::POOL]);
    let pool = build_pool(w, space, spec.pool_size, &spec.checkpoints(), pool_seed)?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join("pool.json"), serde_json::to_string(&pool.table)?.as_bytes())?;
    let mut configs = Vec::new();
    write_configs(&mut configs, &pool.table.configs)?;
    write_atomic(&out.join("configs.jsonl"), &configs)?;
    let finals = pool.table.final_errors();
    let best = finals.iter().copied().fold(f64::INFINITY, f64::min);
    print_json(&serde_json::json!({
        "configs": pool.table.len(),
        "checkpoints": pool.table.checkpoints,
        "best_final_error": best,
    }))
}

fn cmd_tune<W: Workload>(spec: &ExperimentSpec, space: &SearchSpace, w: &W, out: Option<&Path>) -> Result<()> {
    let points = spec.grid.points();
    let [point] = points.as_slice() else {
        return Err(Error::InvalidSpec(format!(
            "tune runs a single policy, the grid has {} points",
            points.len()
        )));
    };
    let kind = spec
        .tuner
        .kind()
        .ok_or_else(|| Error::InvalidSpec("use the proxy subcommand for proxy tuning".into()))?;
    let target = w.with_iid(spec, point.iid_p)?;
    let seed = harness::trial_seed(spec.master_seed, point.hash(), 0);
    let o = run_tuner(kind, &target, space, &spec.settings(), &point.policy(spec), seed)?;
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_atomic(&out.join("outcome.json"), serde_json::to_string_pretty(&o)?.as_bytes())?;
    }
    print_json(&serde_json::json!({
        "tuner": spec.tuner,
        "best_id": o.best_id,
        "best_config": o.best_config,
        "full_error": o.full_error,
        "rounds_consumed": o.rounds_consumed,
        "epsilon_spent": o.epsilon_spent,
        "observations": o.trace.len(),
        "schedule": o.schedule,
    }))
}

fn cmd_proxy<W: Workload>(spec: &ExperimentSpec, space: &SearchSpace, w: &W, out: &Path) -> Result<()> {
    let proxy = w.proxy(spec, space)?;
    let settings = spec.settings();
    let picked = oneshot_proxy_rs(&proxy, w, space, &settings, spec.master_seed)?;
    let configs: Vec<_> = (0..spec.pool_size)
        .map(|i| space.sample(&mut seed::rng(harness::pool::pool_config_seed(spec.master_seed, i))))
        .collect();
    // each population trains from a stream keyed by its own description
    let pop_seed = |p: &fedtune::fed::PopulationSpec| {
        let text = serde_json::to_string(p).expect("population serializes");
        seed::derive(spec.master_seed, &[tag::TRAIN, seed::fnv1a(text.as_bytes())])
    };
    let seed_proxy = pop_seed(&spec.proxy.apply(&spec.workload.population));
    let seed_target = pop_seed(&spec.workload.population);
    let scatter = transfer_scatter(&configs, &proxy, seed_proxy, w, seed_target, settings.rounds)?;
    fs::create_dir_all(out)?;
    let mut csv = Vec::new();
    scatter.write_csv(&mut csv)?;
    write_atomic(&out.join("scatter.csv"), &csv)?;
    let summary = serde_json::json!({
        "scatter": scatter.summary_json(),
        "selected_config": picked.config,
        "target_error": picked.target_error,
        "proxy_best_error": picked.proxy_trial.full_error,
        "mismatch": spec.proxy,
    });
    write_atomic(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    print_json(&summary)
}

fn with_workload(spec: &ExperimentSpec, command: &Command, common: &Common) -> Result<()> {
    spec.validate()?;
    let space = spec.space.build()?;
    match spec.workload.backend {
        BackendKind::Fedtrain => {
            let w: FedBackend = spec.workload.fed_backend()?;
            dispatch(spec, &space, &w, command, common)
        }
        BackendKind::Surrogate => {
            let w: SurrogateBackend = spec.workload.surrogate_backend(&space)?;
            dispatch(spec, &space, &w, command, common)
        }
    }
}

fn dispatch<W: Workload + Backend>(
    spec: &ExperimentSpec,
    space: &SearchSpace,
    w: &W,
    command: &Command,
    common: &Common,
) -> Result<()> {
    match command {
        Command::Pool(_) => cmd_pool(spec, space, w, common.out()?),
        Command::Tune(_) => cmd_tune(spec, space, w, common.out.as_deref()),
        Command::Proxy(_) => cmd_proxy(spec, space, w, common.out()?),
        _ => unreachable!("handled without a workload"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Report { out } => harness::report(out),
        Command::Sweep(c) | Command::Bootstrap(c) => {
            let mut spec = c.spec()?;
            if matches!(cli.command, Command::Bootstrap(_)) {
                spec.tuner = TunerChoice::Rs;
            }
            let summary = harness::run(&spec, c.out()?)?;
            print_json(&serde_json::to_value(summary)?)
        }
        Command::Pool(c) | Command::Tune(c) | Command::Proxy(c) => {
            let mut spec = c.spec()?;
            if matches!(cli.command, Command::Proxy(_)) {
                spec.tuner = TunerChoice::Proxy;
            }
            with_workload(&spec, &cli.command, c)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
