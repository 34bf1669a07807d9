//! Implementations of the data-producing subcommands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use assort_core::opt::dp::MultivariateConfig;
use assort_core::opt::{self, GreedyConfig, SolveReport, Subproblem};
use assort_core::policy::SolverChoice;
use assort_core::sim::{
    self, fmt_g9, FeatureMode, Instance, InstanceConfig, QualityReport,
};
use assort_core::{mnl, Error};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{load_run_config, PolicySpec, RunConfig};

/// How a command finished; usage and I/O errors travel as `Err` instead.
pub enum Outcome {
    Success,
    /// At least one audited invariant failed.
    InvariantFailure,
}

pub type CmdResult = Result<Outcome, String>;

pub const OUT_DIR_ENV: &str = "ASSORT_OUT_DIR";

/// Output directory precedence: explicit flag, then `ASSORT_OUT_DIR`, then
/// the working directory.
fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from(".")
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Runs closures on a capped rayon pool when the config asks for one.
fn with_thread_cap<T: Send>(
    threads: Option<usize>,
    job: impl FnOnce() -> T + Send,
) -> Result<T, String> {
    match threads {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(fail)?;
            Ok(pool.install(job))
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Run configuration (JSON document).
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for trace, metadata, and aggregate files.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Override the configured replication count.
    #[arg(long)]
    pub replications: Option<u64>,
    /// Override the configured master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn simulate(args: &SimulateArgs) -> CmdResult {
    let mut config = load_run_config(&args.config)?;
    if let Some(reps) = args.replications {
        config.replications = reps;
    }
    if let Some(seed) = args.seed {
        config.instance.seed = seed;
    }
    config.validate().map_err(fail)?;

    let out_dir = resolve_out_dir(args.out_dir.as_deref());
    fs::create_dir_all(&out_dir)
        .map_err(|e| format!("{}: {e}", out_dir.display()))?;

    let spec = &config.policy.0;
    let traces = with_thread_cap(config.threads, || {
        sim::run_replications(&config.instance, |inst| spec.build(inst), config.replications)
    })?
    .map_err(fail)?;

    for trace in &traces {
        let base = out_dir.join(format!("trace_rep{:03}", trace.replication));
        let mut csv = BufWriter::new(
            File::create(base.with_extension("csv")).map_err(fail)?,
        );
        sim::write_trace_csv(&mut csv, trace).map_err(fail)?;
        csv.flush().map_err(fail)?;

        let mut rng = sim::replication_rng(config.instance.seed, trace.replication);
        let instance = Instance::generate(&config.instance, &mut rng).map_err(fail)?;
        let meta = sim::RunMetadata::for_run(&instance, trace);
        let mut meta_out = BufWriter::new(
            File::create(base.with_extension("meta.json")).map_err(fail)?,
        );
        sim::write_metadata_json(&mut meta_out, &meta).map_err(fail)?;
        meta_out.flush().map_err(fail)?;
    }

    let rows = sim::aggregate_cumulative_regret(&traces).map_err(fail)?;
    let mut agg = BufWriter::new(
        File::create(out_dir.join("aggregate.csv")).map_err(fail)?,
    );
    sim::write_aggregate_csv(&mut agg, &rows).map_err(fail)?;
    agg.flush().map_err(fail)?;

    let last = rows.last().expect("horizon >= 1 guarantees at least one row");
    let faults: u64 = traces.iter().map(|t| t.faults).sum();
    println!("policy: {}", spec.id());
    println!("replications: {}", config.replications);
    println!("horizon: {}", config.instance.horizon);
    println!("final mean cumulative regret: {}", fmt_g9(last.mean));
    println!("final stderr: {}", fmt_g9(last.stderr));
    println!("solver faults: {faults}");
    println!("out dir: {}", out_dir.display());
    Ok(Outcome::Success)
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Saved subproblem (JSON document).
    #[arg(long)]
    pub input: PathBuf,
    /// Solver: brute, greedy, dp-univariate, or dp-multivariate.
    #[arg(long, default_value = "greedy")]
    pub solver: String,
    /// Random restarts for the greedy solver.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Discretization step scale for the dynamic programs.
    #[arg(long, default_value_t = 0.01)]
    pub epsilon0: f64,
    /// Confidence-term inflation for the multivariate program.
    #[arg(long, default_value_t = 3.0)]
    pub alpha: f64,
    /// Sampled directions for the multivariate program.
    #[arg(long, default_value_t = 16)]
    pub directions: usize,
    /// Seed for restart and direction sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn solver_from_flags(args: &SolveArgs) -> Result<SolverChoice, String> {
    match args.solver.as_str() {
        "brute" => Ok(SolverChoice::Brute),
        "greedy" => Ok(SolverChoice::Greedy { restarts: args.restarts }),
        "dp-univariate" => Ok(SolverChoice::DpUnivariate { epsilon0: args.epsilon0 }),
        "dp-multivariate" => Ok(SolverChoice::DpMultivariate {
            alpha: args.alpha,
            epsilon0: args.epsilon0,
            directions: args.directions,
        }),
        other => Err(format!(
            "unknown solver `{other}`; expected one of brute, greedy, \
             dp-univariate, dp-multivariate"
        )),
    }
}

pub fn run_solver(
    sub: &Subproblem,
    choice: SolverChoice,
    seed: u64,
) -> Result<SolveReport, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match choice {
        SolverChoice::Brute => opt::brute_force(sub),
        SolverChoice::Greedy { restarts } => {
            let cfg = GreedyConfig { restarts, ..GreedyConfig::default() };
            opt::greedy_swap(sub, &cfg, &mut rng)
        }
        SolverChoice::DpUnivariate { epsilon0 } => opt::dp::approx_univariate(sub, epsilon0),
        SolverChoice::DpMultivariate { alpha, epsilon0, directions } => {
            let cfg = MultivariateConfig { alpha, epsilon0, directions };
            opt::dp::approx_multivariate(sub, &cfg, &mut rng)
        }
    }
}

fn format_items(items: &[usize]) -> String {
    if items.is_empty() {
        return "-".into();
    }
    items
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn solve(args: &SolveArgs) -> CmdResult {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| format!("{}: {e}", args.input.display()))?;
    let sub: Subproblem = serde_json::from_str(&text)
        .map_err(|e| format!("{}: {e}", args.input.display()))?;
    if sub.capacity() > sub.n() {
        eprintln!(
            "warning: capacity {} exceeds item count {}; solving with capacity {}",
            sub.capacity(),
            sub.n(),
            sub.effective_capacity()
        );
    }
    let choice = solver_from_flags(args)?;
    let report = run_solver(&sub, choice, args.seed).map_err(fail)?;
    println!("assortment: {}", format_items(report.assortment.items()));
    println!("size: {}", report.assortment.len());
    println!("estr: {}", fmt_g9(report.estr));
    println!("ci: {}", fmt_g9(report.ci));
    println!("objective: {}", fmt_g9(report.objective));
    println!("iterations: {}", report.iterations);
    Ok(Outcome::Success)
}

#[derive(Debug, Args)]
pub struct QualityArgs {
    /// Optional run configuration; the built-in default is a 10-item,
    /// capacity-4, dimension-5 instance family.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated horizons; each gets its own table row, with the
    /// solver audited at the final period.
    #[arg(long, default_value = "50,200,800")]
    pub horizons: String,
    /// Instances drawn per horizon.
    #[arg(long, default_value_t = 200)]
    pub instances: u64,
    /// Comma-separated percentiles for the gap columns.
    #[arg(long, default_value = "94,96,98,99,99.5")]
    pub percentiles: String,
}

pub fn default_quality_config() -> RunConfig {
    RunConfig {
        instance: InstanceConfig {
            n: 10,
            k: 4,
            d: 5,
            horizon: 800,
            feature_mode: FeatureMode::Changing,
            revenue_range: (0.5, 0.8),
            utility_cap: 500.0,
            seed: 7_654_321,
        },
        policy: crate::config::PolicyDoc(PolicySpec::default()),
        replications: 200,
        threads: None,
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    let values: Result<Vec<T>, _> =
        text.split(',').map(|p| p.trim().parse::<T>()).collect();
    match values {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(format!("could not parse {what} list `{text}`")),
    }
}

/// Audits the per-period solver against exhaustive enumeration on fresh
/// instances and prints one row of gap statistics per horizon.
pub fn quality(args: &QualityArgs) -> CmdResult {
    let base = match &args.config {
        Some(path) => load_run_config(path)?,
        None => default_quality_config(),
    };
    let spec = &base.policy.0;
    if !matches!(spec, PolicySpec::MleUcb { .. }) {
        return Err(format!(
            "the quality audit drives the adaptive policy; got `{}`",
            spec.id()
        ));
    }
    let horizons: Vec<usize> = parse_list(&args.horizons, "horizon")?;
    let percentiles: Vec<f64> = parse_list(&args.percentiles, "percentile")?;
    if args.instances == 0 {
        return Err("need at least one instance per horizon".into());
    }

    let header: Vec<String> = std::iter::once("horizon".to_string())
        .chain(std::iter::once("mean_gap".to_string()))
        .chain(percentiles.iter().map(|p| format!("p{p}")))
        .collect();
    println!("{}", header.join("\t"));

    for &horizon in &horizons {
        let mut cfg = base.instance.clone();
        cfg.horizon = horizon;
        cfg.validate().map_err(fail)?;
        let report = with_thread_cap(base.threads, || {
            sim::greedy_quality_experiment(
                &cfg,
                |inst| spec.build_ucb(inst),
                horizon,
                args.instances,
                &percentiles,
            )
        })?
        .map_err(fail)?;
        let mut row = vec![horizon.to_string(), fmt_g9(report.mean_gap)];
        row.extend(report.percentile_gaps.iter().map(|(_, g)| fmt_g9(*g)));
        println!("{}", row.join("\t"));
    }
    Ok(Outcome::Success)
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    /// Run configuration (JSON document).
    #[arg(long)]
    pub config: PathBuf,
    /// Replications for the solver-versus-enumeration audit.
    #[arg(long, default_value_t = 5)]
    pub audit_replications: u64,
    /// Largest tolerated relative gap before the audit fails.
    #[arg(long, default_value_t = 0.05)]
    pub tolerance: f64,
}

/// Prints instance diagnostics and audits the policy's solver against
/// enumeration at the final period.
pub fn oracle_check(args: &OracleCheckArgs) -> CmdResult {
    let config = load_run_config(&args.config)?;
    let spec = &config.policy.0;

    let mut rng = sim::replication_rng(config.instance.seed, 0);
    let instance = Instance::generate(&config.instance, &mut rng).map_err(fail)?;
    let cfg = instance.config();
    let exploration = match spec.ucb_config(cfg.horizon, cfg.d, cfg.k) {
        Ok(ucb) => ucb.exploration_periods.min(cfg.horizon),
        Err(_) => ((cfg.horizon as f64).sqrt().floor() as usize).clamp(1, cfg.horizon),
    };
    let stats = instance.stats(exploration).map_err(fail)?;

    println!("items: {}", cfg.n);
    println!("capacity: {}", cfg.k);
    println!("dimension: {}", cfg.d);
    println!("horizon: {}", cfg.horizon);
    let theta: Vec<String> =
        instance.theta0().as_vector().iter().map(|&x| fmt_g9(x)).collect();
    println!("theta0: {}", theta.join(";"));
    println!("max feature norm: {}", fmt_g9(stats.nu));
    println!("singleton choice ratio: {}", fmt_g9(stats.rho));
    println!("exploration eigenvalue floor: {}", fmt_g9(stats.lambda0));
    match instance.meta().acceptance_rate() {
        Some(rate) => println!("feature acceptance rate: {}", fmt_g9(rate)),
        None => println!("feature acceptance rate: -"),
    }
    if let Some(truth) = instance.adversarial() {
        println!("planted pattern: {}", format_items(&truth.pattern));
        println!("planted optimum: {}", format_items(&truth.optimal_items));
    }
    let periods = if matches!(cfg.feature_mode, FeatureMode::Fixed) {
        1
    } else {
        cfg.horizon
    };
    let slices: Vec<_> =
        (0..periods).map(|t| instance.slice_at(t).clone()).collect();
    let ratio =
        mnl::exact_choice_ratio(instance.theta0(), &slices, cfg.k).map_err(fail)?;
    println!("offered choice ratio: {}", fmt_g9(ratio));

    if !matches!(spec, PolicySpec::MleUcb { .. }) {
        println!("solver audit: skipped for policy `{}`", spec.id());
        return Ok(Outcome::Success);
    }
    let report: QualityReport = with_thread_cap(config.threads, || {
        sim::greedy_quality_experiment(
            &config.instance,
            |inst| spec.build_ucb(inst),
            config.instance.horizon,
            args.audit_replications,
            &[100.0],
        )
    })?
    .map_err(fail)?;
    let max_gap = report.percentile_gaps[0].1;
    println!(
        "solver audit over {} replications: mean gap {}, max gap {}",
        args.audit_replications,
        fmt_g9(report.mean_gap),
        fmt_g9(max_gap)
    );
    if max_gap > args.tolerance {
        println!(
            "AUDIT FAIL: max gap {} exceeds tolerance {}",
            fmt_g9(max_gap),
            fmt_g9(args.tolerance)
        );
        return Ok(Outcome::InvariantFailure);
    }
    println!("audit ok: gaps within tolerance {}", fmt_g9(args.tolerance));
    Ok(Outcome::Success)
}
