//! Command-line front end: `solve`, `bench` and `sample`.
//!
//! Exit status: 0 on success or convergence, 1 on invalid flags or input
//! files, 2 when the solver stops without converging.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::Error;
use crate::experiments::{
    default_deltas, output_stem, perturbation_to_csv, plan_hash, run_iteration_sweep, run_multistart, run_performance_sweep,
    run_perturbation_sweep, starts_to_csv, write_outputs, ExperimentPlan, MultistartMode, PairPlan, PerturbationKind, SolverOverrides,
};
use crate::io::{format_f64, read_state, write_state};
use crate::linalg::NumericPolicy;
use crate::metrics::{efficiency_eta_star, qsl_for_pair};
use crate::solver::{solve, InitialPhases, MaskSide, SignConvention, SolverRun};
use crate::states::{sample_state, Ensemble, IsospectralPair, PairMode, RngSeed};

pub const SEED_ENV: &str = "BRACHISTO_SEED";
pub const DESK_DIMS: [usize; 10] = [2, 3, 4, 5, 6, 8, 12, 16, 24, 32];

#[derive(Debug, Parser)]
#[command(name = "brachisto", version, about = "Time-efficient Hamiltonians between isospectral quantum states")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one problem and write the run as JSON (or its trace as CSV).
    Solve(SolveArgs),
    /// Run a seeded study and write CSV and JSON results.
    Bench {
        #[command(subcommand)]
        study: BenchCommand,
    },
    /// Write random state files plus a manifest.
    Sample(SampleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

fn parse_epsilon(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("must lie in (0, 1), got {v}"))
    }
}

fn parse_dim(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("`{s}` is not a positive integer"))?;
    if v >= 2 {
        Ok(v)
    } else {
        Err(format!("dimensions must be at least 2, got {v}"))
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("`{s}` is not a positive integer"))?;
    if v >= 1 {
        Ok(v)
    } else {
        Err("must be at least 1".into())
    }
}

fn parse_finite(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a decimal number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be finite, got {s}"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverFlags {
    /// Stop once ‖H∥‖ ≤ ε‖H‖ [default: 1e-4 for haar_pure, 1e-2 otherwise]
    #[arg(long, value_parser = parse_epsilon)]
    pub epsilon: Option<f64>,
    /// Iteration cap [default: 10·⌈log₂ d⌉·⌈ε^(-1/2)⌉, at most 10⁴]
    #[arg(long = "max-iter", value_parser = parse_positive)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum, default_value_t = SignConvention::Plus)]
    pub sign: SignConvention,
    #[arg(long = "mask-side", value_enum, default_value_t = MaskSide::Initial)]
    pub mask_side: MaskSide,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

impl SolverFlags {
    fn epsilon_for(&self, ensemble: Ensemble) -> f64 {
        self.epsilon.unwrap_or(match ensemble {
            Ensemble::HaarPure => 1e-4,
            Ensemble::BuresMixed => 1e-2,
        })
    }

    fn overrides(&self) -> SolverOverrides {
        SolverOverrides {
            max_iterations: self.max_iter,
            sign_convention: Some(self.sign),
            mask_side: Some(self.mask_side),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Initial state file.
    #[arg(long, requires = "sigma", conflicts_with = "random")]
    pub rho: Option<PathBuf>,
    /// Target state file.
    #[arg(long, requires = "rho")]
    pub sigma: Option<PathBuf>,
    /// Draw a random problem of this dimension instead of reading files.
    #[arg(long, value_parser = parse_dim)]
    pub random: Option<usize>,
    #[arg(long, value_enum, default_value_t = Ensemble::BuresMixed)]
    pub ensemble: Ensemble,
    #[arg(long = "pair-mode", value_enum, default_value_t = PairMode::Conjugate)]
    pub pair_mode: PairMode,
    /// Give σ the spectrum of ρ instead of rejecting non-isospectral inputs.
    #[arg(long = "project-spectrum")]
    pub project_spectrum: bool,
    /// Comma-separated initial phases in radians.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = parse_finite)]
    pub phases: Option<Vec<f64>>,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// `json` writes the run, `csv` writes the per-iteration trace.
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    #[arg(long, default_value = "solver-run.json")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchFlags {
    #[command(flatten)]
    pub solver: SolverFlags,
    #[arg(long, value_enum, default_value_t = Ensemble::BuresMixed)]
    pub ensemble: Ensemble,
    #[arg(long = "pair-mode", value_enum, default_value_t = PairMode::Conjugate)]
    pub pair_mode: PairMode,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Only write this format [default: both].
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_dim, default_values_t = DESK_DIMS)]
    pub dims: Vec<usize>,
    #[arg(long, value_parser = parse_positive, default_value_t = 100)]
    pub samples: usize,
    #[command(flatten)]
    pub common: BenchFlags,
}

#[derive(Debug, Clone, Args)]
pub struct MultistartArgs {
    #[arg(long, value_parser = parse_dim, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, value_parser = parse_positive, default_value_t = 100)]
    pub starts: usize,
    /// Stop every start once another has converged in fewer steps.
    #[arg(long = "first-converged")]
    pub first_converged: bool,
    #[command(flatten)]
    pub common: BenchFlags,
}

#[derive(Debug, Clone, Args)]
pub struct PerturbationArgs {
    #[arg(long, value_parser = parse_dim, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = PerturbationKind::Unitary)]
    pub kind: PerturbationKind,
    /// Comma-separated perturbation strengths [default: 10^-6 … 10^-2 in half decades].
    #[arg(long, value_delimiter = ',', value_parser = parse_finite)]
    pub deltas: Option<Vec<f64>>,
    #[command(flatten)]
    pub common: BenchFlags,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Time ratio against the speed limit per dimension.
    Performance(SweepArgs),
    /// Iteration counts per dimension with a logarithmic fit.
    Iterations(SweepArgs),
    /// Many random starts on one random pair.
    Multistart(MultistartArgs),
    /// Sensitivity of the solution to perturbing the initial state.
    Perturbation(PerturbationArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[arg(long, value_enum, default_value_t = Ensemble::BuresMixed)]
    pub ensemble: Ensemble,
    #[arg(long, value_parser = parse_dim)]
    pub dim: usize,
    #[arg(long, value_parser = parse_positive, default_value_t = 1)]
    pub count: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub output: PathBuf,
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    NotConverged,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args`, runs the command and maps the outcome to an exit status.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let metadata = json!({
        "program": "brachisto",
        "version": env!("CARGO_PKG_VERSION"),
        "args": args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect::<Vec<_>>(),
    });
    match run(cli, &metadata) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::NotConverged) => ExitCode::from(2),
    }
}

pub fn run(cli: Cli, metadata: &serde_json::Value) -> CmdResult {
    match cli.command {
        Command::Solve(args) => cmd_solve(&args, metadata),
        Command::Bench { study } => cmd_bench(study, metadata),
        Command::Sample(args) => cmd_sample(&args, metadata),
    }
}

fn with_seed(metadata: &serde_json::Value, seed: u64) -> serde_json::Value {
    let mut m = metadata.clone();
    m["seed"] = json!(seed);
    m
}

fn load_pair(args: &SolveArgs, policy: &NumericPolicy) -> std::result::Result<(IsospectralPair, RngSeed), Failure> {
    let seed = args.solver.seed;
    match (&args.rho, &args.sigma, args.random) {
        (Some(rho_path), Some(sigma_path), None) => {
            let rho = read_state(rho_path, policy).map_err(|e| Failure::Input(format!("--rho {}: {e}", rho_path.display())))?;
            let sigma = read_state(sigma_path, policy).map_err(|e| Failure::Input(format!("--sigma {}: {e}", sigma_path.display())))?;
            let pair = if args.project_spectrum {
                IsospectralPair::project_spectrum(rho, &sigma, policy)
            } else {
                IsospectralPair::new(rho, sigma, policy)
            }
            .map_err(|e| Failure::Input(format!("{e} (pass --project-spectrum to give σ the spectrum of ρ)")))?;
            Ok((pair, RngSeed::new(seed, "solve")))
        }
        (None, None, Some(d)) => {
            let mut plan = PairPlan::new(d, args.ensemble, seed);
            plan.pair_mode = args.pair_mode;
            let pair = plan.pair()?;
            Ok((pair, plan.solver_seed()))
        }
        _ => Err(Failure::Input("give either --rho and --sigma, or --random <D>".into())),
    }
}

fn trace_csv(run: &SolverRun) -> crate::error::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "index",
        "parallel_ratio",
        "sigma_parallel_ratio",
        "efficiency_star",
        "hamiltonian_hs_norm",
        "mapping_residual",
        "geometric_phases",
    ])?;
    for r in &run.iterations {
        let phases = r
            .geometric_phases
            .as_ref()
            .map(|p| p.iter().map(|&x| format_f64(x)).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        w.write_record([
            r.index.to_string(),
            format_f64(r.parallel_ratio),
            format_f64(r.sigma_parallel_ratio),
            r.efficiency_star.map(format_f64).unwrap_or_default(),
            format_f64(r.hamiltonian_hs_norm),
            format_f64(r.mapping_residual),
            phases,
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn write_file(path: &Path, body: &str) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Input(format!("--output {}: {e}", path.display())))?;
    }
    fs::write(path, body).map_err(|e| Failure::Input(format!("--output {}: {e}", path.display())))
}

fn cmd_solve(args: &SolveArgs, metadata: &serde_json::Value) -> CmdResult {
    let policy = NumericPolicy::DEFAULT;
    let (pair, rng) = load_pair(args, &policy)?;
    let ensemble = if pair.rho.is_pure(1e-9) { Ensemble::HaarPure } else { Ensemble::BuresMixed };
    let mut config = args.solver.overrides().config(args.solver.epsilon_for(ensemble), rng);
    if let Some(phases) = &args.phases {
        config.initial_phases = InitialPhases::Phases(phases.clone());
    }
    let mut run = solve(&pair, &config).map_err(|e| match e {
        Error::PhaseArity { .. } => Failure::Input(format!("--phases: {e}")),
        other => Failure::Input(other.to_string()),
    })?;
    run.metadata = Some(with_seed(metadata, args.solver.seed));

    let h = &run.final_hamiltonian;
    let ratio = qsl_for_pair(&pair, h).ok().map(|q| q.time_ratio);
    let eta = efficiency_eta_star(h, &pair.rho).ok();
    println!(
        "n={} converged={} time_ratio={} eta_star={}",
        run.steps(),
        run.converged,
        ratio.map(format_f64).unwrap_or_else(|| "undefined".into()),
        eta.map(format_f64).unwrap_or_else(|| "undefined".into()),
    );
    let body = match args.format {
        OutputFormat::Json => serde_json::to_string_pretty(&run).map_err(Error::from)?,
        OutputFormat::Csv => trace_csv(&run)?,
    };
    write_file(&args.output, &body)?;
    println!("wrote {}", args.output.display());
    if run.converged {
        Ok(())
    } else {
        eprintln!("did not converge within {} iterations", run.steps());
        Err(Failure::NotConverged)
    }
}

fn emit(common: &BenchFlags, kind: &str, hash: &str, csv: String, json: String) -> CmdResult {
    let stem = output_stem(kind, hash, common.solver.seed);
    let csv = (common.format != Some(OutputFormat::Json)).then_some(csv);
    let json = (common.format != Some(OutputFormat::Csv)).then_some(json);
    let written = write_outputs(&common.output, &stem, csv.as_deref(), json.as_deref())
        .map_err(|e| Failure::Input(format!("--output {}: {e}", common.output.display())))?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
}

fn sweep_plan(args: &SweepArgs) -> ExperimentPlan {
    let c = &args.common;
    let mut plan = ExperimentPlan::new(args.dims.clone(), args.samples, c.solver.epsilon_for(c.ensemble), c.ensemble, c.solver.seed);
    plan.pair_mode = c.pair_mode;
    plan.solver = c.solver.overrides();
    plan
}

fn cmd_bench(study: BenchCommand, metadata: &serde_json::Value) -> CmdResult {
    match study {
        BenchCommand::Performance(args) => {
            let plan = sweep_plan(&args);
            let sweep = run_performance_sweep(&plan, args.common.jobs)?;
            for s in &sweep.summary.per_dim {
                println!(
                    "d={} mean_ratio={} median_ratio={} ci90=[{}, {}] converged={}/{} failed={} zero_bound={}",
                    s.dim,
                    fmt_opt(s.mean_ratio),
                    fmt_opt(s.median_ratio),
                    fmt_opt(s.ci90.map(|c| c.lo)),
                    fmt_opt(s.ci90.map(|c| c.hi)),
                    s.converged,
                    s.trials,
                    s.failed,
                    s.degenerate_excluded
                );
            }
            let meta = with_seed(metadata, plan.base_seed.seed);
            emit(&args.common, "performance", &plan.hash(), sweep.csv()?, sweep.json("performance", Some(&meta))?)
        }
        BenchCommand::Iterations(args) => {
            let plan = sweep_plan(&args);
            let sweep = run_iteration_sweep(&plan, args.common.jobs)?;
            for s in &sweep.summary.per_dim {
                println!(
                    "d={} mean_n={} median_n={} converged={}/{}",
                    s.dim,
                    fmt_opt(s.mean_n),
                    fmt_opt(s.median_n),
                    s.converged,
                    s.trials
                );
            }
            if let Some(fit) = sweep.summary.log_fit {
                println!(
                    "fit: n = {:.4} + {:.4}·ln d (R² = {:.4}); nondecreasing={}",
                    fit.intercept, fit.slope, fit.r_squared, sweep.summary.nondecreasing
                );
            }
            let meta = with_seed(metadata, plan.base_seed.seed);
            emit(&args.common, "iterations", &plan.hash(), sweep.csv()?, sweep.json("iterations", Some(&meta))?)
        }
        BenchCommand::Multistart(args) => {
            let c = &args.common;
            let mut pair_plan = PairPlan::new(args.dim, c.ensemble, c.solver.seed);
            pair_plan.pair_mode = c.pair_mode;
            let pair = pair_plan.pair()?;
            let config = c.solver.overrides().config(c.solver.epsilon_for(c.ensemble), pair_plan.solver_seed());
            let mode = if args.first_converged { MultistartMode::FirstConverged } else { MultistartMode::Complete };
            let plan = json!({ "pair": pair_plan, "starts": args.starts, "mode": mode, "config": config });
            let report = run_multistart(&pair, args.starts, &config, mode, c.jobs)?;
            println!(
                "d={} starts={} min_n={} p20_n={} median_n={} ratio_spread={} consistent={}",
                report.dim,
                args.starts,
                report.min_n.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
                fmt_opt(report.p20_n),
                fmt_opt(report.median_n),
                fmt_opt(report.ratio_spread),
                report.consistent.map(|b| b.to_string()).unwrap_or_else(|| "-".into()),
            );
            let json = serde_json::to_string_pretty(&json!({
                "kind": "multistart",
                "plan": plan,
                "plan_hash": plan_hash(&plan),
                "metadata": with_seed(metadata, c.solver.seed),
                "report": report,
            }))
            .map_err(Error::from)?;
            emit(c, "multistart", &plan_hash(&plan), starts_to_csv(&report.starts)?, json)
        }
        BenchCommand::Perturbation(args) => {
            let c = &args.common;
            let mut pair_plan = PairPlan::new(args.dim, c.ensemble, c.solver.seed);
            pair_plan.pair_mode = c.pair_mode;
            let pair = pair_plan.pair()?;
            let epsilon = c.solver.epsilon.unwrap_or(1e-3);
            let config = c.solver.overrides().config(epsilon, pair_plan.solver_seed());
            let deltas = args.deltas.clone().unwrap_or_else(default_deltas);
            let plan = json!({ "pair": pair_plan, "kind": args.kind, "deltas": deltas, "config": config });
            let report = run_perturbation_sweep(&pair, &deltas, args.kind, &config, c.jobs)?;
            for p in &report.points {
                println!("delta={:.3e} deviation={} converged={}", p.delta, fmt_opt(p.deviation), p.converged);
            }
            println!(
                "spearman={} p_value={} increasing={}",
                fmt_opt(report.spearman),
                fmt_opt(report.p_value),
                report.trend_increasing.map(|b| b.to_string()).unwrap_or_else(|| "-".into())
            );
            let json = serde_json::to_string_pretty(&json!({
                "kind": "perturbation",
                "plan": plan,
                "plan_hash": plan_hash(&plan),
                "metadata": with_seed(metadata, c.solver.seed),
                "report": report,
            }))
            .map_err(Error::from)?;
            emit(c, "perturbation", &plan_hash(&plan), perturbation_to_csv(&report.points)?, json)
        }
    }
}

fn cmd_sample(args: &SampleArgs, metadata: &serde_json::Value) -> CmdResult {
    let policy = NumericPolicy::DEFAULT;
    let out_err = |e: std::io::Error| Failure::Input(format!("--output {}: {e}", args.output.display()));
    fs::create_dir_all(&args.output).map_err(out_err)?;
    let base = RngSeed::new(args.seed, "sample").child(format!("{}/d{}", args.ensemble, args.dim));
    let mut files = Vec::with_capacity(args.count);
    for k in 0..args.count {
        let rho = sample_state(args.ensemble, args.dim, &mut base.child(k).rng(), &policy)?;
        let name = format!("{}-d{}-seed{}-{k:04}.json", args.ensemble, args.dim, args.seed);
        write_state(&args.output.join(&name), &rho).map_err(|e| Failure::Input(format!("--output {}: {e}", args.output.display())))?;
        let rank = rho.spectrum().iter().filter(|&&l| l > policy.degeneracy_tol).count();
        files.push(json!({ "file": name, "purity": rho.purity(), "rank": rank }));
    }
    let manifest = json!({
        "ensemble": args.ensemble,
        "dim": args.dim,
        "count": args.count,
        "seed": args.seed,
        "metadata": with_seed(metadata, args.seed),
        "files": files,
    });
    let path = args.output.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n").map_err(out_err)?;
    println!("wrote {} states and {}", args.count, path.display());
    Ok(())
}
