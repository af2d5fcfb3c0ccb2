//! Seeded, order-independent experiment sweeps and their result files.
//!
//! Every trial derives its own random stream from the plan's base seed and
//! its `(ensemble, dim, trial)` coordinates, so a record depends on nothing
//! but the plan and its index. Records are collected in index order, which
//! makes serial and parallel runs emit identical CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::io::format_f64;
use crate::linalg::{ComplexMatrix, NumericPolicy};
use crate::metrics::{efficiency_eta_star, qsl_for_pair, qsl_mixed, qsl_pure};
use crate::parallel::map_trials;
use crate::solver::{resolve_initial_phases, solve, solve_with_stop, MaskSide, SignConvention, SolverConfig, SolverRun};
use crate::states::{
    perturb_convex_with, perturb_unitary_with, sample_bures_mixed, sample_pair, sample_unit_hamiltonian, DensityMatrix, Ensemble,
    IsospectralPair, PairMode, RngSeed,
};
use crate::stats::{
    bootstrap_mean_ci, bootstrap_mean_difference_quantile, histogram, isotonic_increasing, linear_fit, mean, median, percentile,
    spearman, spearman_permutation_p, Interval, LinearFit,
};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const TREND_PERMUTATIONS: usize = 9999;

/// Solver settings a plan may override; everything else uses the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverOverrides {
    pub max_iterations: Option<usize>,
    pub sign_convention: Option<SignConvention>,
    pub mask_side: Option<MaskSide>,
}

impl SolverOverrides {
    pub fn config(&self, epsilon: f64, rng: RngSeed) -> SolverConfig {
        let mut config = SolverConfig::new(epsilon).with_rng(rng);
        config.max_iterations = self.max_iterations;
        if let Some(sign) = self.sign_convention {
            config.sign_convention = sign;
        }
        if let Some(side) = self.mask_side {
            config.mask_side = side;
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub dims: Vec<usize>,
    pub samples_per_dim: usize,
    pub epsilon: f64,
    pub ensemble: Ensemble,
    #[serde(default)]
    pub pair_mode: PairMode,
    pub base_seed: RngSeed,
    #[serde(default)]
    pub solver: SolverOverrides,
}

impl ExperimentPlan {
    pub fn new(dims: Vec<usize>, samples_per_dim: usize, epsilon: f64, ensemble: Ensemble, seed: u64) -> Self {
        Self {
            dims,
            samples_per_dim,
            epsilon,
            ensemble,
            pair_mode: PairMode::Conjugate,
            base_seed: RngSeed::new(seed, "experiment"),
            solver: SolverOverrides::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(invalid("dims", "at least one dimension is required"));
        }
        if let Some(d) = self.dims.iter().find(|&&d| d < 2) {
            return Err(invalid("dims", format!("every dimension must be at least 2, got {d}")));
        }
        if self.samples_per_dim == 0 {
            return Err(invalid("samples", "must be at least 1"));
        }
        self.solver.config(self.epsilon, self.base_seed.clone()).validate()
    }

    pub fn trial_seed(&self, dim: usize, trial: usize) -> RngSeed {
        self.base_seed.child(format!("{}/d{dim}/t{trial}", self.ensemble))
    }

    pub fn hash(&self) -> String {
        plan_hash(self)
    }

    fn trial_count(&self) -> usize {
        self.dims.len() * self.samples_per_dim
    }

    fn coordinates(&self, index: usize) -> (usize, usize) {
        (self.dims[index / self.samples_per_dim], index % self.samples_per_dim)
    }
}

/// First 16 hex digits of the SHA-256 of the plan's JSON form.
pub fn plan_hash<T: Serialize>(plan: &T) -> String {
    let text = serde_json::to_string(plan).expect("plans serialize");
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn output_stem(kind: &str, hash: &str, seed: u64) -> String {
    format!("{kind}-{hash}-seed{seed}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Converged,
    NotConverged,
    Failed,
}

impl TrialStatus {
    fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Converged => "converged",
            TrialStatus::NotConverged => "not_converged",
            TrialStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub dim: usize,
    pub trial: usize,
    /// Stream id of the trial's seed.
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub status: TrialStatus,
    pub t_qsl: Option<f64>,
    /// `None` when the bound is zero or the trial failed.
    pub time_ratio: Option<f64>,
    pub efficiency_star: Option<f64>,
    pub error: Option<String>,
}

/// A record plus its wall-clock time, kept apart so that records stay
/// bitwise reproducible.
#[derive(Debug, Clone)]
pub struct TimedRecord {
    pub record: ExperimentRecord,
    pub wall_time: f64,
}

pub fn run_trial(plan: &ExperimentPlan, dim: usize, trial: usize) -> TimedRecord {
    let start = Instant::now();
    let seed = plan.trial_seed(dim, trial);
    let mut record = ExperimentRecord {
        dim,
        trial,
        seed: seed.stream_id(),
        iterations: 0,
        converged: false,
        status: TrialStatus::Failed,
        t_qsl: None,
        time_ratio: None,
        efficiency_star: None,
        error: None,
    };
    if let Err(e) = fill_trial(plan, &seed, &mut record) {
        record.status = TrialStatus::Failed;
        record.error = Some(e.to_string());
    }
    TimedRecord {
        record,
        wall_time: start.elapsed().as_secs_f64(),
    }
}

fn fill_trial(plan: &ExperimentPlan, seed: &RngSeed, record: &mut ExperimentRecord) -> Result<()> {
    let policy = NumericPolicy::DEFAULT;
    let pair = sample_pair(plan.ensemble, plan.pair_mode, record.dim, &mut seed.child("pair").rng(), &policy)?;
    let config = plan.solver.config(plan.epsilon, seed.child("solver"));
    let run = solve(&pair, &config)?;
    record.iterations = run.steps();
    record.converged = run.converged;
    record.status = if run.converged { TrialStatus::Converged } else { TrialStatus::NotConverged };
    let h = &run.final_hamiltonian;
    let report = match plan.ensemble {
        Ensemble::HaarPure => qsl_pure(&pair.rho, &pair.sigma, h)?,
        Ensemble::BuresMixed => qsl_mixed(&pair.rho, &pair.sigma, h)?,
    };
    record.t_qsl = Some(report.t_qsl);
    record.time_ratio = report.finite_ratio();
    record.efficiency_star = efficiency_eta_star(h, &pair.rho).ok();
    Ok(())
}

/// Runs every `(dim, trial)` of the plan.
pub fn run_trials(plan: &ExperimentPlan, jobs: usize) -> Result<Vec<TimedRecord>> {
    plan.validate()?;
    Ok(map_trials(plan.trial_count(), jobs, |index| {
        let (dim, trial) = plan.coordinates(index);
        run_trial(plan, dim, trial)
    }))
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

pub const RECORD_CSV_HEADER: [&str; 10] = [
    "dim",
    "trial",
    "seed",
    "iterations",
    "converged",
    "status",
    "t_qsl",
    "time_ratio",
    "efficiency_star",
    "error",
];

pub fn records_to_csv(records: &[ExperimentRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RECORD_CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.dim.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.status.as_str().to_string(),
            opt_f64(r.t_qsl),
            opt_f64(r.time_ratio),
            opt_f64(r.efficiency_star),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| crate::error::Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| crate::error::Error::Format(e.to_string()))
}

fn records_for(records: &[ExperimentRecord], dim: usize) -> impl Iterator<Item = &ExperimentRecord> {
    records.iter().filter(move |r| r.dim == dim)
}

fn dims_in_order(records: &[ExperimentRecord]) -> Vec<usize> {
    let mut dims: Vec<usize> = Vec::new();
    for r in records {
        if !dims.contains(&r.dim) {
            dims.push(r.dim);
        }
    }
    dims
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceDimSummary {
    pub dim: usize,
    pub trials: usize,
    pub converged: usize,
    pub not_converged: usize,
    pub failed: usize,
    /// Converged trials left out because their bound is zero.
    pub degenerate_excluded: usize,
    pub mean_ratio: Option<f64>,
    pub median_ratio: Option<f64>,
    pub min_ratio: Option<f64>,
    pub max_ratio: Option<f64>,
    pub ci90: Option<Interval>,
    pub ci99: Option<Interval>,
    /// Nondecreasing (isotonic) fit of the 90% bounds across dimensions.
    pub smoothed_ci90: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceSummary {
    pub per_dim: Vec<PerformanceDimSummary>,
    pub smoother: String,
}

/// Per-dimension ratio statistics over converged trials with a nonzero bound.
pub fn performance_summary(seed: &RngSeed, records: &[ExperimentRecord]) -> PerformanceSummary {
    let mut per_dim: Vec<PerformanceDimSummary> = dims_in_order(records)
        .into_iter()
        .map(|dim| {
            let rs: Vec<&ExperimentRecord> = records_for(records, dim).collect();
            let converged: Vec<&&ExperimentRecord> = rs.iter().filter(|r| r.converged).collect();
            let ratios: Vec<f64> = converged.iter().filter_map(|r| r.time_ratio).collect();
            let mut rng = seed.child(format!("bootstrap/d{dim}")).rng();
            PerformanceDimSummary {
                dim,
                trials: rs.len(),
                converged: converged.len(),
                not_converged: rs.iter().filter(|r| r.status == TrialStatus::NotConverged).count(),
                failed: rs.iter().filter(|r| r.status == TrialStatus::Failed).count(),
                degenerate_excluded: converged.len() - ratios.len(),
                mean_ratio: mean(&ratios),
                median_ratio: median(&ratios),
                min_ratio: ratios.iter().copied().reduce(f64::min),
                max_ratio: ratios.iter().copied().reduce(f64::max),
                ci90: bootstrap_mean_ci(&ratios, 0.90, BOOTSTRAP_RESAMPLES, &mut rng),
                ci99: bootstrap_mean_ci(&ratios, 0.99, BOOTSTRAP_RESAMPLES, &mut rng),
                smoothed_ci90: None,
            }
        })
        .collect();

    let with_ci: Vec<usize> = (0..per_dim.len()).filter(|&k| per_dim[k].ci90.is_some()).collect();
    let weights: Vec<f64> = with_ci.iter().map(|&k| per_dim[k].converged as f64).collect();
    let lo: Vec<f64> = with_ci.iter().map(|&k| per_dim[k].ci90.unwrap().lo).collect();
    let hi: Vec<f64> = with_ci.iter().map(|&k| per_dim[k].ci90.unwrap().hi).collect();
    let (lo, hi) = (isotonic_increasing(&lo, &weights), isotonic_increasing(&hi, &weights));
    for (j, &k) in with_ci.iter().enumerate() {
        per_dim[k].smoothed_ci90 = Some(Interval { lo: lo[j], hi: hi[j] });
    }
    PerformanceSummary {
        per_dim,
        smoother: "isotonic nondecreasing least-squares fit (pool adjacent violators), weighted by converged count".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDimSummary {
    pub dim: usize,
    pub trials: usize,
    pub converged: usize,
    pub mean_n: Option<f64>,
    pub median_n: Option<f64>,
    pub histogram: BTreeMap<usize, usize>,
}

/// Bootstrap check of one step `d_from → d_to`: `upper` is the 95th
/// percentile of `n̄(d_to) − n̄(d_from)`; the step passes unless it is
/// negative, i.e. a significant decrease.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneStep {
    pub from: usize,
    pub to: usize,
    pub mean_difference: f64,
    pub upper: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub per_dim: Vec<IterationDimSummary>,
    /// `n̄ ≈ a + b ln d`.
    pub log_fit: Option<LinearFit>,
    pub steps: Vec<MonotoneStep>,
    pub nondecreasing: bool,
}

/// Iteration statistics over converged trials.
pub fn iteration_summary(seed: &RngSeed, records: &[ExperimentRecord]) -> IterationSummary {
    let dims = dims_in_order(records);
    let counts: Vec<Vec<f64>> = dims
        .iter()
        .map(|&d| records_for(records, d).filter(|r| r.converged).map(|r| r.iterations as f64).collect())
        .collect();
    let per_dim: Vec<IterationDimSummary> = dims
        .iter()
        .zip(&counts)
        .map(|(&dim, n)| IterationDimSummary {
            dim,
            trials: records_for(records, dim).count(),
            converged: n.len(),
            mean_n: mean(n),
            median_n: median(n),
            histogram: histogram(records_for(records, dim).filter(|r| r.converged).map(|r| r.iterations)),
        })
        .collect();

    let (xs, ys): (Vec<f64>, Vec<f64>) = per_dim
        .iter()
        .filter_map(|s| s.mean_n.map(|m| ((s.dim as f64).ln(), m)))
        .unzip();
    let log_fit = linear_fit(&xs, &ys);

    let mut steps = Vec::new();
    for k in 1..dims.len() {
        let (a, b) = (&counts[k - 1], &counts[k]);
        let mut rng = seed.child(format!("monotone/d{}-d{}", dims[k - 1], dims[k])).rng();
        if let (Some(ma), Some(mb), Some(upper)) = (
            mean(a),
            mean(b),
            bootstrap_mean_difference_quantile(a, b, 0.95, BOOTSTRAP_RESAMPLES, &mut rng),
        ) {
            steps.push(MonotoneStep {
                from: dims[k - 1],
                to: dims[k],
                mean_difference: mb - ma,
                upper,
                passes: upper >= 0.0,
            });
        }
    }
    let nondecreasing = steps.iter().all(|s| s.passes);
    IterationSummary {
        per_dim,
        log_fit,
        steps,
        nondecreasing,
    }
}

#[derive(Debug, Clone)]
pub struct Sweep<S> {
    pub plan: ExperimentPlan,
    pub records: Vec<ExperimentRecord>,
    pub wall_times: Vec<f64>,
    pub summary: S,
}

#[derive(Serialize)]
struct SweepFile<'a, S: Serialize> {
    kind: &'a str,
    plan: &'a ExperimentPlan,
    plan_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    metadata: Option<&'a serde_json::Value>,
    summary: &'a S,
    records: &'a [ExperimentRecord],
    wall_time_seconds: &'a [f64],
}

impl<S: Serialize> Sweep<S> {
    pub fn csv(&self) -> Result<String> {
        records_to_csv(&self.records)
    }

    pub fn json(&self, kind: &str, metadata: Option<&serde_json::Value>) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SweepFile {
            kind,
            plan: &self.plan,
            plan_hash: self.plan.hash(),
            metadata,
            summary: &self.summary,
            records: &self.records,
            wall_time_seconds: &self.wall_times,
        })?)
    }
}

fn sweep<S>(plan: &ExperimentPlan, jobs: usize, summarize: impl FnOnce(&RngSeed, &[ExperimentRecord]) -> S) -> Result<Sweep<S>> {
    let timed = run_trials(plan, jobs)?;
    let (records, wall_times): (Vec<_>, Vec<_>) = timed.into_iter().map(|t| (t.record, t.wall_time)).unzip();
    let summary = summarize(&plan.base_seed.child("summary"), &records);
    Ok(Sweep {
        plan: plan.clone(),
        records,
        wall_times,
        summary,
    })
}

pub fn run_performance_sweep(plan: &ExperimentPlan, jobs: usize) -> Result<Sweep<PerformanceSummary>> {
    sweep(plan, jobs, performance_summary)
}

pub fn run_iteration_sweep(plan: &ExperimentPlan, jobs: usize) -> Result<Sweep<IterationSummary>> {
    sweep(plan, jobs, iteration_summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MultistartMode {
    /// Every start runs to completion; percentiles are reported.
    #[default]
    Complete,
    /// Starts stop once another start has converged in fewer steps; only
    /// the minimum and the winning run are reported.
    FirstConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub start: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub cancelled: bool,
    pub time_ratio: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultistartReport {
    pub dim: usize,
    pub epsilon: f64,
    pub mode: MultistartMode,
    /// Every start in complete mode; only the winner in first-converged
    /// mode, where the other starts' counts depend on scheduling.
    pub starts: Vec<StartRecord>,
    /// `None` in first-converged mode.
    pub converged: Option<usize>,
    pub min_n: Option<usize>,
    pub p20_n: Option<f64>,
    pub median_n: Option<f64>,
    /// `max − min` of the converged time ratios.
    pub ratio_spread: Option<f64>,
    /// `ratio_spread ≤ 10ε`.
    pub consistent: Option<bool>,
    pub best_start: Option<usize>,
    pub best_run: Option<SolverRun>,
}

pub fn start_config(config: &SolverConfig, start: usize) -> SolverConfig {
    let mut c = config.clone().with_rng(config.rng.child(format!("start{start}")));
    c.initial_phases = crate::solver::InitialPhases::Uniform;
    c
}

/// Solves one pair from `num_starts` uniformly drawn phase vectors.
pub fn run_multistart(
    pair: &IsospectralPair,
    num_starts: usize,
    config: &SolverConfig,
    mode: MultistartMode,
    jobs: usize,
) -> Result<MultistartReport> {
    if num_starts == 0 {
        return Err(invalid("starts", "must be at least 1"));
    }
    config.validate()?;
    let best = AtomicUsize::new(usize::MAX);
    let outcomes: Vec<(StartRecord, Option<SolverRun>)> = map_trials(num_starts, jobs, |start| {
        let c = start_config(config, start);
        let result = match mode {
            MultistartMode::Complete => solve(pair, &c),
            MultistartMode::FirstConverged => solve_with_stop(pair, &c, |j| j >= best.load(Ordering::Relaxed)),
        };
        let mut record = StartRecord {
            start,
            seed: c.rng.stream_id(),
            iterations: 0,
            converged: false,
            cancelled: false,
            time_ratio: None,
            error: None,
        };
        match result {
            Ok(run) => {
                record.iterations = run.steps();
                record.converged = run.converged;
                record.cancelled = run.cancelled;
                if run.converged {
                    best.fetch_min(run.steps(), Ordering::Relaxed);
                }
                match qsl_for_pair(pair, &run.final_hamiltonian) {
                    Ok(q) => record.time_ratio = q.finite_ratio(),
                    Err(e) => record.error = Some(e.to_string()),
                }
                (record, Some(run))
            }
            Err(e) => {
                record.error = Some(e.to_string());
                (record, None)
            }
        }
    });

    let best_start = outcomes
        .iter()
        .filter(|(r, _)| r.converged)
        .min_by_key(|(r, _)| (r.iterations, r.start))
        .map(|(r, _)| r.start);
    let converged_n: Vec<f64> = outcomes.iter().filter(|(r, _)| r.converged).map(|(r, _)| r.iterations as f64).collect();
    let ratios: Vec<f64> = outcomes.iter().filter(|(r, _)| r.converged).filter_map(|(r, _)| r.time_ratio).collect();
    let spread = ratios
        .iter()
        .copied()
        .reduce(f64::max)
        .zip(ratios.iter().copied().reduce(f64::min))
        .map(|(hi, lo)| hi - lo);
    let complete = mode == MultistartMode::Complete;
    let consistent = if complete { spread.map(|s| s <= 10.0 * config.epsilon) } else { None };
    if consistent == Some(false) {
        eprintln!(
            "WARNING: converged starts disagree on the time ratio: spread {:.6e} exceeds 10·ε = {:.6e}",
            spread.unwrap_or(f64::NAN),
            10.0 * config.epsilon
        );
    }

    let mut best_run = None;
    let mut starts = Vec::with_capacity(outcomes.len());
    for (record, run) in outcomes {
        if Some(record.start) == best_start {
            best_run = run;
            if !complete {
                starts.push(record.clone());
            }
        }
        if complete {
            starts.push(record);
        }
    }
    Ok(MultistartReport {
        dim: pair.dim(),
        epsilon: config.epsilon,
        mode,
        converged: complete.then_some(converged_n.len()),
        min_n: best_run.as_ref().map(|r| r.steps()),
        p20_n: if complete { percentile(&converged_n, 0.2) } else { None },
        median_n: if complete { median(&converged_n) } else { None },
        ratio_spread: if complete { spread } else { None },
        consistent,
        best_start,
        best_run,
        starts,
    })
}

pub fn starts_to_csv(starts: &[StartRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["start", "seed", "iterations", "converged", "cancelled", "time_ratio", "error"])?;
    for s in starts {
        w.write_record([
            s.start.to_string(),
            s.seed.to_string(),
            s.iterations.to_string(),
            s.converged.to_string(),
            s.cancelled.to_string(),
            opt_f64(s.time_ratio),
            s.error.clone().unwrap_or_default(),
        ])?;
    }
    finish_csv(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// `ρ′ = (1 − δ)ρ + δχ`, `σ′` from the eigenvector-matching unitary.
    Convex,
    /// `ρ′ = e^{iδV} ρ e^{−iδV}`, `σ` unchanged.
    Unitary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPoint {
    pub delta: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `‖H − H′‖_HS / ‖H‖_HS`.
    pub deviation: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub kind: PerturbationKind,
    pub epsilon: f64,
    pub baseline_iterations: usize,
    pub points: Vec<PerturbationPoint>,
    /// Rank correlation of deviation against δ over the converged points.
    pub spearman: Option<f64>,
    /// One-sided permutation p-value for a positive correlation.
    pub p_value: Option<f64>,
    pub trend_increasing: Option<bool>,
}

/// Half-decade grid from 10⁻⁶ to 10⁻².
pub fn default_deltas() -> Vec<f64> {
    (0..9).map(|k| 10f64.powf(-6.0 + 0.5 * k as f64)).collect()
}

/// The perturbed problem for one δ.
pub fn perturbed_pair(
    pair: &IsospectralPair,
    delta: f64,
    kind: PerturbationKind,
    direction: &Direction,
    policy: &NumericPolicy,
) -> Result<IsospectralPair> {
    match (kind, direction) {
        (PerturbationKind::Convex, Direction::State(chi)) => {
            let rho = perturb_convex_with(&pair.rho, delta, chi, policy)?.aligned_to(&pair.rho, policy)?;
            let sigma = DensityMatrix::from_spectral(rho.spectrum(), &(pair.eigenvector_map() * rho.eigenbasis()), policy)?;
            IsospectralPair::new(rho, sigma, policy)
        }
        (PerturbationKind::Unitary, Direction::Generator(v)) => {
            let rho = perturb_unitary_with(&pair.rho, delta, v, policy)?.aligned_to(&pair.rho, policy)?;
            IsospectralPair::new(rho, pair.sigma.clone(), policy)
        }
        _ => Err(invalid("kind", "perturbation direction does not match its kind")),
    }
}

/// The fixed random direction shared by every δ of a sweep.
#[derive(Debug, Clone)]
pub enum Direction {
    State(DensityMatrix),
    Generator(ComplexMatrix),
}

pub fn draw_direction(kind: PerturbationKind, dim: usize, seed: &RngSeed, policy: &NumericPolicy) -> Result<Direction> {
    let mut rng = seed.child("perturbation").rng();
    Ok(match kind {
        PerturbationKind::Convex => Direction::State(sample_bures_mixed(dim, &mut rng, policy)?),
        PerturbationKind::Unitary => Direction::Generator(sample_unit_hamiltonian(dim, &mut rng)?),
    })
}

/// Relative change of the converged Hamiltonian under perturbations of the
/// initial state, with the initial phases held fixed.
pub fn run_perturbation_sweep(
    pair: &IsospectralPair,
    deltas: &[f64],
    kind: PerturbationKind,
    config: &SolverConfig,
    jobs: usize,
) -> Result<PerturbationReport> {
    config.validate()?;
    if let Some(d) = deltas.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(invalid("deltas", format!("must be finite and non-negative, got {d}")));
    }
    let policy = config.policy;
    let fixed = config.clone().with_phases(resolve_initial_phases(config, pair.dim()));
    let baseline = solve(pair, &fixed)?;
    if !baseline.converged {
        return Err(invalid("pair", "the unperturbed solve did not converge"));
    }
    let h = &baseline.final_hamiltonian;
    let h_norm = h.norm();
    let direction = draw_direction(kind, pair.dim(), &config.rng, &policy)?;

    let points = map_trials(deltas.len(), jobs, |k| {
        let delta = deltas[k];
        let mut point = PerturbationPoint {
            delta,
            iterations: 0,
            converged: false,
            deviation: None,
            error: None,
        };
        let outcome = perturbed_pair(pair, delta, kind, &direction, &policy).and_then(|p| solve(&p, &fixed));
        match outcome {
            Ok(run) => {
                point.iterations = run.steps();
                point.converged = run.converged;
                if run.converged {
                    let diff = (&run.final_hamiltonian - h).norm();
                    point.deviation = Some(if h_norm > 0.0 { diff / h_norm } else { diff });
                }
            }
            Err(e) => point.error = Some(e.to_string()),
        }
        point
    });

    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().filter_map(|p| p.deviation.map(|d| (p.delta, d))).unzip();
    let rho_s = spearman(&xs, &ys);
    let p_value = spearman_permutation_p(&xs, &ys, TREND_PERMUTATIONS, &mut config.rng.child("trend").rng());
    Ok(PerturbationReport {
        kind,
        epsilon: config.epsilon,
        baseline_iterations: baseline.steps(),
        spearman: rho_s,
        p_value,
        trend_increasing: rho_s.zip(p_value).map(|(r, p)| r > 0.0 && p < 0.05),
        points,
    })
}

pub fn perturbation_to_csv(points: &[PerturbationPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["delta", "iterations", "converged", "deviation", "error"])?;
    for p in points {
        w.write_record([
            format_f64(p.delta),
            p.iterations.to_string(),
            p.converged.to_string(),
            opt_f64(p.deviation),
            p.error.clone().unwrap_or_default(),
        ])?;
    }
    finish_csv(w)
}

/// A random problem for the single-pair studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPlan {
    pub dim: usize,
    pub ensemble: Ensemble,
    #[serde(default)]
    pub pair_mode: PairMode,
    pub base_seed: RngSeed,
}

impl PairPlan {
    pub fn new(dim: usize, ensemble: Ensemble, seed: u64) -> Self {
        Self {
            dim,
            ensemble,
            pair_mode: PairMode::Conjugate,
            base_seed: RngSeed::new(seed, "experiment"),
        }
    }

    pub fn pair(&self) -> Result<IsospectralPair> {
        if self.dim < 2 {
            return Err(invalid("dim", format!("must be at least 2, got {}", self.dim)));
        }
        let seed = self.base_seed.child(format!("{}/d{}/pair", self.ensemble, self.dim));
        sample_pair(self.ensemble, self.pair_mode, self.dim, &mut seed.rng(), &NumericPolicy::DEFAULT)
    }

    pub fn solver_seed(&self) -> RngSeed {
        self.base_seed.child(format!("{}/d{}/solver", self.ensemble, self.dim))
    }
}

/// Writes `stem.csv` and/or `stem.json` into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, stem: &str, csv: Option<&str>, json: Option<&str>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (ext, body) in [("csv", csv), ("json", json)] {
        if let Some(body) = body {
            let path = dir.join(format!("{stem}.{ext}"));
            fs::write(&path, body)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan(ensemble: Ensemble) -> ExperimentPlan {
        ExperimentPlan::new(vec![2, 3], 4, 1e-2, ensemble, 11)
    }

    #[test]
    fn plan_validation() {
        let mut plan = small_plan(Ensemble::BuresMixed);
        assert!(plan.validate().is_ok());
        plan.dims = vec![];
        assert!(plan.validate().is_err());
        plan.dims = vec![1];
        assert!(plan.validate().is_err());
        plan.dims = vec![2];
        plan.samples_per_dim = 0;
        assert!(plan.validate().is_err());
        plan.samples_per_dim = 1;
        plan.epsilon = 2.0;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn plan_hash_depends_on_content() {
        let a = small_plan(Ensemble::BuresMixed);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        b.samples_per_dim += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(output_stem("iterations", &a.hash(), 7), format!("iterations-{}-seed7", a.hash()));
    }

    #[test]
    fn records_are_canonical_and_reproducible() {
        let plan = small_plan(Ensemble::BuresMixed);
        let serial = run_iteration_sweep(&plan, 1).unwrap();
        let parallel = run_iteration_sweep(&plan, 3).unwrap();
        assert_eq!(serial.records, parallel.records);
        assert_eq!(serial.csv().unwrap(), parallel.csv().unwrap());
        assert_eq!(serial.summary, parallel.summary);
        let order: Vec<(usize, usize)> = serial.records.iter().map(|r| (r.dim, r.trial)).collect();
        assert_eq!(order, vec![(2, 0), (2, 1), (2, 2), (2, 3), (3, 0), (3, 1), (3, 2), (3, 3)]);
    }

    #[test]
    fn trials_are_independent_of_each_other() {
        let plan = small_plan(Ensemble::BuresMixed);
        let full = run_trials(&plan, 1).unwrap();
        let alone = run_trial(&plan, 3, 2);
        assert_eq!(full[6].record, alone.record);
    }

    #[test]
    fn summaries_follow_from_records() {
        let plan = small_plan(Ensemble::HaarPure);
        let run = run_performance_sweep(&plan, 1).unwrap();
        let again = performance_summary(&plan.base_seed.child("summary"), &run.records);
        assert_eq!(again, run.summary);
        for s in &run.summary.per_dim {
            assert_eq!(s.trials, 4);
            assert_eq!(s.converged + s.not_converged + s.failed, s.trials);
            let ci = s.ci90.unwrap();
            assert!(ci.lo <= s.mean_ratio.unwrap() && s.mean_ratio.unwrap() <= ci.hi);
        }
    }

    #[test]
    fn csv_layout() {
        let plan = ExperimentPlan::new(vec![2], 1, 1e-2, Ensemble::BuresMixed, 3);
        let run = run_iteration_sweep(&plan, 1).unwrap();
        let csv = run.csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), RECORD_CSV_HEADER.join(","));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "2");
        assert_eq!(row[5], "converged");
        assert!(row[7].contains('e'));
    }

    #[test]
    fn tighter_tolerance_needs_more_iterations() {
        let loose = ExperimentPlan::new(vec![8], 20, 1e-1, Ensemble::BuresMixed, 5);
        let mut tight = loose.clone();
        tight.epsilon = 1e-3;
        let n_loose = run_iteration_sweep(&loose, 0).unwrap().summary.per_dim[0].mean_n.unwrap();
        let n_tight = run_iteration_sweep(&tight, 0).unwrap().summary.per_dim[0].mean_n.unwrap();
        assert!(n_tight > n_loose, "{n_loose} vs {n_tight}");
    }

    #[test]
    fn mixed_qubit_ratios_respect_the_bound() {
        let plan = ExperimentPlan::new(vec![2], 30, 1e-2, Ensemble::BuresMixed, 9);
        let run = run_performance_sweep(&plan, 0).unwrap();
        for r in &run.records {
            assert!(r.time_ratio.unwrap() >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn single_start_percentiles() {
        let pair = PairPlan::new(3, Ensemble::BuresMixed, 4).pair().unwrap();
        let report = run_multistart(&pair, 1, &SolverConfig::new(1e-2), MultistartMode::Complete, 1).unwrap();
        let n = report.starts[0].iterations as f64;
        assert_eq!(report.p20_n, Some(n));
        assert_eq!(report.median_n, Some(n));
        assert_eq!(report.min_n, Some(report.starts[0].iterations));
        assert_eq!(report.ratio_spread, Some(0.0));
    }

    #[test]
    fn first_converged_finds_the_same_minimum() {
        let pair = PairPlan::new(5, Ensemble::BuresMixed, 6).pair().unwrap();
        let config = SolverConfig::new(1e-2);
        let full = run_multistart(&pair, 16, &config, MultistartMode::Complete, 1).unwrap();
        for jobs in [1, 4] {
            let fast = run_multistart(&pair, 16, &config, MultistartMode::FirstConverged, jobs).unwrap();
            assert_eq!(fast.min_n, full.min_n);
            assert_eq!(fast.best_start, full.best_start);
            assert_eq!(fast.best_run, full.best_run);
            assert!(fast.p20_n.is_none() && fast.median_n.is_none());
            assert_eq!(fast.starts.len(), 1);
            assert_eq!(fast.starts[0], full.starts[full.best_start.unwrap()]);
        }
        assert!(full.p20_n.unwrap() <= full.median_n.unwrap());
    }

    #[test]
    fn zero_perturbation_has_zero_deviation() {
        let pair = PairPlan::new(4, Ensemble::BuresMixed, 8).pair().unwrap();
        for kind in [PerturbationKind::Convex, PerturbationKind::Unitary] {
            let report = run_perturbation_sweep(&pair, &[0.0], kind, &SolverConfig::new(1e-3), 1).unwrap();
            assert!(report.points[0].deviation.unwrap() <= 1e-9, "{report:?}");
        }
    }

    #[test]
    fn perturbed_pairs_stay_consistent() {
        let pair = PairPlan::new(4, Ensemble::BuresMixed, 10).pair().unwrap();
        let policy = NumericPolicy::DEFAULT;
        for kind in [PerturbationKind::Convex, PerturbationKind::Unitary] {
            let direction = draw_direction(kind, 4, &RngSeed::new(1, "dir"), &policy).unwrap();
            let p = perturbed_pair(&pair, 1e-4, kind, &direction, &policy).unwrap();
            let w = p.eigenvector_map();
            assert!((w * p.rho.matrix() * p.eigenvector_map().adjoint() - p.sigma.matrix()).norm() < 1e-12);
            assert!((p.rho.matrix() - pair.rho.matrix()).norm() < 1e-3);
            for k in 0..4 {
                let overlap = pair.rho.eigenbasis().column(k).dotc(&p.rho.eigenbasis().column(k));
                assert!((overlap.re - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn negative_deltas_are_rejected() {
        let pair = PairPlan::new(3, Ensemble::BuresMixed, 1).pair().unwrap();
        assert!(run_perturbation_sweep(&pair, &[-1e-3], PerturbationKind::Unitary, &SolverConfig::new(1e-2), 1).is_err());
    }

    #[test]
    fn outputs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_outputs(&dir.path().join("sub"), "x", Some("a,b\n"), Some("{}")).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(fs::read_to_string(&paths[0]).unwrap(), "a,b\n");
    }
}
