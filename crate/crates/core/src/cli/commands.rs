use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ConfigError, EngineKind, InitConfig, Problem, ProblemConfig};
use super::format::{fmt_f64, trajectory_csv};
use super::plot::{parse_csv, render_svg, PlotData};
use crate::analysis::{
    analyze, block_smoothness, deterministic_scan_budget, iterations_to_epsilon, Certification, ConvexityReport,
};
use crate::gaussian::GaussianProduct;
use crate::grid::{GridModel, GridProduct};
use crate::harness::{
    bound_envelope_check, compare_scans, contraction_window_check, expected_descent_check, monte_carlo,
    run_trial_with, talagrand_violations, BoundMode, Engine, EnsembleSummary, EnvelopeReport, GaussianEngine,
    GridEngine, ScanComparison, Schedule, WindowStatus,
};

/// Cyclic-sweep tolerance for the grid reference solution.
pub const REFERENCE_TOL: f64 = 1e-9;
pub const REFERENCE_MAX_SWEEPS: usize = 100_000;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) | CliError::CheckFailed(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Command-line replacements for config fields.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub updates: Option<u64>,
}

/// Applies overrides and revalidates. `--seed` replaces the seed of a random
/// schedule; other schedules keep it only as the comparison seed base.
pub fn apply_overrides(problem: &Problem, o: Overrides) -> Result<(Problem, Option<u64>), CliError> {
    let mut config = problem.config.clone();
    if let Some(t) = o.trials {
        config.trials = t;
    }
    if let Some(u) = o.updates {
        config.updates = u;
    }
    if let (Some(seed), Schedule::Random { .. }) = (o.seed, &config.schedule) {
        config.schedule = Schedule::Random { seed };
    }
    Ok((config.build()?, o.seed))
}

/// A ready engine and its initial state.
pub enum Setup {
    Gaussian(GaussianEngine, GaussianProduct),
    Grid(GridEngine, GridProduct),
}

macro_rules! with_setup {
    ($setup:expr, |$e:ident, $s:ident| $body:expr) => {
        match $setup {
            Setup::Gaussian($e, $s) => $body,
            Setup::Grid($e, $s) => $body,
        }
    };
}

pub fn setup(problem: &Problem) -> Result<Setup, CliError> {
    let dim = problem.blocks.dim();
    let config = &problem.config;
    match config.engine {
        EngineKind::Gaussian => {
            let engine = GaussianEngine::new(problem.potential.clone(), problem.blocks.clone())?;
            let init = match &config.init {
                InitConfig::Product { means, variances } => {
                    GaussianProduct::from_diagonal(&problem.blocks, means, variances)?
                }
                InitConfig::OneSweep { one_sweep_from_point } => engine.model().one_sweep_from_point(one_sweep_from_point)?,
                InitConfig::Standard => GaussianProduct::from_diagonal(&problem.blocks, &vec![0.0; dim], &vec![1.0; dim])?,
            };
            Ok(Setup::Gaussian(engine, init))
        }
        EngineKind::Grid => {
            let grid = problem.grid.expect("grid engine configs carry a grid");
            let weights = block_smoothness(&problem.potential, &problem.blocks)?;
            let model = GridModel::new(problem.potential.clone(), problem.blocks.clone(), grid, weights)?;
            let init = match &config.init {
                InitConfig::Product { means, variances } => model.gaussian_product(means, variances)?,
                InitConfig::OneSweep { one_sweep_from_point } => model.one_sweep_from_point(one_sweep_from_point)?,
                InitConfig::Standard => model.gaussian_product(&vec![0.0; dim], &vec![1.0; dim])?,
            };
            let engine = GridEngine::new(model, REFERENCE_TOL, REFERENCE_MAX_SWEEPS)?;
            Ok(Setup::Grid(engine, init))
        }
    }
}

/// Analysis constants together with the `λ*` actually used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub block_count: usize,
    pub report: ConvexityReport,
    pub lambda_star: f64,
    pub certification: Certification,
    pub gap0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// `⌈(K/λ*)·log(gap₀/(εδ))⌉`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rs_budget: Option<u64>,
    /// `⌈(K/λ*)²·log(gap₀/ε)⌉`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ds_budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn analysis_for<E: Engine>(problem: &Problem, engine: &E, init: &E::State) -> Result<Analysis, CliError> {
    let report = analyze(&problem.potential, &problem.blocks, problem.domain())?;
    let (lambda_star, certification) = match problem.config.lambda_star {
        Some(l) => (l, Certification::Declared),
        None => (report.lambda_star, report.certification),
    };
    let gap0 = engine.gap(init)?;
    let k = problem.block_count();
    let (epsilon, delta) = (problem.config.epsilon, problem.config.delta);
    let mut notes = Vec::new();
    let (mut rs_budget, mut ds_budget) = (None, None);
    if let Some(eps) = epsilon {
        if lambda_star > 0.0 {
            ds_budget = Some(deterministic_scan_budget(k, lambda_star, gap0, eps)?);
            match delta {
                Some(d) => rs_budget = Some(iterations_to_epsilon(k, lambda_star, gap0, eps, d)?),
                None => notes.push("delta not given: random-scan budget omitted".into()),
            }
        } else {
            notes.push("lambda* = 0: only the convex-case rate 2KR^2/(n+2K) applies".into());
        }
    }
    if certification == Certification::Declared {
        notes.push("lambda* is declared, not certified".into());
    }
    Ok(Analysis {
        block_count: k,
        report,
        lambda_star,
        certification,
        gap0,
        epsilon,
        delta,
        rs_budget,
        ds_budget,
        notes,
    })
}

pub fn analysis(problem: &Problem, setup: &Setup) -> Result<Analysis, CliError> {
    with_setup!(setup, |e, s| analysis_for(problem, e, s))
}

fn cert_name(c: Certification) -> &'static str {
    match c {
        Certification::Exact => "exact",
        Certification::Certified => "certified",
        Certification::Probed => "probed",
        Certification::Declared => "declared",
    }
}

pub fn print_analysis(a: &Analysis) {
    let r = &a.report;
    println!("blocks K                 {}", a.block_count);
    let ls: Vec<String> = r.smoothness.iter().map(|&v| fmt_f64(v)).collect();
    println!("smoothness L_k           [{}]", ls.join(", "));
    println!("lambda*                  {} ({})", fmt_f64(a.lambda_star), cert_name(a.certification));
    if a.certification == Certification::Declared && r.lambda_star != a.lambda_star {
        println!("lambda* (computed)       {} ({})", fmt_f64(r.lambda_star), cert_name(r.certification));
    }
    println!("lambda (global)          {}", fmt_f64(r.lambda_classical));
    if let Some(l) = r.lambda_dq {
        println!("lambda_min(D_Q^-1/2 Q D_Q^-1/2) {}", fmt_f64(l));
    }
    println!("condition number L/lambda {}", fmt_f64(r.condition_number()));
    println!("coordinate condition 1/lambda* {}", fmt_f64(r.coordinate_condition_number()));
    println!("initial gap              {}", fmt_f64(a.gap0));
    if let Some(b) = a.rs_budget {
        println!("random-scan budget       {b} updates");
    }
    if let Some(b) = a.ds_budget {
        println!("deterministic-scan budget {b} updates");
    }
    for n in &a.notes {
        println!("note: {n}");
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

pub fn cmd_analyze(problem: &Problem, out: Option<&Path>) -> Result<Analysis, CliError> {
    let s = setup(problem)?;
    let a = analysis(problem, &s)?;
    print_analysis(&a);
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        write_json(&dir.join("analysis.json"), &a)?;
    }
    Ok(a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub ensemble: EnsembleSummary,
    pub analysis: Analysis,
    pub envelope_checks: Vec<EnvelopeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: ProblemConfig,
    pub problem_hash: String,
    pub engine: String,
    pub seed_base: u64,
    pub trials: usize,
    pub updates: u64,
    pub version: String,
}

/// Files written by `run`.
pub struct RunOutput {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub meta: PathBuf,
    pub run_summary: RunSummary,
}

fn seed_base(problem: &Problem) -> u64 {
    problem.config.schedule.seed().unwrap_or(0)
}

fn envelope_reports(summary: &EnsembleSummary) -> Result<Vec<EnvelopeReport>, CliError> {
    let mut reports = vec![bound_envelope_check(summary, BoundMode::Convex)?];
    if summary.lambda_star.is_some() && summary.trials >= 100 {
        reports.push(bound_envelope_check(summary, BoundMode::Strong)?);
    }
    Ok(reports)
}

fn run_for<E: Engine>(problem: &Problem, engine: &E, init: &E::State, out: &Path) -> Result<RunOutput, CliError> {
    let a = analysis_for(problem, engine, init)?;
    let c = &problem.config;
    let ensemble = monte_carlo(engine, init, &c.schedule, seed_base(problem), c.trials, c.updates)?;
    let mut summary = ensemble.summary;
    if a.lambda_star > 0.0 {
        summary = summary.with_strong_envelope(a.lambda_star)?;
    }
    let run_summary = RunSummary {
        envelope_checks: envelope_reports(&summary)?,
        ensemble: summary,
        analysis: a,
    };
    let meta = RunMeta {
        config: c.clone(),
        problem_hash: engine.problem_hash().into(),
        engine: engine.name().into(),
        seed_base: seed_base(problem),
        trials: c.trials,
        updates: c.updates,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    let csv = trajectory_csv(&ensemble.trajectories);

    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let paths = [out.join("trajectory.csv"), out.join("summary.json"), out.join("run_meta.json")];
    let written = fs::write(&paths[0], csv)
        .map_err(|e| io_error(&paths[0], e))
        .and_then(|_| write_json(&paths[1], &run_summary))
        .and_then(|_| write_json(&paths[2], &meta));
    if let Err(e) = written {
        for p in &paths {
            let _ = fs::remove_file(p);
        }
        return Err(e);
    }
    let [csv, summary, meta] = paths;
    Ok(RunOutput {
        csv,
        summary,
        meta,
        run_summary,
    })
}

pub fn cmd_run(problem: &Problem, out: &Path) -> Result<RunOutput, CliError> {
    let s = setup(problem)?;
    with_setup!(&s, |e, i| run_for(problem, e, i, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
    Inconclusive,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "skipped",
            CheckStatus::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub analysis: Analysis,
    pub checks: Vec<CheckRow>,
}

impl VerifyReport {
    pub fn failed(&self) -> Vec<&CheckRow> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail).collect()
    }

    pub fn status_of(&self, name: &str) -> Option<CheckStatus> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.status)
    }
}

fn row(name: &str, status: CheckStatus, detail: impl Into<String>) -> CheckRow {
    CheckRow {
        name: name.into(),
        status,
        detail: detail.into(),
    }
}

fn pass_fail(ok: bool) -> CheckStatus {
    if ok {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    }
}

fn envelope_row(name: &str, r: &EnvelopeReport) -> CheckRow {
    let detail = match r.violations.first() {
        None => format!("{} points checked, no violations", r.checked),
        Some(v) => format!(
            "{} of {} points violate; first at n = {}: {} > {}",
            r.violations.len(),
            r.checked,
            v.n,
            fmt_f64(v.value),
            fmt_f64(v.bound)
        ),
    };
    row(name, pass_fail(r.passed()), detail)
}

fn verify_for<E: Engine>(problem: &Problem, engine: &E, init: &E::State, talagrand_slack: f64) -> Result<VerifyReport, CliError> {
    let a = analysis_for(problem, engine, init)?;
    let c = &problem.config;
    let lambda = a.lambda_star;
    let mut checks = Vec::new();

    let ensemble = monte_carlo(engine, init, &c.schedule, seed_base(problem), c.trials, c.updates)?;
    let trajs = &ensemble.trajectories;

    let (_, abs) = engine.descent_tolerance();
    let bad_gap = trajs.iter().filter(|t| !t.gap_increases(100.0 * abs).is_empty()).count();
    let bad_r = trajs.iter().filter(|t| !t.running_r_is_monotone()).count();
    checks.push(row(
        "trajectory invariants",
        pass_fail(bad_gap == 0 && bad_r == 0),
        format!("{} trials; gap increases in {bad_gap}, running R decreases in {bad_r}", trajs.len()),
    ));

    let descent_name = "expected one-step descent";
    if lambda <= 0.0 {
        checks.push(row(descent_name, CheckStatus::Skipped, "skipped (lambda* = 0)"));
    } else if !a.certification.is_certified() {
        checks.push(row(descent_name, CheckStatus::Skipped, "skipped (lambda* declared, not certified)"));
    } else {
        let (mut tested, mut failed) = (0usize, 0usize);
        let mut worst = 0.0f64;
        let schedule = c.schedule.reseeded(seed_base(problem));
        run_trial_with(engine, init, &schedule, c.updates, |n, state| {
            if n % 10 == 0 && engine.all_updated(state) {
                let d = expected_descent_check(engine, state, lambda, a.certification)?;
                tested += 1;
                if !d.pass {
                    failed += 1;
                }
                if d.rhs > 0.0 {
                    worst = worst.max(d.lhs / d.rhs);
                }
            }
            Ok(())
        })?;
        checks.push(row(
            descent_name,
            pass_fail(failed == 0),
            format!("{tested} iterates tested, {failed} failed, worst lhs/rhs {}", fmt_f64(worst)),
        ));
    }

    let summary = if lambda > 0.0 {
        ensemble.summary.clone().with_strong_envelope(lambda)?
    } else {
        ensemble.summary.clone()
    };
    let strong = "strong envelope (1-lambda*/K)^n gap0";
    if lambda <= 0.0 {
        checks.push(row(strong, CheckStatus::Skipped, "skipped (lambda* = 0)"));
    } else if summary.trials < 100 {
        checks.push(row(strong, CheckStatus::Skipped, format!("skipped (needs at least 100 trials, have {})", summary.trials)));
    } else {
        checks.push(envelope_row(strong, &bound_envelope_check(&summary, BoundMode::Strong)?));
    }
    let mut convex = envelope_row("convex envelope 2KR^2/(n+2K)", &bound_envelope_check(&summary, BoundMode::Convex)?);
    convex.detail.push_str(" (R = running sup over executed updates)");
    checks.push(convex);

    let tal = "transport inequality (lambda*/2) W^2 <= gap";
    if lambda <= 0.0 {
        checks.push(row(tal, CheckStatus::Skipped, "skipped (lambda* = 0)"));
    } else {
        let bad: usize = trajs.iter().map(|t| talagrand_violations(t, lambda, talagrand_slack).len()).sum();
        let total: usize = trajs.iter().map(|t| t.records.len()).sum();
        checks.push(row(tal, pass_fail(bad == 0), format!("{bad} of {total} iterates violate")));
    }

    Ok(VerifyReport { analysis: a, checks })
}

pub fn cmd_verify(problem: &Problem, out: Option<&Path>) -> Result<VerifyReport, CliError> {
    let s = setup(problem)?;
    let mut report = match &s {
        Setup::Gaussian(e, i) => verify_for(problem, e, i, 1e-9)?,
        Setup::Grid(e, i) => verify_for(problem, e, i, 1e-6)?,
    };
    let name = "contraction window";
    let row = match &s {
        Setup::Gaussian(e, _) if problem.blocks.all_scalar() => {
            let n = problem.config.updates.min(40);
            let trials = problem.config.trials.max(1000);
            let r = contraction_window_check(e, n, trials, seed_base(problem))?;
            let detail = match r.measured {
                Some(c) => format!(
                    "c = {} over n = {n}, window [{}, {}]{}",
                    fmt_f64(c),
                    fmt_f64(r.window.0),
                    fmt_f64(r.window.1),
                    if r.note.is_empty() { String::new() } else { format!("; {}", r.note) }
                ),
                None => format!("degenerate: {}", r.note),
            };
            let status = match r.status {
                WindowStatus::Pass => CheckStatus::Pass,
                WindowStatus::Inconclusive => CheckStatus::Inconclusive,
                WindowStatus::Degenerate => CheckStatus::Skipped,
            };
            self::row(name, status, detail)
        }
        _ => self::row(name, CheckStatus::Skipped, "skipped (needs the gaussian engine with scalar blocks)"),
    };
    report.checks.push(row);

    println!("{:<44} {:<13} detail", "check", "status");
    for c in &report.checks {
        println!("{:<44} {:<13} {}", c.name, c.status.to_string(), c.detail);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        write_json(&dir.join("verify.json"), &report)?;
    }
    Ok(report)
}

pub fn cmd_compare(problem: &Problem, seed: Option<u64>, out: Option<&Path>) -> Result<ScanComparison, CliError> {
    let eps = problem
        .config
        .epsilon
        .ok_or_else(|| CliError::Validation("invalid config:\n  epsilon: required for compare".into()))?;
    let s = setup(problem)?;
    let base = problem.config.schedule.seed().or(seed).unwrap_or(0);
    let cmp = with_setup!(&s, |e, i| {
        let a = analysis_for(problem, e, i)?;
        compare_scans(e, i, eps, problem.config.trials, base, a.lambda_star, a.certification)?
    });
    println!("{:<34} {}", "initial gap", fmt_f64(cmp.gap0));
    println!("{:<34} {}", "epsilon", fmt_f64(cmp.eps));
    println!("{:<34} {}", "lambda*", fmt_f64(cmp.lambda_star));
    println!("{:<34} {}", "deterministic scan updates", cmp.ds_updates);
    println!("{:<34} {} (over {} trials)", "random scan updates (median)", fmt_f64(cmp.rs_median), cmp.rs_updates.len());
    match cmp.ratio {
        Some(r) => println!("{:<34} {}", "ratio random/deterministic", fmt_f64(r)),
        None => println!("{:<34} n/a", "ratio random/deterministic"),
    }
    println!("{:<34} {}", "random scan budget (K/lambda*)", cmp.rs_budget);
    println!("{:<34} {}", "deterministic budget (K/lambda*)^2", cmp.ds_budget);
    if cmp.lambda_star >= 1.0 {
        println!("note: independent target; both scans need O(K) updates");
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        write_json(&dir.join("compare.json"), &cmp)?;
    }
    Ok(cmp)
}

/// Reads a trajectory CSV and writes the SVG; the envelope comes from an
/// `envelope` column or else from a `summary.json` next to the CSV.
pub fn cmd_plot(csv_path: &Path, svg_path: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(csv_path).map_err(|e| io_error(csv_path, e))?;
    let mut data: PlotData = parse_csv(&text).map_err(|e| CliError::Validation(format!("{}: {e}", csv_path.display())))?;
    if data.envelope.is_none() {
        let sibling = csv_path.with_file_name("summary.json");
        if let Ok(s) = fs::read_to_string(&sibling) {
            let run: RunSummary = serde_json::from_str(&s)
                .map_err(|e| CliError::Validation(format!("{}: {e}", sibling.display())))?;
            data.envelope = run
                .ensemble
                .envelope
                .map(|env| env.into_iter().enumerate().map(|(n, v)| (n as f64, v)).collect());
        }
    }
    if let Some(parent) = svg_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(svg_path, render_svg(&data)).map_err(|e| io_error(svg_path, e))
}
