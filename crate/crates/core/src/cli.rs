//! Command-line front end.
//!
//! Subcommands: `solve` (one instance, one solver), `benchmark` (the
//! accelerated solver against the baseline grid), `check-smoothness`
//! (τ sweep of the dual-gradient Lipschitz estimator), `verify` (invariant
//! battery), `plot` (trace CSVs to SVG). Exit codes: 0 success, 1 solver
//! failure, 2 invalid input.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::arcpo::{self, InnerSolver};
use crate::bench::{self, BenchmarkSpec};
use crate::error::{CmdpError, Result};
use crate::gen::{gen_random_cmdp, GeneratorParams};
use crate::mdp::{self, RewardStats, TabularCmdp};
use crate::oracle::{self, CmdpSolve};
use crate::pdo::{self, PdoConfig};
use crate::svg::{self, Series};
use crate::{io, verify};

#[derive(Debug, Parser)]
#[command(name = "cmdp-accel", version, about = "Exact primal-dual solvers for tabular constrained MDPs")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one instance with one solver and emit certificate/trace files.
    Solve(SolveArgs),
    /// Run the accelerated-vs-baseline comparison on generated instances.
    Benchmark(BenchmarkArgs),
    /// Sweep the empirical dual-smoothness estimate over τ.
    CheckSmoothness(SmoothnessArgs),
    /// Run the invariant battery on seeded instances.
    Verify(VerifyArgs),
    /// Render gap/violation-vs-oracle-calls curves from trace CSVs.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverKind {
    Lp,
    Arcpo,
    Pdo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InnerKind {
    Softq,
    Npg,
}

impl From<InnerKind> for InnerSolver {
    fn from(kind: InnerKind) -> Self {
        match kind {
            InnerKind::Softq => InnerSolver::SoftQ,
            InnerKind::Npg => InnerSolver::Npg,
        }
    }
}

#[derive(Debug, Args)]
struct InstanceSource {
    /// Instance JSON file; omit to generate one from the parameters below.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    states: usize,
    #[arg(long, default_value_t = 5)]
    actions: usize,
    #[arg(long, default_value_t = 2)]
    constraints: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 0.6)]
    threshold_fraction: f64,
}

impl InstanceSource {
    fn load(&self) -> Result<TabularCmdp> {
        match &self.instance {
            Some(path) => io::load_cmdp(path),
            None => gen_random_cmdp(&GeneratorParams {
                seed: self.seed,
                num_states: self.states,
                num_actions: self.actions,
                num_constraints: self.constraints,
                discount: self.gamma,
                threshold_fraction: self.threshold_fraction,
            }),
        }
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    source: InstanceSource,
    #[arg(long, value_enum, default_value_t = SolverKind::Lp)]
    solver: SolverKind,
    /// Target accuracy for the accelerated schedule.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = InnerKind::Softq)]
    inner: InnerKind,
    /// Record per-iteration gradient-error/inner-gap diagnostics
    /// (one extra high-accuracy inner solve per iteration).
    #[arg(long)]
    diagnostics: bool,
    /// Baseline dual stepsize.
    #[arg(long, default_value_t = 0.1)]
    pdo_eta: f64,
    /// Baseline outer iterations.
    #[arg(long, default_value_t = 200)]
    pdo_outer: usize,
    /// Sample pairs for the dual-smoothness estimate.
    #[arg(long, default_value_t = 48)]
    smoothness_pairs: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    states: usize,
    #[arg(long, default_value_t = 5)]
    actions: usize,
    #[arg(long, default_value_t = 2)]
    constraints: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 0.6)]
    threshold_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 10)]
    instances: usize,
    /// Concurrent instance jobs (defaults to CMDP_ACCEL_THREADS or 1).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value_t = 48)]
    smoothness_pairs: usize,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SmoothnessArgs {
    #[command(flatten)]
    source: InstanceSource,
    /// Comma-separated τ values.
    #[arg(long, default_value = "0.05,0.1,0.2", value_delimiter = ',')]
    taus: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    #[arg(long, default_value_t = 24)]
    pairs: usize,
    /// Optional CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Trace CSV files (the `benchmark`/`solve` output format).
    #[arg(long, required = true, num_args = 1..)]
    traces: Vec<PathBuf>,
    #[arg(long, default_value = "plot.svg")]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct SolutionJson {
    solver: String,
    objective_value: f64,
    constraint_values: Vec<f64>,
    gap_vs_oracle: f64,
    violation_l1: f64,
    oracle_calls: u64,
    policy: Vec<Vec<f64>>,
}

fn policy_rows(policy: &mdp::Policy) -> Vec<Vec<f64>> {
    policy.probs().outer_iter().map(|r| r.to_vec()).collect()
}

fn violation_l1(values: &[f64], thresholds: &[f64]) -> f64 {
    values
        .iter()
        .zip(thresholds)
        .map(|(v, c)| (c - v).max(0.0))
        .sum()
}

fn certificate_for(cmdp: &TabularCmdp) -> Result<oracle::SolveCertificate> {
    match oracle::solve_cmdp_lp(cmdp)? {
        CmdpSolve::Optimal(cert) => Ok(*cert),
        CmdpSolve::Infeasible => Err(CmdpError::InvalidInstance(
            "instance is infeasible: no policy meets the thresholds".into(),
        )),
    }
}

fn run_solve(args: &SolveArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let cmdp = args.source.load()?;
    if args.source.instance.is_none() {
        io::save_cmdp(&args.out.join("instance.json"), &cmdp)?;
    }
    let certificate = certificate_for(&cmdp)?;
    io::save_certificate(&args.out.join("certificate.json"), &certificate)?;
    println!(
        "lp oracle: V0* = {:.6}, slater margin = {:.6}",
        certificate.optimal_value, certificate.slater_margin
    );
    let thresholds = cmdp.thresholds().to_vec();

    match args.solver {
        SolverKind::Lp => {}
        SolverKind::Arcpo => {
            let stats = RewardStats::from_cmdp(&cmdp);
            let (mut schedule, estimate) = arcpo::schedule_for_accuracy_empirical(
                &cmdp,
                &stats,
                args.epsilon,
                certificate.slater_margin,
                args.smoothness_pairs,
                args.source.seed,
            )?;
            schedule.inner = args.inner.into();
            schedule.diagnostics = args.diagnostics;
            println!(
                "schedule: T = {}, delta = {:.3e}, tau = {:.4}, mu = {:.3e}, L_d = {:.4} \
                 (smoothness estimate {estimate:.4})",
                schedule.t_outer,
                schedule.delta,
                schedule.tau,
                schedule.mu,
                schedule.derived_l_d.unwrap_or(f64::NAN),
            );
            let (mixed, mut trace) = arcpo::run_arcpo(&cmdp, &schedule)?;
            let values = mdp::all_values(&cmdp, &mixed)?;
            let gap = certificate.optimal_value - values[0];
            let violation = violation_l1(&values.to_vec()[1..], &thresholds);
            trace.set_final(gap, violation);
            let curve =
                bench::arcpo_prefix_curve(&trace, &schedule, certificate.optimal_value, &thresholds);
            bench::write_trace_csv(
                &args.out.join("trace_arcpo.csv"),
                &bench::csv_rows("arcpo", &trace, &curve),
            )?;
            write_solution(
                &args.out.join("solution_arcpo.json"),
                "arcpo",
                &values.to_vec(),
                gap,
                violation,
                trace.total_oracle_calls(),
                &mixed,
            )?;
            println!(
                "arcpo: gap = {gap:.6}, violation = {violation:.6}, oracle calls = {}",
                trace.total_oracle_calls()
            );
        }
        SolverKind::Pdo => {
            let config = PdoConfig {
                t_outer: args.pdo_outer,
                eta: args.pdo_eta,
                inner: args.inner.into(),
                delta: 1e-4,
                tau: bench::PDO_TAU,
                projection_box: None,
                budget_radius: 1.0,
            };
            let (output, mut trace) = pdo::run_pdo(&cmdp, &config)?;
            let values = mdp::all_values(&cmdp, &output.mixed)?;
            let gap = certificate.optimal_value - values[0];
            let violation = violation_l1(&values.to_vec()[1..], &thresholds);
            trace.set_final(gap, violation);
            let curve = bench::pdo_prefix_curve(&trace, certificate.optimal_value, &thresholds);
            bench::write_trace_csv(
                &args.out.join("trace_pdo.csv"),
                &bench::csv_rows("pdo", &trace, &curve),
            )?;
            write_solution(
                &args.out.join("solution_pdo.json"),
                "pdo",
                &values.to_vec(),
                gap,
                violation,
                trace.total_oracle_calls(),
                &output.mixed,
            )?;
            println!(
                "pdo: gap = {gap:.6}, violation = {violation:.6}, oracle calls = {}",
                trace.total_oracle_calls()
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_solution(
    path: &Path,
    solver: &str,
    values: &[f64],
    gap: f64,
    violation: f64,
    oracle_calls: u64,
    policy: &mdp::Policy,
) -> Result<()> {
    let solution = SolutionJson {
        solver: solver.to_string(),
        objective_value: values[0],
        constraint_values: values[1..].to_vec(),
        gap_vs_oracle: gap,
        violation_l1: violation,
        oracle_calls,
        policy: policy_rows(policy),
    };
    std::fs::write(path, serde_json::to_string_pretty(&solution)?)?;
    Ok(())
}

fn default_jobs() -> usize {
    std::env::var("CMDP_ACCEL_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|v| *v >= 1)
        .unwrap_or(1)
}

fn run_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let spec = BenchmarkSpec {
        seed: args.seed,
        num_states: args.states,
        num_actions: args.actions,
        num_constraints: args.constraints,
        discount: args.gamma,
        threshold_fraction: args.threshold_fraction,
        epsilon: args.epsilon,
        instances: args.instances,
        jobs: args.jobs.unwrap_or_else(default_jobs),
        smoothness_pairs: args.smoothness_pairs,
    };
    let report = bench::run_benchmark(&spec)?;
    bench::write_report(&spec, &report, &args.out)?;
    for outcome in &report.outcomes {
        println!(
            "instance {:02}: gap = {:.5}, violation = {:.5}, arcpo calls to eps = {}, \
             pdo best = {}, arcpo wins = {}",
            outcome.index,
            outcome.arcpo_gap,
            outcome.arcpo_violation,
            outcome
                .arcpo_reach
                .map(|(_, c)| c.to_string())
                .unwrap_or_else(|| "never".into()),
            outcome
                .pdo_best
                .map(|(eta, _, c)| format!("eta {eta:.4} at {c} calls"))
                .unwrap_or_else(|| "never".into()),
            outcome.arcpo_wins()
        );
    }
    println!(
        "arcpo wins {}/{} instances; outputs in {}",
        report.arcpo_win_count(),
        spec.instances,
        args.out.display()
    );
    Ok(())
}

fn run_smoothness(args: &SmoothnessArgs) -> Result<()> {
    let cmdp = args.source.load()?;
    let stats = RewardStats::from_cmdp(&cmdp);
    let b_radius = match oracle::slater_margin(&cmdp)? {
        xi if xi > 0.0 && xi.is_finite() => stats.r0_max / ((1.0 - cmdp.discount()) * xi),
        _ => 1.0,
    };
    let mut lines = Vec::new();
    println!("tau,estimate");
    for tau in &args.taus {
        let estimate = arcpo::estimate_dual_smoothness(
            &cmdp,
            *tau,
            args.mu,
            args.pairs,
            b_radius,
            args.source.seed,
        )?;
        println!("{tau},{estimate}");
        lines.push(format!("{tau},{estimate}"));
    }
    if let Some(path) = &args.out {
        std::fs::write(path, format!("tau,estimate\n{}\n", lines.join("\n")))?;
    }
    Ok(())
}

fn run_plot(args: &PlotArgs) -> Result<()> {
    // Collect (file-stem/solver) -> (calls, gap, violation) series.
    let mut gap_series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut violation_series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for path in &args.traces {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "trace".into());
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| {
            CmdpError::InvalidParameter(format!("{}: empty trace file", path.display()))
        })?;
        if !header.starts_with("solver,outer_iter,oracle_calls") {
            return Err(CmdpError::InvalidParameter(format!(
                "{}: unrecognized trace header",
                path.display()
            )));
        }
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 6 {
                return Err(CmdpError::InvalidParameter(format!(
                    "{}:{}: expected at least 6 columns",
                    path.display(),
                    lineno + 2
                )));
            }
            let key = format!("{stem}/{}", fields[0]);
            let calls: f64 = fields[2].parse().map_err(|_| {
                CmdpError::InvalidParameter(format!("bad oracle_calls on line {}", lineno + 2))
            })?;
            let gap: f64 = fields[4].parse().map_err(|_| {
                CmdpError::InvalidParameter(format!("bad gap on line {}", lineno + 2))
            })?;
            let violation: f64 = fields[5].parse().map_err(|_| {
                CmdpError::InvalidParameter(format!("bad violation on line {}", lineno + 2))
            })?;
            gap_series.entry(key.clone()).or_default().push((calls, gap));
            violation_series.entry(key).or_default().push((calls, violation));
        }
    }
    let to_series = |map: BTreeMap<String, Vec<(f64, f64)>>| {
        map.into_iter()
            .map(|(label, points)| Series { label, points })
            .collect::<Vec<_>>()
    };
    let gap_svg = svg::render_line_plot(
        "optimality gap vs oracle calls",
        "oracle calls",
        "gap",
        &to_series(gap_series),
    );
    let violation_svg = svg::render_line_plot(
        "constraint violation vs oracle calls",
        "oracle calls",
        "violation (l1)",
        &to_series(violation_series),
    );
    let combined = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"960\">\
         <svg y=\"0\">{gap_svg}</svg><svg y=\"480\">{violation_svg}</svg></svg>"
    );
    std::fs::write(&args.out, combined)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Exit code contract: 0 ok, 1 solver failure, 2 invalid input.
fn exit_code(err: &CmdpError) -> i32 {
    match err {
        CmdpError::NumericalFailure(_) => 1,
        _ => 2,
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => run_solve(args),
        Command::Benchmark(args) => run_benchmark(args),
        Command::CheckSmoothness(args) => run_smoothness(args),
        Command::Verify(args) => match verify::run_verification(args.seed) {
            Ok(report) if report.all_passed() => Ok(()),
            Ok(_) => Err(CmdpError::NumericalFailure(
                "one or more verification suites failed".into(),
            )),
            Err(e) => Err(e),
        },
        Command::Plot(args) => run_plot(args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
