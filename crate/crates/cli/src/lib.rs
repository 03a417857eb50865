//! Command-line driver: solving, equilibrium checks, the randomized
//! mechanism and the charging case study.
//!
//! Exit codes: 0 on success, 1 when a check or audit fails (or a solve does
//! not converge), 2 on bad input.

pub mod casestudy;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use flexgrid::equilibrium::{verify_equilibrium, Allocation};
use flexgrid::ingest::ScenarioConfig;
use flexgrid::milp::{solve_spp_bnb, DEFAULT_GAP_TOL};
use flexgrid::planner::{check_sppr_kkt, derive_prices, solve_sppr_report, PriceSet};
use flexgrid::replication::{
    audit_budget_balance, audit_individual_rationality, lln_convergence, log_log_slope, run_flex_sched,
    Audit, LlnPoint, PaymentLedger, LLN_SEEDS,
};
use flexgrid::{Error, Instance};

use report::{
    digest_files, qty, read_json, write_json, AllocationFile, EquilibriumSection, ExactSection, PriceFile,
    Quantity, RunReport, SolverSection, CURRENCY, CURRENCY_PER_KW, DIMENSIONLESS, KW, SLOT,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

const DEFAULT_TOL: f64 = 1e-9;
const VERIFY_TOL: f64 = 1e-5;
const MECHANISM_TOL: f64 = 1e-9;
const AUDIT_TOL: f64 = 1e-8;
const KKT_REPORT_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "flexgrid", version, about = "Scheduling and pricing of flexible loads")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve an instance and write report.json, allocation.json and prices.json.
    Solve(SolveArgs),
    /// Check that prices support an allocation.
    Verify(VerifyArgs),
    /// Run the randomized mechanism and audit it.
    Mechanism(MechanismArgs),
    /// Flexible against on-demand charging across demand surges.
    Casestudy(CaseStudyArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Instance JSON file.
    pub instance: PathBuf,
    /// Solve the relaxation only (default).
    #[arg(long, conflicts_with = "exact")]
    pub relaxed: bool,
    /// Also solve the binary problem by branch and bound.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub allocation: PathBuf,
    pub prices: PathBuf,
    pub instance: PathBuf,
    #[arg(long, default_value_t = VERIFY_TOL)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct MechanismArgs {
    pub instance: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub replicas: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated population sizes for the convergence table.
    #[arg(long)]
    pub lln: Option<String>,
}

#[derive(Debug, Args)]
pub struct CaseStudyArgs {
    pub sessions: PathBuf,
    pub generation: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100.0)]
    pub ubar: f64,
    #[arg(long, default_value_t = 0.5)]
    pub cost_a: f64,
    #[arg(long, default_value_t = 0.0)]
    pub cost_b: f64,
    #[arg(long, default_value = "0,25,50,75,100")]
    pub surges: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Ignore unknown CSV columns.
    #[arg(long)]
    pub lenient: bool,
}

/// Result of a command that ran to completion.
pub enum Outcome {
    Done,
    Failed(String),
}

/// Runs a parsed command and maps the result to an exit code, printing
/// diagnostics to stderr.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Mechanism(a) => cmd_mechanism(&a),
        Command::Casestudy(a) => cmd_casestudy(&a),
    };
    match result {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("flexgrid: {msg}");
            EXIT_CHECK_FAILED
        }
        Err(e) => {
            eprintln!("flexgrid: {e:#}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &anyhow::Error) -> i32 {
    if let Some(err) = e.downcast_ref::<Error>() {
        return match err {
            Error::Validation(_) | Error::Dimension(_) | Error::Parse { .. } | Error::Csv(_) | Error::Io(_) => {
                EXIT_INPUT
            }
            _ => EXIT_CHECK_FAILED,
        };
    }
    if e.downcast_ref::<std::io::Error>().is_some() || e.downcast_ref::<serde_json::Error>().is_some() {
        return EXIT_INPUT;
    }
    match e.downcast_ref::<InputError>() {
        Some(_) => EXIT_INPUT,
        None => EXIT_CHECK_FAILED,
    }
}

/// Bad flags or arguments found after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct InputError(String);

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    let inst: Instance = read_json(path)?;
    inst.ensure_valid().with_context(|| format!("in {}", path.display()))?;
    Ok(inst)
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(input_error(format!("--tol {tol} must be positive")));
    }
    Ok(())
}

fn cmd_solve(a: &SolveArgs) -> Result<Outcome> {
    check_tol(a.tol)?;
    let inst = load_instance(&a.instance)?;
    let digest = digest_files(&[&a.instance])?;
    let out = solve_sppr_report(&inst, a.tol)?;
    let kkt = check_sppr_kkt(&inst, &out.solution, &out.duals, KKT_REPORT_TOL)?;
    let prices = derive_prices(&inst, &out.duals)?;
    let alloc: Allocation = (&out.solution).into();
    let eq = verify_equilibrium(&inst, &alloc, &prices, VERIFY_TOL)?;
    let exact = if a.exact {
        let (sched, stats) = solve_spp_bnb(&inst, DEFAULT_GAP_TOL)?;
        Some(ExactSection {
            objective: qty(sched.objective, CURRENCY),
            integrality_gap: qty(sched.objective - out.solution.objective, CURRENCY),
            starts: qty(sched.starts.iter().map(|s| s.map(|r| r + 1)).collect(), SLOT),
            nodes_explored: qty(stats.nodes_explored, DIMENSIONLESS),
            bound_gap: qty(stats.gap, CURRENCY),
        })
    } else {
        None
    };
    let report = RunReport {
        command: if a.exact { "solve --exact" } else { "solve --relaxed" }.into(),
        input_digest: digest,
        seed: None,
        solver: SolverSection::new(&out.stats, &kkt),
        relaxed_objective: qty(out.solution.objective, CURRENCY),
        exact,
        prices: PriceFile::from(&prices),
        equilibrium: EquilibriumSection::from(&eq),
    };
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    write_json(&a.out.join("report.json"), &report)?;
    write_json(&a.out.join("allocation.json"), &AllocationFile::from(&alloc))?;
    write_json(&a.out.join("prices.json"), &PriceFile::from(&prices))?;
    println!("relaxed objective {}", out.solution.objective);
    if let Some(e) = &report.exact {
        println!("exact objective {}", e.objective.value);
    }
    Ok(Outcome::Done)
}

fn cmd_verify(a: &VerifyArgs) -> Result<Outcome> {
    check_tol(a.tol)?;
    let inst = load_instance(&a.instance)?;
    let alloc: Allocation = read_json::<AllocationFile>(&a.allocation)?.into();
    let prices: PriceSet = read_json::<PriceFile>(&a.prices)?.into();
    let eq = verify_equilibrium(&inst, &alloc, &prices, a.tol)?;
    println!("{}", serde_json::to_string_pretty(&EquilibriumSection::from(&eq))?);
    if eq.is_equilibrium {
        return Ok(Outcome::Done);
    }
    let worst = eq
        .consumer_gaps
        .iter()
        .enumerate()
        .fold((String::new(), f64::NEG_INFINITY), |acc, (i, g)| {
            if *g > acc.1 {
                (format!("consumer {}", inst.loads[i].id), *g)
            } else {
                acc
            }
        });
    Ok(Outcome::Failed(format!(
        "not an equilibrium at tol {}: generator gap {:.6e}, operator gap {:.6e}, largest consumer gap {:.6e} ({})",
        a.tol, eq.generator_gap, eq.iso_gap, worst.1, worst.0
    )))
}

#[derive(Debug, Serialize)]
struct AuditReport {
    budget_balance: Audit,
    individual_rationality: Audit,
}

#[derive(Debug, Serialize)]
struct LlnReport {
    seeds_per_size: usize,
    points: Vec<LlnPoint>,
    violation_unit: String,
    objective_gap_unit: String,
    slope: Option<f64>,
}

#[derive(Debug, Serialize)]
struct LedgerReport {
    consumption_payments: Quantity<f64>,
    flexibility_credits: Quantity<f64>,
    generator_revenue: Quantity<f64>,
    imbalance: Quantity<f64>,
}

impl From<&PaymentLedger> for LedgerReport {
    fn from(l: &PaymentLedger) -> Self {
        LedgerReport {
            consumption_payments: qty(l.consumption_payments, CURRENCY),
            flexibility_credits: qty(l.flexibility_credits, CURRENCY),
            generator_revenue: qty(l.generator_revenue, CURRENCY),
            imbalance: qty(l.imbalance(), CURRENCY),
        }
    }
}

#[derive(Debug, Serialize)]
struct MechanismReport {
    command: String,
    input_digest: String,
    seed: u64,
    replicas: usize,
    relaxed_objective: Quantity<f64>,
    realized_objective: Quantity<f64>,
    realized_violation: Quantity<f64>,
    scheduled_replicas: Quantity<usize>,
    min_net_utility: Quantity<f64>,
    ledger: LedgerReport,
    equilibrium: EquilibriumSection,
    audits: AuditReport,
    lln: Option<LlnReport>,
}

pub fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| input_error(format!("{what}: `{}` is not a valid entry", s.trim())))
        })
        .collect()
}

fn cmd_mechanism(a: &MechanismArgs) -> Result<Outcome> {
    if a.replicas == 0 {
        return Err(input_error("--replicas must be at least 1"));
    }
    let ns: Option<Vec<usize>> = a.lln.as_deref().map(|s| parse_list(s, "--lln")).transpose()?;
    if ns.as_ref().is_some_and(|v| v.iter().any(|n| *n == 0)) {
        return Err(input_error("--lln sizes must be at least 1"));
    }
    let inst = load_instance(&a.instance)?;
    let digest = digest_files(&[&a.instance])?;
    let tr = run_flex_sched(&inst, a.replicas, a.seed, MECHANISM_TOL)?;
    let audits = AuditReport {
        budget_balance: audit_budget_balance(&tr, AUDIT_TOL),
        individual_rationality: audit_individual_rationality(&tr, AUDIT_TOL),
    };
    let lln = match ns {
        Some(ns) => {
            let sol = flexgrid::planner::RelaxedSolution {
                x: tr.allocation.x.clone(),
                y: tr.allocation.y.clone(),
                z: tr.allocation.z.clone(),
                q: tr.allocation.q.clone(),
                objective: tr.relaxed_objective,
            };
            let points = lln_convergence(&inst, &sol, &ns, a.seed)?;
            let slope = log_log_slope(&points.iter().map(|p| (p.n as f64, p.mean_violation)).collect::<Vec<_>>());
            Some(LlnReport {
                seeds_per_size: LLN_SEEDS,
                points,
                violation_unit: KW.into(),
                objective_gap_unit: CURRENCY.into(),
                slope,
            })
        }
        None => None,
    };
    let report = MechanismReport {
        command: "mechanism".into(),
        input_digest: digest,
        seed: a.seed,
        replicas: a.replicas,
        relaxed_objective: qty(tr.relaxed_objective, CURRENCY),
        realized_objective: qty(tr.realized_objective, CURRENCY),
        realized_violation: qty(tr.realized_violation, KW),
        scheduled_replicas: qty(tr.sampled_starts.iter().flatten().filter(|s| s.is_some()).count(), DIMENSIONLESS),
        min_net_utility: qty(audits.individual_rationality.value, CURRENCY),
        ledger: LedgerReport::from(&tr.ledger),
        equilibrium: EquilibriumSection::from(&tr.equilibrium),
        audits,
        lln,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    let mut failed = Vec::new();
    if !report.audits.budget_balance.passes {
        failed.push(format!("budget balance (imbalance {:.6e})", report.audits.budget_balance.value));
    }
    if !report.audits.individual_rationality.passes {
        failed.push(format!(
            "individual rationality (minimum net utility {:.6e})",
            report.audits.individual_rationality.value
        ));
    }
    if failed.is_empty() {
        Ok(Outcome::Done)
    } else {
        Ok(Outcome::Failed(format!("audit failed: {}", failed.join(", "))))
    }
}

#[derive(Debug, Serialize)]
struct CaseStudyReport {
    command: String,
    input_digest: String,
    seed: u64,
    config: CaseStudyConfig,
    day: Option<String>,
    slot_minutes: Quantity<u32>,
    generation_resampling: flexgrid::ingest::Resampling,
    sessions_used: usize,
    sessions_spanning_midnight: usize,
    sessions_on_other_days: usize,
    rejected_sessions: Vec<casestudy::Rejection>,
    scenarios: Vec<casestudy::ScenarioReport>,
    comparison: Option<casestudy::Comparison>,
}

#[derive(Debug, Serialize)]
struct CaseStudyConfig {
    alpha: Quantity<f64>,
    ubar: Quantity<f64>,
    cost_a: Quantity<f64>,
    cost_b: Quantity<f64>,
    surges: Quantity<Vec<u32>>,
}

/// Worker cap from `FLEXGRID_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("FLEXGRID_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(input_error(format!("FLEXGRID_THREADS=`{v}` must be a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

fn cmd_casestudy(a: &CaseStudyArgs) -> Result<Outcome> {
    let surges: Vec<u32> = parse_list(&a.surges, "--surges")?;
    let mut unique = surges.clone();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() != surges.len() {
        return Err(input_error("--surges lists a level twice"));
    }
    let base = ScenarioConfig {
        alpha: a.alpha,
        ubar: a.ubar,
        cost_a: a.cost_a,
        cost_b: a.cost_b,
        surge_pct: 0,
        seed: a.seed,
        ..ScenarioConfig::default()
    };
    base.validate()?;
    let threads = thread_cap()?;
    let inputs = casestudy::load_inputs(&a.sessions, &a.generation, a.lenient)?;
    let digest = digest_files(&[&a.sessions, &a.generation])?;
    let study = casestudy::run(&inputs, &base, &surges, threads)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    casestudy::write_profiles(&a.out.join("load_profiles.csv"), &study, &inputs.renewable)?;
    casestudy::write_summary(&a.out.join("summary.csv"), &study)?;
    let report = CaseStudyReport {
        command: "casestudy".into(),
        input_digest: digest,
        seed: a.seed,
        config: CaseStudyConfig {
            alpha: qty(a.alpha, "$/slot^2"),
            ubar: qty(a.ubar, CURRENCY),
            cost_a: qty(a.cost_a, "$/kW^2"),
            cost_b: qty(a.cost_b, CURRENCY_PER_KW),
            surges: qty(surges.clone(), "%"),
        },
        day: inputs.day.clone(),
        slot_minutes: qty(inputs.grid.slot_minutes, "min"),
        generation_resampling: inputs.resampling,
        sessions_used: inputs.sessions.len(),
        sessions_spanning_midnight: inputs.spans_midnight,
        sessions_on_other_days: inputs.other_days,
        rejected_sessions: study.rejected.clone(),
        scenarios: study.scenarios.iter().map(Into::into).collect(),
        comparison: casestudy::compare(&study),
    };
    write_json(&a.out.join("report.json"), &report)?;
    for s in &study.scenarios {
        println!(
            "surge {:>3}% {:<9} peak generation {:.4} kW, served {:.4}, welfare {:.4}",
            s.surge_pct,
            s.mode.name(),
            s.peak_generation,
            s.proportion_served,
            s.welfare
        );
    }
    Ok(Outcome::Done)
}

/// Parses arguments, printing clap's message and returning exit code 2 on
/// bad usage.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
