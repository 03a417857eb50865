//! The charging case study: every surge level in both flexibility modes.

use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use flexgrid::ingest::{
    build_instance, build_surge, parse_generation, parse_sessions, ChargingSession,
    FlexibilityMode, Resampling, ScenarioConfig,
};
use flexgrid::planner::solve_sppr_report;
use flexgrid::TimeGrid;

use crate::report::{qty, Quantity, CURRENCY, DIMENSIONLESS, KW};

pub const SLOT_MINUTES: u32 = 15;
const SOLVE_TOL: f64 = 1e-9;
pub const MODES: [FlexibilityMode; 2] = [FlexibilityMode::Quadratic, FlexibilityMode::OnDemand];

pub const PROFILE_HEADER: [&str; 6] = ["surge_pct", "mode", "slot", "demand_kw", "renewable_kw", "thermal_kw"];
pub const SUMMARY_HEADER: [&str; 7] = [
    "surge_pct",
    "mode",
    "loads",
    "peak_demand_kw",
    "peak_generation_kw",
    "proportion_served",
    "welfare",
];

#[derive(Debug, Clone, Serialize)]
pub struct Inputs {
    pub day: Option<String>,
    pub sessions: Vec<ChargingSession>,
    pub spans_midnight: usize,
    pub other_days: usize,
    pub renewable: Vec<f64>,
    pub resampling: Resampling,
    pub grid: TimeGrid,
}

/// Reads both files. Only sessions connecting on the earliest connection
/// date in the file are used.
pub fn load_inputs(sessions: &Path, generation: &Path, lenient: bool) -> Result<Inputs> {
    let grid = TimeGrid::day(SLOT_MINUTES)?;
    let file = File::open(sessions).with_context(|| format!("cannot read {}", sessions.display()))?;
    let set = parse_sessions(file, None, lenient).with_context(|| format!("in {}", sessions.display()))?;
    let day = set.sessions.iter().map(|s| s.connection.date()).min();
    let (kept, other): (Vec<_>, Vec<_>) =
        set.sessions.into_iter().partition(|s| Some(s.connection.date()) == day);
    let file = File::open(generation).with_context(|| format!("cannot read {}", generation.display()))?;
    let series = parse_generation(file, &grid, lenient).with_context(|| format!("in {}", generation.display()))?;
    Ok(Inputs {
        day: day.map(|d| d.to_string()),
        sessions: kept,
        spans_midnight: set.spans_midnight,
        other_days: other.len(),
        renewable: series.kw,
        resampling: series.resampling,
        grid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub surge_pct: u32,
    pub mode: FlexibilityMode,
    pub loads: usize,
    pub solver_status: String,
    pub kkt_residual: f64,
    pub demand: Vec<f64>,
    pub thermal: Vec<f64>,
    pub peak_demand: f64,
    pub peak_generation: f64,
    pub proportion_served: f64,
    pub welfare: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Rejection {
    pub session_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseStudy {
    pub scenarios: Vec<Scenario>,
    pub rejected: Vec<Rejection>,
}

fn run_one(inputs: &Inputs, cfg: &ScenarioConfig) -> Result<(Scenario, Vec<Rejection>)> {
    let (base, rejected) = build_instance(&inputs.sessions, inputs.renewable.clone(), inputs.grid, cfg)?;
    let pool = base.loads.clone();
    // the same seed at every level makes smaller surges prefixes of larger ones
    let inst = build_surge(&base, &pool, cfg.surge_pct, cfg.seed)?;
    let out = solve_sppr_report(&inst, SOLVE_TOL)
        .with_context(|| format!("surge {}% {}", cfg.surge_pct, cfg.mode.name()))?;
    let sol = &out.solution;
    let demand = inst.demand(&sol.x);
    let m = inst.num_loads();
    let served: f64 = sol.x.iter().flatten().sum();
    let peak = |v: &[f64]| v.iter().fold(0.0, |a: f64, b| a.max(*b));
    let scenario = Scenario {
        surge_pct: cfg.surge_pct,
        mode: cfg.mode,
        loads: m,
        solver_status: format!("{:?}", out.stats.status),
        kkt_residual: out.stats.kkt_residual,
        peak_demand: peak(&demand),
        peak_generation: peak(&sol.q),
        proportion_served: if m == 0 { 1.0 } else { served / m as f64 },
        welfare: -sol.objective,
        demand,
        thermal: sol.q.clone(),
    };
    let rejected = rejected
        .into_iter()
        .map(|(session_id, reason)| Rejection { session_id, reason })
        .collect();
    Ok((scenario, rejected))
}

/// Runs every `(surge, mode)` pair, in parallel when `threads` allows, and
/// returns them ordered by surge then mode.
pub fn run(inputs: &Inputs, base: &ScenarioConfig, surges: &[u32], threads: Option<usize>) -> Result<CaseStudy> {
    if surges.is_empty() {
        bail!("no surge levels given");
    }
    let jobs: Vec<ScenarioConfig> = surges
        .iter()
        .flat_map(|&surge_pct| {
            MODES.map(|mode| ScenarioConfig {
                surge_pct,
                mode,
                ..base.clone()
            })
        })
        .collect();
    for cfg in &jobs {
        cfg.validate()?;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    let results: Vec<Result<(Scenario, Vec<Rejection>)>> =
        pool.install(|| jobs.par_iter().map(|cfg| run_one(inputs, cfg)).collect());
    let mut scenarios = Vec::with_capacity(results.len());
    let mut rejected = Vec::new();
    for r in results {
        let (s, rej) = r?;
        if scenarios.is_empty() {
            rejected = rej;
        }
        scenarios.push(s);
    }
    Ok(CaseStudy { scenarios, rejected })
}

pub fn write_profiles(path: &Path, study: &CaseStudy, renewable: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(PROFILE_HEADER)?;
    for s in &study.scenarios {
        for (t, (d, q)) in s.demand.iter().zip(&s.thermal).enumerate() {
            w.write_record([
                s.surge_pct.to_string(),
                s.mode.name().to_string(),
                (t + 1).to_string(),
                d.to_string(),
                renewable[t].to_string(),
                q.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, study: &CaseStudy) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(SUMMARY_HEADER)?;
    for s in &study.scenarios {
        w.write_record([
            s.surge_pct.to_string(),
            s.mode.name().to_string(),
            s.loads.to_string(),
            s.peak_demand.to_string(),
            s.peak_generation.to_string(),
            s.proportion_served.to_string(),
            s.welfare.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub surge_pct: Quantity<u32>,
    pub mode: FlexibilityMode,
    pub loads: Quantity<usize>,
    pub solver_status: String,
    pub kkt_residual: Quantity<f64>,
    pub peak_demand: Quantity<f64>,
    pub peak_generation: Quantity<f64>,
    pub proportion_served: Quantity<f64>,
    pub welfare: Quantity<f64>,
}

impl From<&Scenario> for ScenarioReport {
    fn from(s: &Scenario) -> Self {
        ScenarioReport {
            surge_pct: qty(s.surge_pct, "%"),
            mode: s.mode,
            loads: qty(s.loads, DIMENSIONLESS),
            solver_status: s.solver_status.clone(),
            kkt_residual: qty(s.kkt_residual, DIMENSIONLESS),
            peak_demand: qty(s.peak_demand, KW),
            peak_generation: qty(s.peak_generation, KW),
            proportion_served: qty(s.proportion_served, DIMENSIONLESS),
            welfare: qty(s.welfare, CURRENCY),
        }
    }
}

/// Flexible against on-demand at the lowest and highest surge levels.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub surge_pct: Quantity<u32>,
    pub peak_generation_reduction: Quantity<f64>,
    pub peak_demand_reduction: Quantity<f64>,
    pub on_demand_excluded_at_max_surge: Quantity<f64>,
    pub max_surge_pct: Quantity<u32>,
}

pub fn find(study: &CaseStudy, surge: u32, mode: FlexibilityMode) -> Option<&Scenario> {
    study.scenarios.iter().find(|s| s.surge_pct == surge && s.mode == mode)
}

pub fn compare(study: &CaseStudy) -> Option<Comparison> {
    let lo = study.scenarios.iter().map(|s| s.surge_pct).min()?;
    let hi = study.scenarios.iter().map(|s| s.surge_pct).max()?;
    let flex = find(study, lo, FlexibilityMode::Quadratic)?;
    let rigid = find(study, lo, FlexibilityMode::OnDemand)?;
    let rigid_hi = find(study, hi, FlexibilityMode::OnDemand)?;
    let reduction = |a: f64, b: f64| if b > 0.0 { 100.0 * (b - a) / b } else { 0.0 };
    Some(Comparison {
        surge_pct: qty(lo, "%"),
        peak_generation_reduction: qty(reduction(flex.peak_generation, rigid.peak_generation), "%"),
        peak_demand_reduction: qty(reduction(flex.peak_demand, rigid.peak_demand), "%"),
        on_demand_excluded_at_max_surge: qty(100.0 * (1.0 - rigid_hi.proportion_served), "%"),
        max_surge_pct: qty(hi, "%"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(surge_pct: u32, mode: FlexibilityMode, peak_generation: f64, served: f64) -> Scenario {
        Scenario {
            surge_pct,
            mode,
            loads: 4,
            solver_status: "Optimal".into(),
            kkt_residual: 0.0,
            demand: vec![1.0, 2.0],
            thermal: vec![0.0, peak_generation],
            peak_demand: 2.0,
            peak_generation,
            proportion_served: served,
            welfare: 1.0,
        }
    }

    #[test]
    fn comparison_uses_extreme_surges() {
        let study = CaseStudy {
            scenarios: vec![
                scenario(0, FlexibilityMode::Quadratic, 1.0, 1.0),
                scenario(0, FlexibilityMode::OnDemand, 4.0, 0.9),
                scenario(50, FlexibilityMode::Quadratic, 2.0, 1.0),
                scenario(50, FlexibilityMode::OnDemand, 5.0, 0.5),
            ],
            rejected: vec![],
        };
        let c = compare(&study).unwrap();
        assert_eq!(c.surge_pct.value, 0);
        assert_eq!(c.max_surge_pct.value, 50);
        assert!((c.peak_generation_reduction.value - 75.0).abs() < 1e-12);
        assert_eq!(c.peak_demand_reduction.value, 0.0);
        assert!((c.on_demand_excluded_at_max_surge.value - 50.0).abs() < 1e-12);
        assert!(compare(&CaseStudy { scenarios: vec![], rejected: vec![] }).is_none());
    }

    #[test]
    fn summary_rows_follow_scenarios() {
        let study = CaseStudy {
            scenarios: vec![scenario(25, FlexibilityMode::OnDemand, 3.0, 0.5)],
            rejected: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        write_summary(&path, &study).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, [SUMMARY_HEADER.join(",").as_str(), "25,on_demand,4,2,3,0.5,1"]);
    }
}
