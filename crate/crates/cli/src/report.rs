//! Serialized forms of reports and of the files `solve` writes and `verify`
//! reads. Every number is stored next to its unit.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use flexgrid::equilibrium::{Allocation, EquilibriumReport};
use flexgrid::planner::{KktCheck, Matrix, PriceSet, SolveStats};

pub const CURRENCY: &str = "$";
pub const CURRENCY_PER_KW: &str = "$/kW";
pub const KW: &str = "kW";
pub const DIMENSIONLESS: &str = "1";
pub const SLOT: &str = "slot";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity<T> {
    pub value: T,
    pub unit: String,
}

pub fn qty<T>(value: T, unit: &str) -> Quantity<T> {
    Quantity {
        value,
        unit: unit.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationFile {
    pub x: Quantity<Matrix>,
    pub y: Quantity<Matrix>,
    pub z: Quantity<Matrix>,
    pub q: Quantity<Vec<f64>>,
}

impl From<&Allocation> for AllocationFile {
    fn from(a: &Allocation) -> Self {
        AllocationFile {
            x: qty(a.x.clone(), DIMENSIONLESS),
            y: qty(a.y.clone(), DIMENSIONLESS),
            z: qty(a.z.clone(), DIMENSIONLESS),
            q: qty(a.q.clone(), KW),
        }
    }
}

impl From<AllocationFile> for Allocation {
    fn from(f: AllocationFile) -> Self {
        Allocation {
            x: f.x.value,
            y: f.y.value,
            z: f.z.value,
            q: f.q.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceFile {
    pub p_con: Quantity<Matrix>,
    pub p_gen: Quantity<Vec<f64>>,
    pub p_s: Quantity<Matrix>,
    pub p_e: Quantity<Matrix>,
}

impl From<&PriceSet> for PriceFile {
    fn from(p: &PriceSet) -> Self {
        PriceFile {
            p_con: qty(p.p_con.clone(), CURRENCY),
            p_gen: qty(p.p_gen.clone(), CURRENCY_PER_KW),
            p_s: qty(p.p_s.clone(), CURRENCY),
            p_e: qty(p.p_e.clone(), CURRENCY),
        }
    }
}

impl From<PriceFile> for PriceSet {
    fn from(f: PriceFile) -> Self {
        PriceSet {
            p_con: f.p_con.value,
            p_gen: f.p_gen.value,
            p_s: f.p_s.value,
            p_e: f.p_e.value,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverSection {
    pub status: String,
    pub kkt_residual: Quantity<f64>,
    pub iterations: Quantity<usize>,
    pub kkt_families: Vec<(String, Quantity<f64>)>,
}

impl SolverSection {
    pub fn new(stats: &SolveStats, kkt: &KktCheck) -> Self {
        SolverSection {
            status: format!("{:?}", stats.status),
            kkt_residual: qty(stats.kkt_residual, DIMENSIONLESS),
            iterations: qty(stats.iterations, DIMENSIONLESS),
            kkt_families: kkt
                .families()
                .iter()
                .map(|(name, v)| (name.to_string(), qty(*v, DIMENSIONLESS)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactSection {
    pub objective: Quantity<f64>,
    pub integrality_gap: Quantity<f64>,
    pub starts: Quantity<Vec<Option<usize>>>,
    pub nodes_explored: Quantity<usize>,
    pub bound_gap: Quantity<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumSection {
    pub is_equilibrium: bool,
    pub tol: Quantity<f64>,
    pub consumer_gaps: Quantity<Vec<f64>>,
    pub generator_gap: Quantity<f64>,
    pub iso_gap: Quantity<f64>,
}

impl From<&EquilibriumReport> for EquilibriumSection {
    fn from(r: &EquilibriumReport) -> Self {
        EquilibriumSection {
            is_equilibrium: r.is_equilibrium,
            tol: qty(r.tol, DIMENSIONLESS),
            consumer_gaps: qty(r.consumer_gaps.clone(), CURRENCY),
            generator_gap: qty(r.generator_gap, CURRENCY),
            iso_gap: qty(r.iso_gap, CURRENCY),
        }
    }
}

/// Output of `solve`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub input_digest: String,
    pub seed: Option<u64>,
    pub solver: SolverSection,
    pub relaxed_objective: Quantity<f64>,
    pub exact: Option<ExactSection>,
    pub prices: PriceFile,
    pub equilibrium: EquilibriumSection,
}

/// SHA-256 over the per-file digests of `paths`, in order.
pub fn digest_files(paths: &[&Path]) -> Result<String> {
    let mut outer = Sha256::new();
    for p in paths {
        let bytes = fs::read(p).with_context(|| format!("cannot read {}", p.display()))?;
        outer.update(Sha256::digest(&bytes));
    }
    Ok(hex::encode(outer.finalize()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not valid", path.display()))
}
