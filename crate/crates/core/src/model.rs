//! Domain types shared by every other module, plus the disutility
//! constructors used by the EV case study.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete horizon `1..=slots`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub slots: usize,
    #[serde(default = "default_slot_minutes")]
    pub slot_minutes: u32,
}

fn default_slot_minutes() -> u32 {
    15
}

impl TimeGrid {
    pub fn new(slots: usize, slot_minutes: u32) -> Result<Self> {
        if slots == 0 {
            return Err(Error::validation("time grid needs at least one slot"));
        }
        if slot_minutes == 0 {
            return Err(Error::validation("slot length must be at least one minute"));
        }
        Ok(TimeGrid {
            slots,
            slot_minutes,
        })
    }

    /// Grid of `slot_minutes` slots covering one day.
    pub fn day(slot_minutes: u32) -> Result<Self> {
        if slot_minutes == 0 || 1440 % slot_minutes != 0 {
            return Err(Error::validation(format!(
                "slot length {slot_minutes} min does not divide a day"
            )));
        }
        Self::new((1440 / slot_minutes) as usize, slot_minutes)
    }

    pub fn slot_hours(&self) -> f64 {
        self.slot_minutes as f64 / 60.0
    }
}

/// One non-preemptive load class.
///
/// `level` is in kW, `ubar` and the disutility vectors in currency units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadType {
    pub id: String,
    pub tau: usize,
    pub level: f64,
    pub ubar: f64,
    pub dis_start: Vec<f64>,
    pub dis_end: Vec<f64>,
}

impl LoadType {
    /// Last 1-based slot at which a start still completes within `horizon`.
    pub fn last_start(&self, horizon: usize) -> usize {
        horizon + 1 - self.tau.min(horizon)
    }

    /// Energy in kW-slots, `tau * level`.
    pub fn energy(&self) -> f64 {
        self.tau as f64 * self.level
    }
}

/// Thermal cost `c(q) = a q^2 + b q` plus a renewable trace in kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub a: f64,
    pub b: f64,
    pub renewable: Vec<f64>,
}

impl GeneratorModel {
    pub fn cost(&self, q: f64) -> f64 {
        self.a * q * q + self.b * q
    }

    pub fn marginal_cost(&self, q: f64) -> f64 {
        2.0 * self.a * q + self.b
    }

    /// Output at which marginal cost equals `price`, floored at zero.
    pub fn supply_at(&self, price: f64) -> f64 {
        ((price - self.b) / (2.0 * self.a)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub grid: TimeGrid,
    pub loads: Vec<LoadType>,
    pub generator: GeneratorModel,
}

impl Instance {
    pub fn horizon(&self) -> usize {
        self.grid.slots
    }

    pub fn num_loads(&self) -> usize {
        self.loads.len()
    }

    /// Returns `Err` carrying every violation when the instance is invalid.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_instance(self);
        if report.is_empty() {
            Ok(())
        } else {
            let msg = report
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::Validation(msg))
        }
    }

    /// Residual demand `sum_i l_i running_i(x)_t - g_t` for a start matrix.
    pub fn residual_demand(&self, x: &[Vec<f64>]) -> Vec<f64> {
        let mut demand = self.demand(x);
        for (d, g) in demand.iter_mut().zip(&self.generator.renewable) {
            *d -= g;
        }
        demand
    }

    /// Aggregate demand in kW for a start matrix.
    pub fn demand(&self, x: &[Vec<f64>]) -> Vec<f64> {
        let horizon = self.horizon();
        let mut demand = vec![0.0; horizon];
        for (load, row) in self.loads.iter().zip(x) {
            let run = crate::window::running(row, load.tau);
            for t in 0..horizon {
                demand[t] += load.level * run[t];
            }
        }
        demand
    }
}

/// One failed invariant, naming the offending entity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

fn finite_nonneg(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite() && *v >= 0.0)
}

/// Lists every violated type invariant; empty iff the instance is valid.
pub fn validate_instance(inst: &Instance) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |subject: &str, message: String| {
        out.push(Violation {
            subject: subject.to_string(),
            message,
        })
    };
    let horizon = inst.grid.slots;
    if horizon == 0 {
        push("grid", "T must be at least 1".into());
    }
    if inst.grid.slot_minutes == 0 {
        push("grid", "slot_minutes must be at least 1".into());
    }

    let gen = &inst.generator;
    if !(gen.a.is_finite() && gen.a > 0.0) {
        push(
            "generator",
            format!("quadratic coefficient a = {} must be > 0 for strict convexity", gen.a),
        );
    }
    if !(gen.b.is_finite() && gen.b >= 0.0) {
        push("generator", format!("linear coefficient b = {} must be >= 0", gen.b));
    }
    if gen.renewable.len() != horizon {
        push(
            "generator",
            format!("renewable trace has {} entries, expected {horizon}", gen.renewable.len()),
        );
    }
    if !finite_nonneg(&gen.renewable) {
        push("generator", "renewable output must be finite and >= 0".into());
    }

    let mut seen = HashSet::new();
    for load in &inst.loads {
        let id = format!("load {}", load.id);
        if !seen.insert(load.id.as_str()) {
            push(&id, "duplicate load id".into());
        }
        if load.tau == 0 || load.tau > horizon {
            push(&id, format!("duration tau = {} outside 1..={horizon}", load.tau));
        }
        if !(load.level.is_finite() && load.level > 0.0) {
            push(&id, format!("level = {} must be > 0", load.level));
        }
        if !(load.ubar.is_finite() && load.ubar >= 0.0) {
            push(&id, format!("utility = {} must be >= 0", load.ubar));
        }
        if load.dis_start.len() != horizon || load.dis_end.len() != horizon {
            push(&id, format!("disutility vectors must have length {horizon}"));
        }
        if !finite_nonneg(&load.dis_start) || !finite_nonneg(&load.dis_end) {
            push(&id, "disutility entries must be finite and >= 0".into());
        }
    }
    out
}

fn check_slot(name: &str, t: usize, grid: &TimeGrid) -> Result<()> {
    if t == 0 || t > grid.slots {
        return Err(Error::validation(format!(
            "{name} = {t} outside 1..={}",
            grid.slots
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::validation(format!("alpha = {alpha} must be >= 0")));
    }
    Ok(())
}

/// Quadratic penalty for starting before `t_c` or running past `t_d`
/// (both 1-based, inclusive window).
pub fn build_quadratic_disutility(
    t_c: usize,
    t_d: usize,
    alpha: f64,
    grid: &TimeGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_slot("t_C", t_c, grid)?;
    check_slot("t_D", t_d, grid)?;
    check_alpha(alpha)?;
    if t_c > t_d {
        return Err(Error::validation(format!("t_C = {t_c} exceeds t_D = {t_d}")));
    }
    let dis_start = (1..=grid.slots)
        .map(|t| if t < t_c { alpha * ((t_c - t) as f64).powi(2) } else { 0.0 })
        .collect();
    let dis_end = (1..=grid.slots)
        .map(|t| if t > t_d { alpha * ((t - t_d) as f64).powi(2) } else { 0.0 })
        .collect();
    Ok((dis_start, dis_end))
}

/// Flat worst-case penalty everywhere except the arrival slot `t_c`: the
/// on-demand baseline where the load is effectively inflexible.
pub fn build_inflexible_disutility(
    t_c: usize,
    alpha: f64,
    grid: &TimeGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_slot("t_C", t_c, grid)?;
    check_alpha(alpha)?;
    let before = t_c as f64;
    let after = (grid.slots - t_c) as f64;
    let k = alpha * (before * before).max(after * after);
    let dis_start = (1..=grid.slots).map(|t| if t < t_c { k } else { 0.0 }).collect();
    let dis_end = (1..=grid.slots).map(|t| if t > t_c { k } else { 0.0 }).collect();
    Ok((dis_start, dis_end))
}
