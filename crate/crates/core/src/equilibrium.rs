//! Best responses of consumers, the generator and the system operator to a
//! price set, and the equilibrium certificate built from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GeneratorModel, Instance, LoadType};
use crate::planner::{complete_yz, Matrix, PriceSet, RelaxedSolution};
use crate::qp::{solve_qp, QpProblem, QpStatus, DEFAULT_MAX_ITER};
use crate::window;

/// A joint schedule: starts, flexibility slacks and thermal output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub x: Matrix,
    pub y: Matrix,
    pub z: Matrix,
    pub q: Vec<f64>,
}

impl From<RelaxedSolution> for Allocation {
    fn from(s: RelaxedSolution) -> Self {
        Allocation {
            x: s.x,
            y: s.y,
            z: s.z,
            q: s.q,
        }
    }
}

impl From<&RelaxedSolution> for Allocation {
    fn from(s: &RelaxedSolution) -> Self {
        s.clone().into()
    }
}

/// Best-response value minus achieved value for every entity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub consumer_gaps: Vec<f64>,
    pub generator_gap: f64,
    pub iso_gap: f64,
    pub is_equilibrium: bool,
    pub tol: f64,
}

impl EquilibriumReport {
    pub fn max_gap(&self) -> f64 {
        self.consumer_gaps
            .iter()
            .chain([&self.generator_gap, &self.iso_gap])
            .fold(0.0, |m, g| m.max(*g))
    }
}

/// A consumer's optimal response.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsumerResponse {
    pub value: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

fn check_row(name: &str, row: &[f64], horizon: usize) -> Result<()> {
    if row.len() != horizon {
        return Err(Error::dimension(format!(
            "{name} has length {}, expected {horizon}",
            row.len()
        )));
    }
    Ok(())
}

/// Per-start cost of a consumer: the activation price less utility, plus the
/// net flexibility charge on every slot the start's service touches.
fn consumer_start_costs(load: &LoadType, p_con: &[f64], p_s: &[f64], p_e: &[f64]) -> Vec<f64> {
    let horizon = p_con.len();
    let tau = load.tau;
    let last = load.last_start(horizon);
    (0..horizon)
        .map(|r| {
            let mut c = p_con[r] - if r < last { load.ubar } else { 0.0 };
            for t in r..horizon {
                c += (load.dis_start[t] - p_s[t]) * window::start_coef(t, r, tau) / tau as f64;
            }
            for t in 0..=(r + tau - 1).min(horizon - 1) {
                c += (load.dis_end[t] - p_e[t]) * window::end_coef(t, r, tau, horizon)
                    / tau as f64;
            }
            c
        })
        .collect()
}

/// Consumer value of `(x, y, z)` at the given prices.
fn consumer_value(
    load: &LoadType,
    p: (&[f64], &[f64], &[f64]),
    x: &[f64],
    y: &[f64],
    z: &[f64],
) -> f64 {
    let (p_con, p_s, p_e) = p;
    let horizon = p_con.len();
    let last = load.last_start(horizon);
    let mut v = 0.0;
    for t in 0..horizon {
        v += p_con[t] * x[t];
        if t < last {
            v -= load.ubar * x[t];
        }
        v += (load.dis_start[t] - p_s[t]) * (1.0 - y[t]);
        v += (load.dis_end[t] - p_e[t]) * (1.0 - z[t]);
    }
    v
}

/// Solves the consumer's relaxed problem.
///
/// With the flexibility equalities substituted, `1 − y` and `1 − z` are
/// linear in `x` and `y, z ≥ 0` reduce to the single knapsack
/// `Σ_r served(r) x_r ≤ τ`. The optimum therefore puts all mass on the start
/// with the most negative cost per served slot, or serves nothing. Starts
/// within `tol` of the best ratio go to the earliest one.
pub fn consumer_best_response(
    load: &LoadType,
    p_con: &[f64],
    p_s: &[f64],
    p_e: &[f64],
    tol: f64,
) -> Result<ConsumerResponse> {
    let horizon = load.dis_start.len();
    for (name, row) in [("p_con", p_con), ("p_S", p_s), ("p_E", p_e)] {
        check_row(name, row, horizon)?;
    }
    let costs = consumer_start_costs(load, p_con, p_s, p_e);
    let tau = load.tau;
    let ratio = |r: usize| costs[r] / window::served_slots(r, tau, horizon) as f64;
    let best = (0..horizon).map(ratio).fold(f64::INFINITY, f64::min);

    let mut x = vec![0.0; horizon];
    let mut value = 0.0;
    if best < -tol {
        let r = (0..horizon)
            .find(|&r| ratio(r) <= best + tol)
            .expect("the minimum is attained");
        x[r] = tau as f64 / window::served_slots(r, tau, horizon) as f64;
        value = costs[r] * x[r];
    }
    let y: Vec<f64> = window::start_side(&x, tau)
        .iter()
        .map(|s| (1.0 - s / tau as f64).max(0.0))
        .collect();
    let z: Vec<f64> = window::end_side(&x, tau)
        .iter()
        .map(|s| (1.0 - s / tau as f64).max(0.0))
        .collect();
    Ok(ConsumerResponse { value, x, y, z })
}

/// Profit-maximizing thermal output at each slot's price, in closed form.
/// Profit includes the renewable revenue `Σ p_t g_t`.
pub fn generator_best_response(gen: &GeneratorModel, p_gen: &[f64]) -> (f64, Vec<f64>) {
    let q: Vec<f64> = p_gen.iter().map(|&p| gen.supply_at(p)).collect();
    (generator_profit(gen, p_gen, &q), q)
}

fn generator_profit(gen: &GeneratorModel, p_gen: &[f64], q: &[f64]) -> f64 {
    p_gen
        .iter()
        .zip(q)
        .zip(&gen.renewable)
        .map(|((p, q), g)| p * q - gen.cost(*q) + p * g)
        .sum()
}

/// The operator's optimal admissible schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoResponse {
    pub value: f64,
    pub q: Vec<f64>,
    pub x: Matrix,
}

const ISO_STALL_ACCEPT: f64 = 1e-7;

/// Solves the operator's LP: minimize the value of unused supply
/// `Σ_t p_t (q_t + g_t − demand_t)` over admissible schedules.
///
/// Written with `e_t = q_t + g_t − demand_t` the LP has rows
/// `g_t − demand_t ≤ e_t` and one knapsack per load; `e_t ≤ g_t + 1` keeps
/// the feasible set bounded and never binds, since some optimum has
/// `e_t = (g_t − demand_t)^+ ≤ g_t`.
pub fn iso_best_response(inst: &Instance, p_gen: &[f64], tol: f64) -> Result<IsoResponse> {
    let horizon = inst.horizon();
    check_row("p_gen", p_gen, horizon)?;
    if p_gen.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::validation("generation prices must be nonnegative"));
    }
    let m = inst.num_loads();
    let x_index = |i: usize, r: usize| horizon + i * horizon + r;
    let mut p = QpProblem::new(horizon * (m + 1));
    p.linear[..horizon].copy_from_slice(p_gen);
    for t in 0..horizon {
        let g = inst.generator.renewable[t];
        let mut row = vec![(t, -1.0)];
        for (i, load) in inst.loads.iter().enumerate() {
            for r in (t + 1).saturating_sub(load.tau)..=t {
                row.push((x_index(i, r), -load.level));
            }
        }
        p.add_row(row, -g);
        p.add_row([(t, 1.0)], g + 1.0);
    }
    for (i, load) in inst.loads.iter().enumerate() {
        let row = (0..horizon).map(|r| {
            let served = window::served_slots(r, load.tau, horizon) as f64;
            (x_index(i, r), served / load.tau as f64)
        });
        p.add_row(row, 1.0);
    }
    // At degenerate vertices the method can crawl once the target is very
    // tight, while a looser target is reached cleanly. The value below is
    // recomputed from x, so a near-optimal iterate is still usable.
    let mut target = tol;
    let sol = loop {
        let sol = solve_qp(&p, target, DEFAULT_MAX_ITER)?;
        let done = sol.status == QpStatus::Optimal || target >= ISO_STALL_ACCEPT;
        if done || sol.status == QpStatus::Infeasible {
            break sol;
        }
        target = (target * 10.0).min(ISO_STALL_ACCEPT);
    };
    if sol.status == QpStatus::Infeasible || !(sol.kkt_residual <= tol.max(ISO_STALL_ACCEPT)) {
        return Err(Error::Solver {
            status: sol.status,
            residual: sol.kkt_residual,
        });
    }
    let x: Matrix = (0..m)
        .map(|i| {
            (0..horizon)
                .map(|r| sol.primal[x_index(i, r)].max(0.0))
                .collect()
        })
        .collect();
    let residual = inst.residual_demand(&x);
    let q: Vec<f64> = residual.iter().map(|d| d.max(0.0)).collect();
    let value = p_gen
        .iter()
        .zip(&residual)
        .map(|(p, d)| p * (-d).max(0.0))
        .sum();
    Ok(IsoResponse { value, q, x })
}

fn check_alloc(inst: &Instance, alloc: &Allocation, prices: &PriceSet) -> Result<()> {
    let horizon = inst.horizon();
    let m = inst.num_loads();
    let mat_ok = |mat: &Matrix| mat.len() == m && mat.iter().all(|r| r.len() == horizon);
    if !(mat_ok(&alloc.x) && mat_ok(&alloc.y) && mat_ok(&alloc.z) && alloc.q.len() == horizon) {
        return Err(Error::dimension(format!("allocation must be {m}x{horizon}")));
    }
    if !(mat_ok(&prices.p_con) && mat_ok(&prices.p_s) && mat_ok(&prices.p_e))
        || prices.p_gen.len() != horizon
    {
        return Err(Error::dimension(format!("prices must be {m}x{horizon}")));
    }
    Ok(())
}

/// Compares every entity's achieved value with its best response under
/// `prices`. Values, not solutions, are compared: the entity problems are
/// linear or separable and often have many optimizers.
pub fn verify_equilibrium(
    inst: &Instance,
    alloc: &Allocation,
    prices: &PriceSet,
    tol: f64,
) -> Result<EquilibriumReport> {
    check_alloc(inst, alloc, prices)?;
    let mut consumer_gaps = Vec::with_capacity(inst.num_loads());
    for (i, load) in inst.loads.iter().enumerate() {
        let rows = (
            prices.p_con[i].as_slice(),
            prices.p_s[i].as_slice(),
            prices.p_e[i].as_slice(),
        );
        let best = consumer_best_response(load, rows.0, rows.1, rows.2, tol * 1e-3)?;
        let achieved = consumer_value(load, rows, &alloc.x[i], &alloc.y[i], &alloc.z[i]);
        consumer_gaps.push(achieved - best.value);
    }

    let gen = &inst.generator;
    let (best_profit, _) = generator_best_response(gen, &prices.p_gen);
    let generator_gap = best_profit - generator_profit(gen, &prices.p_gen, &alloc.q);

    let iso = iso_best_response(inst, &prices.p_gen, (tol * 1e-3).min(1e-9))?;
    let demand = inst.demand(&alloc.x);
    let achieved: f64 = (0..inst.horizon())
        .map(|t| prices.p_gen[t] * (alloc.q[t] + gen.renewable[t] - demand[t]))
        .sum();
    let iso_gap = achieved - iso.value;

    let feasible = allocation_feasible(inst, alloc, tol);
    let is_equilibrium = feasible
        && consumer_gaps.iter().all(|g| *g <= tol)
        && generator_gap <= tol
        && iso_gap <= tol;
    Ok(EquilibriumReport {
        consumer_gaps,
        generator_gap,
        iso_gap,
        is_equilibrium,
        tol,
    })
}

/// Nonnegativity, flexibility equalities and power balance, within `tol`.
fn allocation_feasible(inst: &Instance, alloc: &Allocation, tol: f64) -> bool {
    let Ok((y, z)) = complete_yz(inst, &alloc.x) else {
        return false;
    };
    let close = |a: &Matrix, b: &Matrix| {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .all(|(u, v)| (u - v).abs() <= tol)
    };
    let nonneg = alloc.x.iter().flatten().chain(&alloc.q).all(|v| *v >= -tol);
    let balanced = inst
        .residual_demand(&alloc.x)
        .iter()
        .zip(&alloc.q)
        .all(|(d, q)| *d <= q + tol);
    nonneg && balanced && close(&y, &alloc.y) && close(&z, &alloc.z)
}
