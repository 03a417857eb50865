//! The relaxed social planner's problem (SPP-R): assembly into a QP, solution,
//! dual recovery, price derivation and the full KKT check.
//!
//! Variable layout for load `i` and slot `t` (0-based inside this module):
//! `x_it` start probability, `y_it`/`z_it` start-side and end-side
//! flexibility slack, `q_t` thermal output. Rows:
//!
//! ```text
//! balance  Σ_i l_i running_i(x)_t − q_t            ≤ g_t
//! start    Σ_r start_coef(t, r) x_ir + τ_i y_it    ≤ τ_i
//! end      Σ_r end_coef(t, r) x_ir + τ_i z_it      ≤ τ_i
//! ```

mod kkt;
mod prices;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Instance;
use crate::qp::{finish_on_partition, kkt_residuals, solve_qp, QpProblem, QpStatus, DEFAULT_MAX_ITER};
use crate::window;

pub use kkt::{check_sppr_kkt, lagrangian, lagrangian_rearranged, KktCheck};
pub use prices::{derive_prices, price_plambda, price_pnu};

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedSolution {
    pub x: Matrix,
    pub y: Matrix,
    pub z: Matrix,
    pub q: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub lambda: Vec<f64>,
    pub nu_s: Matrix,
    pub nu_e: Matrix,
}

impl DualCertificate {
    pub fn zeros(m: usize, t: usize) -> Self {
        DualCertificate {
            lambda: vec![0.0; t],
            nu_s: vec![vec![0.0; t]; m],
            nu_e: vec![vec![0.0; t]; m],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSet {
    pub p_con: Matrix,
    pub p_gen: Vec<f64>,
    pub p_s: Matrix,
    pub p_e: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Q,
    X,
    Y,
    Z,
}

/// Which starts of one load a restricted relaxation may use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Restriction {
    /// `allowed[t]`: start at slot `t` (0-based) may carry mass.
    pub allowed: Vec<bool>,
    /// Start fixed to this 0-based slot with probability one.
    pub forced: Option<usize>,
}

impl Restriction {
    /// Every start that completes inside the horizon.
    pub fn full_starts(tau: usize, horizon: usize) -> Self {
        Restriction {
            allowed: (0..horizon)
                .map(|r| window::is_full_start(r, tau, horizon))
                .collect(),
            forced: None,
        }
    }
}

/// Variable and row bookkeeping for an assembled SPP-R.
#[derive(Debug, Clone)]
pub struct IndexMap {
    pub vars: Vec<(VarKind, usize, usize)>,
    pub q: Vec<usize>,
    pub x: Vec<Vec<Option<usize>>>,
    pub y: Vec<Vec<usize>>,
    pub z: Vec<Vec<usize>>,
    pub balance_rows: Vec<usize>,
    pub start_rows: Vec<Vec<usize>>,
    pub end_rows: Vec<Vec<usize>>,
    /// Added to the QP objective to recover the SPP-R objective.
    pub constant: f64,
    /// Start matrix contribution that is fixed by restrictions.
    pub fixed_x: Matrix,
}

impl IndexMap {
    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }
}

/// Builds SPP-R with every start available.
pub fn assemble_sppr(inst: &Instance) -> Result<(QpProblem, IndexMap)> {
    assemble_restricted(inst, None)
}

/// Builds SPP-R with optional per-load start restrictions. Disallowed starts
/// are left out of the problem; forced starts become constants.
pub fn assemble_restricted(
    inst: &Instance,
    restrictions: Option<&[Restriction]>,
) -> Result<(QpProblem, IndexMap)> {
    inst.ensure_valid()?;
    let horizon = inst.horizon();
    let m = inst.num_loads();
    if let Some(r) = restrictions {
        if r.len() != m || r.iter().any(|x| x.allowed.len() != horizon) {
            return Err(Error::dimension("restrictions must cover every load and slot"));
        }
        if r.iter().filter_map(|x| x.forced).any(|t| t >= horizon) {
            return Err(Error::validation("forced start outside the horizon"));
        }
    }

    let mut vars = Vec::new();
    let mut push = |kind, i, t| {
        vars.push((kind, i, t));
        vars.len() - 1
    };
    let q: Vec<usize> = (0..horizon).map(|t| push(VarKind::Q, 0, t)).collect();
    let mut x = vec![vec![None; horizon]; m];
    let mut y = vec![Vec::with_capacity(horizon); m];
    let mut z = vec![Vec::with_capacity(horizon); m];
    let mut fixed_x = vec![vec![0.0; horizon]; m];
    for i in 0..m {
        let restriction = restrictions.map(|r| &r[i]);
        match restriction.and_then(|r| r.forced) {
            Some(t) => fixed_x[i][t] = 1.0,
            None => {
                for (t, slot) in x[i].iter_mut().enumerate() {
                    if restriction.map_or(true, |r| r.allowed[t]) {
                        *slot = Some(push(VarKind::X, i, t));
                    }
                }
            }
        }
        for t in 0..horizon {
            y[i].push(push(VarKind::Y, i, t));
        }
        for t in 0..horizon {
            z[i].push(push(VarKind::Z, i, t));
        }
    }

    let n = vars.len();
    let mut p = QpProblem::new(n);
    let gen = &inst.generator;
    let mut constant = 0.0;
    for &j in &q {
        p.quad[j] = 2.0 * gen.a;
        p.linear[j] = gen.b;
    }
    for (i, load) in inst.loads.iter().enumerate() {
        let last = load.last_start(horizon) - 1;
        for t in 0..horizon {
            p.linear[y[i][t]] = -load.dis_start[t];
            p.linear[z[i][t]] = -load.dis_end[t];
            constant += load.dis_start[t] + load.dis_end[t];
            if t <= last {
                if let Some(j) = x[i][t] {
                    p.linear[j] = -load.ubar;
                }
                constant -= load.ubar * fixed_x[i][t];
            }
        }
    }

    let fixed_demand = inst.demand(&fixed_x);
    let balance_rows: Vec<usize> = (0..horizon)
        .map(|t| {
            let mut entries = vec![(q[t], -1.0)];
            for (i, load) in inst.loads.iter().enumerate() {
                for r in (t + 1).saturating_sub(load.tau)..=t {
                    if let Some(j) = x[i][r] {
                        entries.push((j, load.level));
                    }
                }
            }
            p.add_row(entries, gen.renewable[t] - fixed_demand[t])
        })
        .collect();

    let mut start_rows = Vec::with_capacity(m);
    let mut end_rows = Vec::with_capacity(m);
    for (i, load) in inst.loads.iter().enumerate() {
        let tau = load.tau;
        let tau_f = tau as f64;
        let fixed_s = window::start_side(&fixed_x[i], tau);
        let fixed_e = window::end_side(&fixed_x[i], tau);
        let rows_s = (0..horizon)
            .map(|t| {
                let entries = (0..=t)
                    .filter_map(|r| x[i][r].map(|j| (j, window::start_coef(t, r, tau))))
                    .chain([(y[i][t], tau_f)]);
                p.add_row(entries, tau_f - fixed_s[t])
            })
            .collect();
        let rows_e = (0..horizon)
            .map(|t| {
                let first = (t + 1).saturating_sub(tau);
                let entries = (first..horizon)
                    .filter_map(|r| {
                        x[i][r].map(|j| (j, window::end_coef(t, r, tau, horizon)))
                    })
                    .chain([(z[i][t], tau_f)]);
                p.add_row(entries, tau_f - fixed_e[t])
            })
            .collect();
        start_rows.push(rows_s);
        end_rows.push(rows_e);
    }

    Ok((
        p,
        IndexMap {
            vars,
            q,
            x,
            y,
            z,
            balance_rows,
            start_rows,
            end_rows,
            constant,
            fixed_x,
        },
    ))
}

/// SPP-R objective at an arbitrary point (constants included).
pub fn objective(inst: &Instance, x: &Matrix, y: &Matrix, z: &Matrix, q: &[f64]) -> f64 {
    let horizon = inst.horizon();
    let gen = &inst.generator;
    let mut obj: f64 = q.iter().map(|&v| gen.cost(v)).sum();
    for (i, load) in inst.loads.iter().enumerate() {
        let last = load.last_start(horizon);
        for t in 0..horizon {
            obj += load.dis_start[t] * (1.0 - y[i][t]) + load.dis_end[t] * (1.0 - z[i][t]);
            if t < last {
                obj -= load.ubar * x[i][t];
            }
        }
    }
    obj
}

const COMPLETION_SLACK: f64 = 1e-9;
const INNER_TOL: f64 = 1e-14;
const FINISH_ROUNDOFF: f64 = 1e-13;

/// Flexibility variables that make the start/end rows hold with equality.
pub fn complete_yz(inst: &Instance, x: &Matrix) -> Result<(Matrix, Matrix)> {
    complete(inst, x, COMPLETION_SLACK)
}

fn complete(inst: &Instance, x: &Matrix, slack: f64) -> Result<(Matrix, Matrix)> {
    let horizon = inst.horizon();
    if x.len() != inst.num_loads() || x.iter().any(|row| row.len() != horizon) {
        return Err(Error::dimension(format!(
            "start matrix must be {}x{horizon}",
            inst.num_loads()
        )));
    }
    let mut ys = Vec::with_capacity(x.len());
    let mut zs = Vec::with_capacity(x.len());
    for (i, (load, row)) in inst.loads.iter().zip(x).enumerate() {
        let tau = load.tau as f64;
        let fit = |v: f64, t: usize, side: &str| -> Result<f64> {
            if !(-slack..=1.0 + slack).contains(&v) {
                return Err(Error::InfeasibleSchedule(format!(
                    "load {} slot {}: {side} slack {v:.3e} outside [0, 1]",
                    inst.loads[i].id,
                    t + 1
                )));
            }
            Ok(v.clamp(0.0, 1.0))
        };
        let y = window::start_side(row, load.tau)
            .into_iter()
            .enumerate()
            .map(|(t, s)| fit(1.0 - s / tau, t, "start"))
            .collect::<Result<Vec<_>>>()?;
        let z = window::end_side(row, load.tau)
            .into_iter()
            .enumerate()
            .map(|(t, s)| fit(1.0 - s / tau, t, "end"))
            .collect::<Result<Vec<_>>>()?;
        ys.push(y);
        zs.push(z);
    }
    Ok((ys, zs))
}

/// Solver diagnostics for one SPP-R solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveStats {
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Solution of a (possibly restricted) relaxation.
#[derive(Debug, Clone)]
pub struct RelaxedOutcome {
    pub solution: RelaxedSolution,
    pub duals: DualCertificate,
    pub stats: SolveStats,
}

pub fn solve_sppr(inst: &Instance, tol: f64) -> Result<(RelaxedSolution, DualCertificate)> {
    let out = solve_sppr_report(inst, tol)?;
    Ok((out.solution, out.duals))
}

pub fn solve_sppr_report(inst: &Instance, tol: f64) -> Result<RelaxedOutcome> {
    solve_restricted(inst, None, tol)
}

/// Start weights once the flexibility slacks are substituted out: the
/// disutility a start at `r` causes, minus the utility it earns.
fn start_weights(inst: &Instance, i: usize) -> Vec<f64> {
    let load = &inst.loads[i];
    let horizon = inst.horizon();
    let tau = load.tau as f64;
    let last = load.last_start(horizon);
    (0..horizon)
        .map(|r| {
            let early: f64 = (r..horizon)
                .map(|t| load.dis_start[t] * window::start_coef(t, r, load.tau))
                .sum();
            let late: f64 = (0..horizon)
                .map(|t| load.dis_end[t] * window::end_coef(t, r, load.tau, horizon))
                .sum();
            (early + late) / tau - if r < last { load.ubar } else { 0.0 }
        })
        .collect()
}

/// Equivalent problem over `(q, x)` only.
///
/// Each flexibility slack appears in a single row and is rewarded, so at an
/// optimum it sits at its upper value `1 − row(x)/τ`. Substituting that
/// leaves start weights in the objective, and the only start-side row that
/// can bind is the last one, a knapsack `Σ_r x_r · served(r)/τ ≤ 1`.
/// The end-side rows never bind.
struct Reduced {
    p: QpProblem,
    x: Vec<Vec<Option<usize>>>,
    balance_rows: Vec<Option<usize>>,
    knapsack_rows: Vec<Option<usize>>,
    fixed_x: Matrix,
}

fn assemble_reduced(inst: &Instance, restrictions: Option<&[Restriction]>) -> Result<Reduced> {
    let (_, full) = assemble_restricted(inst, restrictions)?;
    let horizon = inst.horizon();
    let mut x = vec![vec![None; horizon]; inst.num_loads()];
    let mut n = horizon;
    // Late starts earn nothing and only add demand and disutility, so some
    // optimum never uses them; leaving them out removes a degenerate face.
    for ((row, full_row), load) in x.iter_mut().zip(&full.x).zip(&inst.loads) {
        let last = load.last_start(horizon);
        for (r, (slot, present)) in row.iter_mut().zip(full_row).enumerate() {
            if present.is_some() && r < last {
                *slot = Some(n);
                n += 1;
            }
        }
    }
    let q: Vec<usize> = (0..horizon).collect();
    let mut p = QpProblem::new(n);
    let gen = &inst.generator;
    for &j in &q {
        p.quad[j] = 2.0 * gen.a;
        p.linear[j] = gen.b;
    }
    for (i, row) in x.iter().enumerate() {
        let w = start_weights(inst, i);
        for (r, j) in row.iter().enumerate() {
            if let Some(j) = j {
                p.linear[*j] = w[r];
            }
        }
    }
    let fixed_demand = inst.demand(&full.fixed_x);
    let balance_rows = (0..horizon)
        .map(|t| {
            let mut entries = vec![(q[t], -1.0)];
            for (i, load) in inst.loads.iter().enumerate() {
                for r in (t + 1).saturating_sub(load.tau)..=t {
                    if let Some(j) = x[i][r] {
                        entries.push((j, load.level));
                    }
                }
            }
            // A row holding only `−q ≤ c` with `c ≥ 0` repeats `q ≥ 0`; the
            // duplicate makes the central path degenerate.
            let rhs = gen.renewable[t] - fixed_demand[t];
            (entries.len() > 1 || rhs < 0.0).then(|| p.add_row(entries, rhs))
        })
        .collect();
    let knapsack_rows = inst
        .loads
        .iter()
        .zip(&x)
        .map(|(load, row)| {
            let entries: Vec<(usize, f64)> = row
                .iter()
                .enumerate()
                .filter_map(|(r, j)| {
                    j.map(|j| {
                        let served = window::served_slots(r, load.tau, horizon);
                        (j, served as f64 / load.tau as f64)
                    })
                })
                .collect();
            (!entries.is_empty()).then(|| p.add_row(entries, 1.0))
        })
        .collect();
    Ok(Reduced {
        p,
        x,
        balance_rows,
        knapsack_rows,
        fixed_x: full.fixed_x,
    })
}

/// Solves SPP-R under start restrictions; fails unless the solver reaches
/// `tol`.
///
/// The solve runs on the reduced problem; the flexibility multipliers of the
/// full problem are then recovered in closed form: `ν^E = u^dE/τ`,
/// `ν^S = u^dS/τ` except in the last slot, which also carries the knapsack
/// multiplier. Together with the completed slacks this satisfies every
/// condition checked by [`check_sppr_kkt`].
pub fn solve_restricted(
    inst: &Instance,
    restrictions: Option<&[Restriction]>,
    tol: f64,
) -> Result<RelaxedOutcome> {
    let red = assemble_reduced(inst, restrictions)?;
    // Where strict complementarity fails (q and λ both zero) the iterates
    // approach the optimum only as the square root of the residual, so the
    // solve aims well past `tol` and accepts anything that reaches it.
    let sol = solve_qp(&red.p, INNER_TOL.min(tol), DEFAULT_MAX_ITER)?;
    if sol.status == QpStatus::Infeasible || !(sol.kkt_residual <= tol) {
        return Err(Error::Solver {
            status: sol.status,
            residual: sol.kkt_residual,
        });
    }
    // the solver's last iterate still carries `x_j z_j ≈ μ`, which leaves
    // reduced costs of order `μ / x_j` on starts that are in use. Finishing
    // must not loosen the rows, since completion downstream is exact.
    let refined = finish_on_partition(&red.p, &sol)?;
    let loosened = kkt_residuals(&red.p, &refined)?.primal_feasibility
        > kkt_residuals(&red.p, &sol)?.primal_feasibility.max(FINISH_ROUNDOFF);
    let sol = if refined.kkt_residual <= tol && !loosened { refined } else { sol };
    let v = &sol.primal;
    let w = &sol.ineq_duals;
    let mut x = red.fixed_x.clone();
    for (row, idx) in x.iter_mut().zip(&red.x) {
        for (xv, j) in row.iter_mut().zip(idx) {
            if let Some(j) = j {
                *xv = v[*j].max(0.0);
            }
        }
    }
    // the solver meets the rows to within its tolerance, so completion is
    // allowed the same scaled slack
    let slack = tol * (1.0 + crate::qp::inf_norm(&red.p.u)) + COMPLETION_SLACK;
    let (y, z) = complete(inst, &x, slack)?;
    // for fixed x the cheapest feasible output is exact; an interior method
    // only approaches it at the square root of its tolerance when the
    // balance row and the bound on q meet
    let q: Vec<f64> = inst
        .residual_demand(&x)
        .into_iter()
        .map(|d| d.max(0.0))
        .collect();
    let objective = objective(inst, &x, &y, &z, &q);

    let horizon = inst.horizon();
    let mut nu_s = Vec::with_capacity(inst.num_loads());
    let mut nu_e = Vec::with_capacity(inst.num_loads());
    for (load, row) in inst.loads.iter().zip(&red.knapsack_rows) {
        let tau = load.tau as f64;
        let mut s: Vec<f64> = load.dis_start.iter().map(|u| u / tau).collect();
        if let Some(r) = row {
            // the knapsack is the last start-side row divided by τ
            s[horizon - 1] += w[*r] / tau;
        }
        nu_s.push(s);
        nu_e.push(load.dis_end.iter().map(|u| u / tau).collect());
    }
    // keep λ under the marginal cost of the polished q
    let gen = &inst.generator;
    let lambda = red
        .balance_rows
        .iter()
        .zip(&q)
        .map(|(r, &qt)| r.map_or(0.0, |r| w[r]).clamp(0.0, gen.marginal_cost(qt)))
        .collect();
    let duals = DualCertificate {
        lambda,
        nu_s,
        nu_e,
    };
    Ok(RelaxedOutcome {
        solution: RelaxedSolution { x, y, z, q, objective },
        duals,
        stats: SolveStats {
            status: QpStatus::Optimal,
            kkt_residual: sol.kkt_residual,
            iterations: sol.iterations,
        },
    })
}
