//! Replicated economies: scaling a relaxed optimum to `N` copies of every
//! type, randomized rounding of start probabilities, and the scheduling
//! mechanism with its payment audits.
//!
//! Random draws are reproducible. `sample_binary(x, n, seed)` draws the
//! replicas of type `i` from `ChaCha8Rng::seed_from_u64(seed)` on stream `i`,
//! one uniform per replica, so the outcome of a type does not depend on the
//! other types or on how the work is split. Repeated runs derived from one
//! master seed use `run_seed(master, k)`: the first word of stream `k` of the
//! master generator.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::equilibrium::{verify_equilibrium, Allocation, EquilibriumReport};
use crate::error::{Error, Result};
use crate::model::{Instance, LoadType};
use crate::planner::{
    check_sppr_kkt, derive_prices, price_plambda, price_pnu, solve_sppr, DualCertificate, KktCheck,
    Matrix, PriceSet, RelaxedSolution,
};
use crate::window;

/// Seeds averaged per point of the convergence study.
pub const LLN_SEEDS: usize = 20;

/// Row sums of a start distribution may exceed one by this much.
const ROW_SUM_SLACK: f64 = 1e-8;

/// Relaxed solution of the `N`-fold replicated economy in compressed form:
/// every replica of type `i` shares the rows `x[i]`, `y[i]`, `z[i]` and the
/// per-replica multipliers `nu_s[i]`, `nu_e[i]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicatedSolution {
    pub n: usize,
    pub x: Matrix,
    pub y: Matrix,
    pub z: Matrix,
    pub q: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nu_s: Matrix,
    pub nu_e: Matrix,
}

/// Builds the replicated optimum from a relaxed one: allocations and `λ`
/// are copied, the flexibility multipliers are divided by `n`.
pub fn scale_solution(
    inst: &Instance,
    sol: &RelaxedSolution,
    duals: &DualCertificate,
    n: usize,
    tol: f64,
) -> Result<ReplicatedSolution> {
    if n == 0 {
        return Err(Error::validation("replication factor must be at least 1"));
    }
    let check = check_sppr_kkt(inst, sol, duals, tol)?;
    if !check.passes() {
        let (family, v) = check.worst();
        return Err(Error::validation(format!(
            "input is not optimal: {family} violated by {v:.3e}"
        )));
    }
    let scale = |m: &Matrix| -> Matrix {
        m.iter()
            .map(|row| row.iter().map(|v| v / n as f64).collect())
            .collect()
    };
    Ok(ReplicatedSolution {
        n,
        x: sol.x.clone(),
        y: sol.y.clone(),
        z: sol.z.clone(),
        q: sol.q.clone(),
        lambda: duals.lambda.clone(),
        nu_s: scale(&duals.nu_s),
        nu_e: scale(&duals.nu_e),
    })
}

/// Optimality conditions of the replicated relaxation, where each replica
/// has level `l/N`, utility `Ū/N` and disutilities `u/N`. Families are the
/// same as for the unreplicated check; the start conditions use the
/// per-replica price `p^λ/N + p^ν`.
pub fn check_replicated_kkt(inst: &Instance, rep: &ReplicatedSolution, tol: f64) -> Result<KktCheck> {
    let horizon = inst.horizon();
    let m = inst.num_loads();
    let ok = |mat: &Matrix| mat.len() == m && mat.iter().all(|r| r.len() == horizon);
    if !(ok(&rep.x) && ok(&rep.y) && ok(&rep.z) && ok(&rep.nu_s) && ok(&rep.nu_e))
        || rep.q.len() != horizon
        || rep.lambda.len() != horizon
    {
        return Err(Error::dimension(format!("replicated solution must be {m}x{horizon}")));
    }
    if rep.n == 0 {
        return Err(Error::validation("replication factor must be at least 1"));
    }
    let n = rep.n as f64;
    let gen = &inst.generator;
    let mut k = KktCheck {
        tol,
        ..KktCheck::default()
    };
    let up = |slot: &mut f64, v: f64| *slot = slot.max(v);

    // aggregate demand summed replica by replica
    let mut demand = vec![0.0; horizon];
    for (load, row) in inst.loads.iter().zip(&rep.x) {
        let run = window::running(row, load.tau);
        for _ in 0..rep.n {
            for t in 0..horizon {
                demand[t] += load.level / n * run[t];
            }
        }
    }
    for t in 0..horizon {
        let (q, lam) = (rep.q[t], rep.lambda[t]);
        let gap = gen.marginal_cost(q) - lam;
        up(&mut k.generator_dual, -gap);
        up(&mut k.generator_slackness, (q * gap).abs());
        let slack = q + gen.renewable[t] - demand[t];
        up(&mut k.primal_feasibility, -slack);
        up(&mut k.primal_feasibility, -q);
        up(&mut k.balance_slackness, (lam * slack).abs());
        up(&mut k.dual_nonneg, -lam);
    }

    for (i, load) in inst.loads.iter().enumerate() {
        let tau = load.tau as f64;
        let x = &rep.x[i];
        let pl = price_plambda(load, &rep.lambda)?;
        let pn = price_pnu(load, &rep.nu_s[i], &rep.nu_e[i])?;
        let last = load.last_start(horizon);
        let start_side = window::start_side(x, load.tau);
        let end_side = window::end_side(x, load.tau);
        for t in 0..horizon {
            let (y, z) = (rep.y[i][t], rep.z[i][t]);
            let (nu_s, nu_e) = (rep.nu_s[i][t], rep.nu_e[i][t]);
            for v in [x[t], y, z] {
                up(&mut k.primal_feasibility, -v);
            }
            let row_s = tau - start_side[t] - tau * y;
            let row_e = tau - end_side[t] - tau * z;
            up(&mut k.primal_feasibility, row_s.abs());
            up(&mut k.primal_feasibility, row_e.abs());
            up(&mut k.flex_row_slackness, (nu_s * row_s).abs());
            up(&mut k.flex_row_slackness, (nu_e * row_e).abs());
            up(&mut k.dual_nonneg, -nu_s);
            up(&mut k.dual_nonneg, -nu_e);

            let price = pl[t] / n + pn[t];
            if t < last {
                let g = price - load.ubar / n;
                up(&mut k.start_price_dual, -g);
                up(&mut k.start_price_slackness, (x[t] * g).abs());
            } else {
                up(&mut k.late_start_dual, -price);
                up(&mut k.late_start_slackness, (x[t] * price).abs());
            }
            let gs = tau * nu_s - load.dis_start[t] / n;
            let ge = tau * nu_e - load.dis_end[t] / n;
            up(&mut k.early_flex_dual, -gs);
            up(&mut k.early_flex_slackness, (y * gs).abs());
            up(&mut k.late_flex_dual, -ge);
            up(&mut k.late_flex_slackness, (z * ge).abs());
        }
    }
    Ok(k)
}

/// Seed of the `k`-th repeated run derived from a master seed.
pub fn run_seed(master: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(k);
    rng.next_u64()
}

/// Draws one start (0-based slot) or `None` for each of `n` replicas of
/// every type; row `i` of the result holds the replicas of type `i`.
pub fn sample_binary(x_hat: &Matrix, n: usize, seed: u64) -> Result<Vec<Vec<Option<usize>>>> {
    for (i, row) in x_hat.iter().enumerate() {
        if let Some(v) = row.iter().find(|v| !(**v >= -ROW_SUM_SLACK)) {
            return Err(Error::validation(format!(
                "type {i}: start probability {v} is negative"
            )));
        }
        let total: f64 = row.iter().map(|v| v.max(0.0)).sum();
        if total > 1.0 + ROW_SUM_SLACK {
            return Err(Error::validation(format!(
                "type {i}: start probabilities sum to {total}"
            )));
        }
    }
    Ok(x_hat
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (0..n)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    row.iter().position(|p| {
                        acc += p.max(0.0);
                        u < acc
                    })
                })
                .collect()
        })
        .collect())
}

/// Share of replicas starting at each slot.
fn frequencies(samples: &[Vec<Option<usize>>], horizon: usize) -> Matrix {
    samples
        .iter()
        .map(|reps| {
            let mut row = vec![0.0; horizon];
            for t in reps.iter().flatten() {
                row[*t] += 1.0;
            }
            let n = reps.len().max(1) as f64;
            row.iter_mut().for_each(|v| *v /= n);
            row
        })
        .collect()
}

/// Objective contribution of one whole start at `r` (0-based): disutility of
/// its service window less the utility when it completes in time.
fn start_cost(load: &LoadType, r: usize, horizon: usize) -> f64 {
    let tau = load.tau;
    let util = if r < load.last_start(horizon) { load.ubar } else { 0.0 };
    let dis: f64 = (0..horizon)
        .map(|t| {
            load.dis_start[t] * window::start_coef(t, r, tau)
                + load.dis_end[t] * window::end_coef(t, r, tau, horizon)
        })
        .sum::<f64>()
        / tau as f64;
    dis - util
}

/// Planner objective of a population where type `i` starts at `t` with
/// share `share[i][t]`, with thermal output fixed at `q`.
fn population_objective(inst: &Instance, share: &Matrix, q: &[f64]) -> f64 {
    let horizon = inst.horizon();
    let gen: f64 = q.iter().map(|v| inst.generator.cost(*v)).sum();
    let loads: f64 = inst
        .loads
        .iter()
        .zip(share)
        .map(|(load, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, s)| **s != 0.0)
                .map(|(r, s)| s * start_cost(load, r, horizon))
                .sum::<f64>()
        })
        .sum();
    gen + loads
}

/// Expected objective of randomized rounding of `x_hat` with thermal output
/// `q`, summed start by start over the categorical distribution.
pub fn expected_objective(inst: &Instance, x_hat: &Matrix, q: &[f64]) -> f64 {
    population_objective(inst, x_hat, q)
}

/// Largest shortfall of supply `q + g` below realized demand.
fn balance_violation(inst: &Instance, share: &Matrix, q: &[f64]) -> f64 {
    inst.residual_demand(share)
        .iter()
        .zip(q)
        .fold(0.0f64, |m, (d, q)| m.max(d - q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LlnPoint {
    pub n: usize,
    /// Mean over seeds of the largest balance shortfall.
    pub mean_violation: f64,
    /// Mean over seeds of |realized objective − relaxed optimum|.
    pub mean_objective_gap: f64,
}

/// Measures how randomized rounding of a relaxed optimum approaches it as
/// the population grows. Each replica has level `l/N`; the thermal output
/// stays at the relaxed `q`.
pub fn lln_convergence(
    inst: &Instance,
    sol: &RelaxedSolution,
    ns: &[usize],
    seed: u64,
) -> Result<Vec<LlnPoint>> {
    let horizon = inst.horizon();
    let optimum = sol.objective;
    ns.iter()
        .map(|&n| {
            let mut violation = 0.0;
            let mut gap = 0.0;
            for k in 0..LLN_SEEDS {
                let samples = sample_binary(&sol.x, n, run_seed(seed, k as u64))?;
                let share = frequencies(&samples, horizon);
                violation += balance_violation(inst, &share, &sol.q);
                gap += (population_objective(inst, &share, &sol.q) - optimum).abs();
            }
            Ok(LlnPoint {
                n,
                mean_violation: violation / LLN_SEEDS as f64,
                mean_objective_gap: gap / LLN_SEEDS as f64,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`, skipping non-positive `y`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Money flows of the mechanism at the equilibrium allocation, summed over
/// types. Consumers pay for starts; the generator is paid for thermal and
/// renewable output and consumers are credited for unused flexibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PaymentLedger {
    pub consumption_payments: f64,
    pub flexibility_credits: f64,
    pub generator_revenue: f64,
}

impl PaymentLedger {
    pub fn total(&self) -> f64 {
        self.consumption_payments.abs() + self.flexibility_credits.abs() + self.generator_revenue.abs()
    }

    pub fn imbalance(&self) -> f64 {
        (self.generator_revenue + self.flexibility_credits - self.consumption_payments).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismTranscript {
    pub instance: Instance,
    pub n: usize,
    pub seed: u64,
    pub prices: PriceSet,
    pub allocation: Allocation,
    pub relaxed_objective: f64,
    pub equilibrium: EquilibriumReport,
    /// Start (0-based) of every replica, by type.
    pub sampled_starts: Vec<Vec<Option<usize>>>,
    pub realized_q: Vec<f64>,
    /// Planner objective of the sampled schedule with thermal output fixed.
    pub realized_objective: f64,
    /// Largest shortfall of supply below the sampled demand.
    pub realized_violation: f64,
    /// Net utility of every replica, by type, in whole-type units.
    pub net_utilities: Vec<Vec<f64>>,
    pub ledger: PaymentLedger,
}

/// Pass/fail outcome of an audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Audit {
    pub value: f64,
    pub threshold: f64,
    pub passes: bool,
}

fn ledger(inst: &Instance, prices: &PriceSet, alloc: &Allocation) -> PaymentLedger {
    let horizon = inst.horizon();
    let mut l = PaymentLedger {
        consumption_payments: 0.0,
        flexibility_credits: 0.0,
        generator_revenue: 0.0,
    };
    for t in 0..horizon {
        l.generator_revenue += prices.p_gen[t] * (alloc.q[t] + inst.generator.renewable[t]);
    }
    for i in 0..inst.num_loads() {
        for t in 0..horizon {
            l.consumption_payments += prices.p_con[i][t] * alloc.x[i][t];
            l.flexibility_credits += prices.p_s[i][t] * (1.0 - alloc.y[i][t])
                + prices.p_e[i][t] * (1.0 - alloc.z[i][t]);
        }
    }
    l
}

/// Realized net utility of one consumer of type `i` (in whole-type units):
/// zero when unscheduled, otherwise utility less the start payment and
/// realized disutility, plus the flexibility credits of its window.
pub fn net_utility(load: &LoadType, i: usize, prices: &PriceSet, start: Option<usize>) -> f64 {
    let Some(r) = start else {
        return 0.0;
    };
    let horizon = load.dis_start.len();
    let tau = load.tau;
    let util = if r < load.last_start(horizon) { load.ubar } else { 0.0 };
    let mut v = util - prices.p_con[i][r];
    for t in 0..horizon {
        let used_s = window::start_coef(t, r, tau) / tau as f64;
        let used_e = window::end_coef(t, r, tau, horizon) / tau as f64;
        v += (prices.p_s[i][t] - load.dis_start[t]) * used_s;
        v += (prices.p_e[i][t] - load.dis_end[t]) * used_e;
    }
    v
}

/// Runs the scheduling mechanism on `n` replicas of every type: solve the
/// relaxation, announce prices, confirm every entity's best response agrees
/// with the planner, then draw starts from the agreed probabilities.
pub fn run_flex_sched(inst: &Instance, n: usize, seed: u64, tol: f64) -> Result<MechanismTranscript> {
    inst.ensure_valid()?;
    if n == 0 {
        return Err(Error::validation("replication factor must be at least 1"));
    }
    let (sol, duals) = solve_sppr(inst, tol)?;
    let prices = derive_prices(inst, &duals)?;
    let allocation: Allocation = (&sol).into();
    let report = verify_equilibrium(inst, &allocation, &prices, (1e3 * tol).max(1e-6))?;
    if !report.is_equilibrium {
        return Err(Error::Mechanism(format!(
            "announced prices do not support the planner's schedule (largest gap {:.3e})",
            report.max_gap()
        )));
    }

    let horizon = inst.horizon();
    let sampled_starts = sample_binary(&sol.x, n, seed)?;
    let share = frequencies(&sampled_starts, horizon);
    let net_utilities = inst
        .loads
        .iter()
        .enumerate()
        .map(|(i, load)| {
            sampled_starts[i]
                .iter()
                .map(|s| net_utility(load, i, &prices, *s))
                .collect()
        })
        .collect();
    Ok(MechanismTranscript {
        instance: inst.clone(),
        n,
        seed,
        ledger: ledger(inst, &prices, &allocation),
        realized_objective: population_objective(inst, &share, &sol.q),
        realized_violation: balance_violation(inst, &share, &sol.q),
        realized_q: sol.q.clone(),
        relaxed_objective: sol.objective,
        equilibrium: report,
        prices,
        allocation,
        sampled_starts,
        net_utilities,
    })
}

/// Budget imbalance of the transcript's prices at its equilibrium
/// allocation, relative to `1 + total payments`.
pub fn audit_budget_balance(tr: &MechanismTranscript, tol: f64) -> Audit {
    let l = ledger(&tr.instance, &tr.prices, &tr.allocation);
    let threshold = tol * (1.0 + l.total());
    let value = l.imbalance();
    Audit {
        value,
        threshold,
        passes: value <= threshold,
    }
}

/// Smallest realized net utility over all replicas, recomputed from the
/// transcript's prices; zero when nobody is present.
pub fn audit_individual_rationality(tr: &MechanismTranscript, tol: f64) -> Audit {
    let value = tr
        .instance
        .loads
        .iter()
        .enumerate()
        .flat_map(|(i, load)| {
            tr.sampled_starts[i]
                .iter()
                .map(move |s| net_utility(load, i, &tr.prices, *s))
        })
        .fold(f64::INFINITY, f64::min);
    let value = if value.is_finite() { value } else { 0.0 };
    Audit {
        value,
        threshold: -tol,
        passes: value >= -tol,
    }
}

#[cfg(test)]
mod tests;
