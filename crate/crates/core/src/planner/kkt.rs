use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Instance;
use crate::window;

use super::{price_plambda, price_pnu, DualCertificate, RelaxedSolution};

/// Largest violation of each family of SPP-R optimality conditions.
/// Complementarity families are reported as absolute products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct KktCheck {
    /// Balance, flexibility rows, bounds on x, y, z, q.
    pub primal_feasibility: f64,
    /// `c'(q_t) − λ_t ≥ 0`.
    pub generator_dual: f64,
    /// `q_t (c'(q_t) − λ_t) = 0`.
    pub generator_slackness: f64,
    /// `p^λ + p^ν − Ū ≥ 0` on starts that complete.
    pub start_price_dual: f64,
    /// `x (p^λ + p^ν − Ū) = 0` on starts that complete.
    pub start_price_slackness: f64,
    /// `p^λ + p^ν ≥ 0` on late starts.
    pub late_start_dual: f64,
    /// `x (p^λ + p^ν) = 0` on late starts.
    pub late_start_slackness: f64,
    /// `τ ν^S − u^dS ≥ 0`.
    pub early_flex_dual: f64,
    /// `y (τ ν^S − u^dS) = 0`.
    pub early_flex_slackness: f64,
    /// `τ ν^E − u^dE ≥ 0`.
    pub late_flex_dual: f64,
    /// `z (τ ν^E − u^dE) = 0`.
    pub late_flex_slackness: f64,
    /// `ν · (row slack) = 0` on both flexibility rows.
    pub flex_row_slackness: f64,
    /// `λ_t (q_t + g_t − demand_t) = 0`.
    pub balance_slackness: f64,
    /// `λ, ν ≥ 0`.
    pub dual_nonneg: f64,
    pub tol: f64,
}

impl KktCheck {
    pub fn families(&self) -> [(&'static str, f64); 14] {
        [
            ("primal_feasibility", self.primal_feasibility),
            ("generator_dual", self.generator_dual),
            ("generator_slackness", self.generator_slackness),
            ("start_price_dual", self.start_price_dual),
            ("start_price_slackness", self.start_price_slackness),
            ("late_start_dual", self.late_start_dual),
            ("late_start_slackness", self.late_start_slackness),
            ("early_flex_dual", self.early_flex_dual),
            ("early_flex_slackness", self.early_flex_slackness),
            ("late_flex_dual", self.late_flex_dual),
            ("late_flex_slackness", self.late_flex_slackness),
            ("flex_row_slackness", self.flex_row_slackness),
            ("balance_slackness", self.balance_slackness),
            ("dual_nonneg", self.dual_nonneg),
        ]
    }

    pub fn max_violation(&self) -> f64 {
        self.families().iter().fold(0.0, |m, (_, v)| m.max(*v))
    }

    pub fn passes(&self) -> bool {
        self.max_violation() <= self.tol
    }

    pub fn worst(&self) -> (&'static str, f64) {
        self.families()
            .into_iter()
            .fold(("none", 0.0), |acc, f| if f.1 > acc.1 { f } else { acc })
    }
}

fn check_dims(inst: &Instance, sol: &RelaxedSolution, duals: &DualCertificate) -> Result<()> {
    let horizon = inst.horizon();
    let m = inst.num_loads();
    let mat_ok = |mat: &Vec<Vec<f64>>| mat.len() == m && mat.iter().all(|r| r.len() == horizon);
    if !(mat_ok(&sol.x) && mat_ok(&sol.y) && mat_ok(&sol.z) && sol.q.len() == horizon) {
        return Err(Error::dimension(format!("solution must be {m}x{horizon}")));
    }
    if !(mat_ok(&duals.nu_s) && mat_ok(&duals.nu_e) && duals.lambda.len() == horizon) {
        return Err(Error::dimension(format!("duals must be {m}x{horizon}")));
    }
    Ok(())
}

/// Evaluates every SPP-R optimality condition at `(sol, duals)`.
pub fn check_sppr_kkt(
    inst: &Instance,
    sol: &RelaxedSolution,
    duals: &DualCertificate,
    tol: f64,
) -> Result<KktCheck> {
    check_dims(inst, sol, duals)?;
    let horizon = inst.horizon();
    let gen = &inst.generator;
    let mut k = KktCheck {
        tol,
        ..KktCheck::default()
    };
    let up = |slot: &mut f64, v: f64| *slot = slot.max(v);

    let demand = inst.demand(&sol.x);
    for t in 0..horizon {
        let q = sol.q[t];
        let lam = duals.lambda[t];
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
        let x = &sol.x[i];
        let (nu_s, nu_e) = (&duals.nu_s[i], &duals.nu_e[i]);
        let reduced: Vec<f64> = price_plambda(load, &duals.lambda)?
            .iter()
            .zip(price_pnu(load, nu_s, nu_e)?)
            .map(|(a, b)| a + b)
            .collect();
        let last = load.last_start(horizon);
        let start_side = window::start_side(x, load.tau);
        let end_side = window::end_side(x, load.tau);
        for t in 0..horizon {
            let (y, z) = (sol.y[i][t], sol.z[i][t]);
            for v in [x[t], y, z] {
                up(&mut k.primal_feasibility, -v);
            }
            let row_s = tau - start_side[t] - tau * y;
            let row_e = tau - end_side[t] - tau * z;
            up(&mut k.primal_feasibility, -row_s);
            up(&mut k.primal_feasibility, -row_e);
            up(&mut k.flex_row_slackness, (nu_s[t] * row_s).abs());
            up(&mut k.flex_row_slackness, (nu_e[t] * row_e).abs());
            up(&mut k.dual_nonneg, -nu_s[t]);
            up(&mut k.dual_nonneg, -nu_e[t]);

            if t < last {
                let g = reduced[t] - load.ubar;
                up(&mut k.start_price_dual, -g);
                up(&mut k.start_price_slackness, (x[t] * g).abs());
            } else {
                up(&mut k.late_start_dual, -reduced[t]);
                up(&mut k.late_start_slackness, (x[t] * reduced[t]).abs());
            }
            let gs = tau * nu_s[t] - load.dis_start[t];
            let ge = tau * nu_e[t] - load.dis_end[t];
            up(&mut k.early_flex_dual, -gs);
            up(&mut k.early_flex_slackness, (y * gs).abs());
            up(&mut k.late_flex_dual, -ge);
            up(&mut k.late_flex_slackness, (z * ge).abs());
        }
    }
    Ok(k)
}

/// SPP-R Lagrangian from its definition: objective plus multiplier-weighted
/// constraint violations.
pub fn lagrangian(inst: &Instance, sol: &RelaxedSolution, duals: &DualCertificate) -> Result<f64> {
    check_dims(inst, sol, duals)?;
    let horizon = inst.horizon();
    let mut l = super::objective(inst, &sol.x, &sol.y, &sol.z, &sol.q);
    let demand = inst.demand(&sol.x);
    for t in 0..horizon {
        l += duals.lambda[t] * (demand[t] - inst.generator.renewable[t] - sol.q[t]);
    }
    for (i, load) in inst.loads.iter().enumerate() {
        let tau = load.tau as f64;
        let s = window::start_side(&sol.x[i], load.tau);
        let e = window::end_side(&sol.x[i], load.tau);
        for t in 0..horizon {
            l += duals.nu_s[i][t] * (s[t] - tau * (1.0 - sol.y[i][t]));
            l += duals.nu_e[i][t] * (e[t] - tau * (1.0 - sol.z[i][t]));
        }
    }
    Ok(l)
}

/// The same Lagrangian regrouped by entity: generator terms, start terms
/// priced by `p^λ + p^ν`, and flexibility terms priced by `τ ν`.
pub fn lagrangian_rearranged(
    inst: &Instance,
    sol: &RelaxedSolution,
    duals: &DualCertificate,
) -> Result<f64> {
    check_dims(inst, sol, duals)?;
    let horizon = inst.horizon();
    let gen = &inst.generator;
    let mut l = 0.0;
    for t in 0..horizon {
        let lam = duals.lambda[t];
        l += gen.cost(sol.q[t]) - lam * sol.q[t] - lam * gen.renewable[t];
    }
    for (i, load) in inst.loads.iter().enumerate() {
        let tau = load.tau as f64;
        let pl = price_plambda(load, &duals.lambda)?;
        let pn = price_pnu(load, &duals.nu_s[i], &duals.nu_e[i])?;
        let last = load.last_start(horizon);
        for t in 0..horizon {
            let util = if t < last { load.ubar } else { 0.0 };
            l += sol.x[i][t] * (pl[t] + pn[t] - util);
            l += (load.dis_start[t] - tau * duals.nu_s[i][t]) * (1.0 - sol.y[i][t]);
            l += (load.dis_end[t] - tau * duals.nu_e[i][t]) * (1.0 - sol.z[i][t]);
        }
    }
    Ok(l)
}
