//! Convex QP with a diagonal Hessian:
//!
//! ```text
//! minimize   ½ Σ_j h_j v_j² + c'v
//! subject to A v ≤ u,   v_j ≥ 0 for j in the nonneg mask
//! ```
//!
//! solved by a primal-dual interior-point method (Mehrotra predictor-corrector).

mod dense;
mod ipm;
mod sparse;

use serde::Serialize;

pub use dense::Cholesky;
pub use sparse::SparseMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct QpProblem {
    pub quad: Vec<f64>,
    pub linear: Vec<f64>,
    pub a: SparseMatrix,
    pub u: Vec<f64>,
    pub nonneg: Vec<bool>,
    /// Rows eliminated last, through their Schur complement. Empty means all
    /// rows (plain normal equations), which is the robust default. Listing a
    /// subset makes the solver group variables into dense blocks through the
    /// remaining rows; this changes speed and conditioning, not the answer.
    pub coupling_rows: Vec<usize>,
}

impl QpProblem {
    /// Empty problem over `n` variables (all nonneg, zero objective).
    pub fn new(n: usize) -> Self {
        QpProblem {
            quad: vec![0.0; n],
            linear: vec![0.0; n],
            a: SparseMatrix::new(n),
            u: Vec::new(),
            nonneg: vec![true; n],
            coupling_rows: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.linear.len()
    }

    pub fn m(&self) -> usize {
        self.u.len()
    }

    pub fn add_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> usize {
        self.u.push(rhs);
        self.a.push_row(entries)
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(&self.quad)
            .zip(&self.linear)
            .map(|((x, h), c)| 0.5 * h * x * x + c * x)
            .sum()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.n();
        if self.quad.len() != n || self.nonneg.len() != n || self.a.ncols() != n {
            return Err(Error::dimension(format!(
                "qp with {n} variables has quad {}, mask {}, matrix {} columns",
                self.quad.len(),
                self.nonneg.len(),
                self.a.ncols()
            )));
        }
        if self.a.nrows() != self.u.len() {
            return Err(Error::dimension(format!(
                "{} constraint rows but {} right-hand sides",
                self.a.nrows(),
                self.u.len()
            )));
        }
        if self.quad.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(Error::validation("quadratic coefficients must be finite and >= 0"));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.linear) || !finite(&self.u) || !finite(self.a.values()) {
            return Err(Error::validation("qp data contains NaN or infinity"));
        }
        if let Some(r) = self.coupling_rows.iter().find(|&&r| r >= self.m()) {
            return Err(Error::dimension(format!("coupling row {r} out of range")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub primal: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    /// Multipliers of `v ≥ 0`; zero for free variables.
    pub bound_duals: Vec<f64>,
    pub status: QpStatus,
    /// Scaled KKT residual, see [`KktReport::scaled`].
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct KktReport {
    /// `‖H v + c + A'w − z‖∞`
    pub stationarity: f64,
    /// Largest violation of `A v ≤ u` or `v_M ≥ 0`.
    pub primal_feasibility: f64,
    /// Largest negative part of `w` or `z`, or nonzero `z` on a free variable.
    pub dual_feasibility: f64,
    /// Largest `|w_i (Av − u)_i|` or `|v_j z_j|`.
    pub complementarity: f64,
    /// Max of the four blocks after scaling by problem magnitude; this is what
    /// the solver compares against its tolerance.
    pub scaled: f64,
}

impl KktReport {
    pub fn max_block(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
            .max(self.complementarity)
    }
}

/// Evaluates every KKT block of `(v, w, z)` for `p`. Pure.
pub fn kkt_residuals(p: &QpProblem, s: &QpSolution) -> Result<KktReport> {
    p.check()?;
    if s.primal.len() != p.n() || s.bound_duals.len() != p.n() || s.ineq_duals.len() != p.m() {
        return Err(Error::dimension(format!(
            "solution has {} primal, {} bound and {} row duals for a {}x{} problem",
            s.primal.len(),
            s.bound_duals.len(),
            s.ineq_duals.len(),
            p.m(),
            p.n()
        )));
    }
    Ok(evaluate(p, &s.primal, &s.ineq_duals, &s.bound_duals))
}

/// Proximal weight added to the Hessian in [`finish_on_partition`].
const FINISH_PROX: f64 = 1e-8;
const FINISH_STEPS: usize = 8;

/// Completes an interior-point solution on its optimal partition.
///
/// An interior method stops with `v_j z_j ≈ μ`, so every variable and row
/// keeps an error of order `μ` divided by its partner. Here a variable
/// counts as basic when `v_j > z_j` and a row as active when its multiplier
/// exceeds its slack. Nonbasic variables are set to zero and inactive
/// multipliers dropped. A few proximal Newton steps then solve stationarity
/// on the basic variables with the active rows as equalities. Nothing is
/// clamped: the residual of the result is measured afresh and callers decide
/// whether to keep it.
pub fn finish_on_partition(p: &QpProblem, s: &QpSolution) -> Result<QpSolution> {
    kkt_residuals(p, s)?;
    let av = p.a.mul(&s.primal);
    let active: Vec<usize> = (0..p.m())
        .filter(|&i| s.ineq_duals[i] > p.u[i] - av[i])
        .collect();
    let basic: Vec<bool> = (0..p.n())
        .map(|j| !p.nonneg[j] || s.primal[j] > s.bound_duals[j])
        .collect();
    let mut v: Vec<f64> = (0..p.n())
        .map(|j| if basic[j] { s.primal[j] } else { 0.0 })
        .collect();
    let mut w = vec![0.0; p.m()];
    for &i in &active {
        w[i] = s.ineq_duals[i];
    }
    let k = active.len();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p.n()];
    for (a, &i) in active.iter().enumerate() {
        for (j, coef) in p.a.row(i) {
            if basic[j] {
                cols[j].push((a, coef));
            }
        }
    }
    let d: Vec<f64> = p.quad.iter().map(|h| 1.0 / (h + FINISH_PROX)).collect();
    let mut normal = vec![0.0; k * k];
    for (j, col) in cols.iter().enumerate() {
        for &(a, ca) in col {
            for &(b, cb) in col {
                if b <= a {
                    normal[a * k + b] += ca * d[j] * cb;
                }
            }
        }
    }
    let chol = Cholesky::factor(normal, k);
    let stationarity = |v: &[f64], w: &[f64]| -> Vec<f64> {
        let atw = p.a.mul_t(w);
        (0..p.n())
            .map(|j| p.quad[j] * v[j] + p.linear[j] + atw[j])
            .collect()
    };
    for _ in 0..FINISH_STEPS {
        let r = stationarity(&v, &w);
        let av = p.a.mul(&v);
        // N δw = −s − A D r, then δv = −D (r + A'δw)
        let mut dw: Vec<f64> = active.iter().map(|&i| -(p.u[i] - av[i])).collect();
        for (j, col) in cols.iter().enumerate() {
            for &(a, ca) in col {
                dw[a] -= ca * d[j] * r[j];
            }
        }
        chol.solve(&mut dw);
        for (j, col) in cols.iter().enumerate() {
            if basic[j] {
                let atdw: f64 = col.iter().map(|&(a, ca)| ca * dw[a]).sum();
                v[j] -= d[j] * (r[j] + atdw);
            }
        }
        for (a, &i) in active.iter().enumerate() {
            w[i] += dw[a];
        }
    }
    let r = stationarity(&v, &w);
    let z: Vec<f64> = (0..p.n())
        .map(|j| if p.nonneg[j] { r[j] } else { 0.0 })
        .collect();
    let rep = evaluate(p, &v, &w, &z);
    Ok(QpSolution {
        primal: v,
        ineq_duals: w,
        bound_duals: z,
        status: s.status,
        kkt_residual: rep.scaled,
        iterations: s.iterations,
    })
}

pub(crate) fn evaluate(p: &QpProblem, v: &[f64], w: &[f64], z: &[f64]) -> KktReport {
    let av = p.a.mul(v);
    let atw = p.a.mul_t(w);
    let c_scale = 1.0 + inf_norm(&p.linear);
    let u_scale = 1.0 + inf_norm(&p.u);

    let mut rep = KktReport::default();
    let mut scaled = 0.0f64;
    for j in 0..p.n() {
        let r = p.quad[j] * v[j] + p.linear[j] + atw[j] - z[j];
        rep.stationarity = rep.stationarity.max(r.abs());
        if p.nonneg[j] {
            rep.primal_feasibility = rep.primal_feasibility.max(-v[j]);
            rep.dual_feasibility = rep.dual_feasibility.max(-z[j]);
            let cs = (v[j] * z[j]).abs();
            rep.complementarity = rep.complementarity.max(cs);
            scaled = scaled.max(cs);
        } else {
            rep.dual_feasibility = rep.dual_feasibility.max(z[j].abs());
        }
    }
    scaled = scaled.max(rep.stationarity / c_scale);
    for i in 0..p.m() {
        let slack = av[i] - p.u[i];
        rep.primal_feasibility = rep.primal_feasibility.max(slack);
        rep.dual_feasibility = rep.dual_feasibility.max(-w[i]);
        let cs = (w[i] * slack).abs();
        rep.complementarity = rep.complementarity.max(cs);
        scaled = scaled.max(cs / (1.0 + p.u[i].abs()));
    }
    scaled = scaled
        .max(rep.primal_feasibility.max(0.0) / u_scale)
        .max(rep.dual_feasibility.max(0.0));
    rep.primal_feasibility = rep.primal_feasibility.max(0.0);
    rep.dual_feasibility = rep.dual_feasibility.max(0.0);
    rep.scaled = scaled;
    if !v.iter().chain(w).chain(z).all(|x| x.is_finite()) {
        rep.scaled = f64::NAN;
    }
    rep
}

/// Max-norm that propagates NaN, so a broken iterate never looks converged.
pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if m.is_nan() || x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Solves `p` to the scaled KKT tolerance `tol`. Deterministic and
/// single-threaded.
pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    p.check()?;
    if !(tol.is_finite() && tol > 0.0) || max_iter == 0 {
        return Err(Error::validation("tolerance must be > 0 and max_iter >= 1"));
    }
    Ok(ipm::solve(p, tol, max_iter))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unconstrained_scalar() {
        let mut p = QpProblem::new(1);
        p.quad[0] = 1.0;
        p.linear[0] = -1.0;
        let s = solve_qp(&p, 1e-10, 100).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.primal[0] - 1.0).abs() < 1e-8);
        assert!(s.kkt_residual <= 1e-10);
    }

    #[test]
    fn covering_lp_dual() {
        // min v1 + v2 s.t. -v1 - v2 <= -1
        let mut p = QpProblem::new(2);
        p.linear = vec![1.0, 1.0];
        p.add_row([(0, -1.0), (1, -1.0)], -1.0);
        let s = solve_qp(&p, 1e-10, 100).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((p.objective(&s.primal) - 1.0).abs() < 1e-8);
        assert!((s.ineq_duals[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn detects_infeasibility() {
        let mut p = QpProblem::new(1);
        p.add_row([(0, 1.0)], -1.0);
        let s = solve_qp(&p, 1e-8, 200).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn infeasible_with_coupling_hint() {
        // v1 + v2 <= -1 handled as a coupling row
        let mut p = QpProblem::new(2);
        p.quad = vec![1.0, 0.0];
        p.add_row([(0, 1.0), (1, 1.0)], -1.0);
        p.coupling_rows = vec![0];
        let s = solve_qp(&p, 1e-8, 200).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn free_variable_with_bounds_from_rows() {
        // min ½(v-3)² with v free, v <= 2, -v <= 5
        let mut p = QpProblem::new(1);
        p.quad[0] = 1.0;
        p.linear[0] = -3.0;
        p.nonneg[0] = false;
        p.add_row([(0, 1.0)], 2.0);
        p.add_row([(0, -1.0)], 5.0);
        let s = solve_qp(&p, 1e-10, 100).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.primal[0] - 2.0).abs() < 1e-8);
        assert!((s.ineq_duals[0] - 1.0).abs() < 1e-7);
        assert_eq!(s.bound_duals[0], 0.0);
    }

    #[test]
    fn finishing_sharpens_a_loose_solve() {
        // min ½q² − 2x s.t. x − q ≤ 0, x ≤ 1: x = q = 1 with both rows active
        let mut p = QpProblem::new(2);
        p.quad[0] = 1.0;
        p.linear[1] = -2.0;
        p.add_row([(1, 1.0), (0, -1.0)], 0.0);
        p.add_row([(1, 1.0)], 1.0);
        let loose = solve_qp(&p, 1e-5, 100).unwrap();
        let done = finish_on_partition(&p, &loose).unwrap();
        assert!(done.kkt_residual < 1e-13, "{}", done.kkt_residual);
        assert!((done.primal[0] - 1.0).abs() < 1e-13);
        assert!((done.primal[1] - 1.0).abs() < 1e-13);
        assert!((done.ineq_duals[0] - 1.0).abs() < 1e-12);
        assert!((done.ineq_duals[1] - 1.0).abs() < 1e-12);
    }

    fn one_d() -> QpProblem {
        let mut p = QpProblem::new(1);
        p.quad[0] = 1.0;
        p.linear[0] = -1.0;
        p
    }

    #[test]
    fn residuals_of_known_pair() {
        let p = one_d();
        let sol = QpSolution {
            primal: vec![1.0],
            ineq_duals: vec![],
            bound_duals: vec![0.0],
            status: QpStatus::Optimal,
            kkt_residual: 0.0,
            iterations: 0,
        };
        let rep = kkt_residuals(&p, &sol).unwrap();
        assert!(rep.max_block() <= 1e-8);

        let mut bumped = sol.clone();
        bumped.primal[0] += 0.1;
        let rep = kkt_residuals(&p, &bumped).unwrap();
        assert!(rep.stationarity.max(rep.primal_feasibility) > 1e-2);
    }

    #[test]
    fn residuals_of_zero_problem() {
        let mut p = QpProblem::new(2);
        p.add_row([(0, 0.0)], 0.0);
        let sol = QpSolution {
            primal: vec![0.0; 2],
            ineq_duals: vec![0.0],
            bound_duals: vec![0.0; 2],
            status: QpStatus::Optimal,
            kkt_residual: 0.0,
            iterations: 0,
        };
        let rep = kkt_residuals(&p, &sol).unwrap();
        assert_eq!(rep.max_block(), 0.0);
        assert_eq!(rep.scaled, 0.0);
    }

    #[test]
    fn residuals_reject_bad_dimensions() {
        let p = one_d();
        let sol = QpSolution {
            primal: vec![1.0, 2.0],
            ineq_duals: vec![],
            bound_duals: vec![0.0],
            status: QpStatus::Optimal,
            kkt_residual: 0.0,
            iterations: 0,
        };
        assert!(matches!(kkt_residuals(&p, &sol), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_nonconvex_and_nan() {
        let mut p = one_d();
        p.quad[0] = -1.0;
        assert!(solve_qp(&p, 1e-8, 10).is_err());
        let mut p = one_d();
        p.linear[0] = f64::NAN;
        assert!(solve_qp(&p, 1e-8, 10).is_err());
    }

    /// Random strictly convex QP over a box-like polytope that contains the
    /// origin, so the origin and its scalings are feasible.
    fn random_qp() -> impl Strategy<Value = (QpProblem, Vec<Vec<f64>>)> {
        (1usize..7, 0usize..6).prop_flat_map(|(n, m)| {
            (
                prop::collection::vec(0.1f64..4.0, n),
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(prop::collection::vec(-1.0f64..2.0, n), m),
                prop::collection::vec(0.1f64..3.0, m),
                prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), 8),
                any::<bool>(),
            )
                .prop_map(move |(h, c, rows, u, samples, hint)| {
                    let mut p = QpProblem::new(n);
                    p.quad = h;
                    p.linear = c;
                    for (row, rhs) in rows.iter().zip(&u) {
                        p.add_row(row.iter().copied().enumerate(), *rhs);
                    }
                    // keep the feasible set bounded: sum v <= 5
                    let cap = p.add_row((0..n).map(|j| (j, 1.0)), 5.0);
                    if hint {
                        p.coupling_rows = vec![cap];
                    }
                    (p, samples)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn optimal_solutions_are_certified((p, samples) in random_qp()) {
            let tol = 1e-9;
            let s = solve_qp(&p, tol, 200).unwrap();
            prop_assert_eq!(s.status, QpStatus::Optimal);
            let rep = kkt_residuals(&p, &s).unwrap();
            prop_assert!(rep.scaled <= tol);
            prop_assert!(s.ineq_duals.iter().chain(&s.bound_duals).all(|d| *d >= -1e-12));

            // complementary slackness row by row
            let av = p.a.mul(&s.primal);
            for i in 0..p.m() {
                prop_assert!((s.ineq_duals[i] * (av[i] - p.u[i])).abs() <= tol * (1.0 + p.u[i].abs()));
            }

            // no sampled feasible point does better
            let obj = p.objective(&s.primal);
            for raw in &samples {
                // shrink the sample until feasible; the origin always is
                let mut scale = 1.0;
                let feasible = loop {
                    let v: Vec<f64> = raw.iter().map(|x| x * scale).collect();
                    let av = p.a.mul(&v);
                    if av.iter().zip(&p.u).all(|(a, u)| a <= u) {
                        break v;
                    }
                    scale *= 0.5;
                };
                prop_assert!(obj <= p.objective(&feasible) + 1e-7);
            }

            // weak duality through the analytic dual function
            let atw = p.a.mul_t(&s.ineq_duals);
            let dual: f64 = (0..p.n())
                .map(|j| {
                    let g = p.linear[j] + atw[j] - s.bound_duals[j];
                    -0.5 * g * g / p.quad[j]
                })
                .sum::<f64>()
                - p.u.iter().zip(&s.ineq_duals).map(|(u, w)| u * w).sum::<f64>();
            prop_assert!(dual >= obj - 1e-7 * (1.0 + obj.abs()));
            prop_assert!(dual <= obj + 1e-7 * (1.0 + obj.abs()));
        }

        #[test]
        fn finishing_keeps_the_optimum((p, _) in random_qp()) {
            let s = solve_qp(&p, 1e-9, 200).unwrap();
            prop_assume!(s.status == QpStatus::Optimal);
            let done = finish_on_partition(&p, &s).unwrap();
            if done.kkt_residual <= 1e-9 {
                let (a, b) = (p.objective(&s.primal), p.objective(&done.primal));
                prop_assert!((a - b).abs() <= 1e-7 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn deterministic((p, _) in random_qp()) {
            let a = solve_qp(&p, 1e-9, 200).unwrap();
            let b = solve_qp(&p, 1e-9, 200).unwrap();
            prop_assert_eq!(a.primal, b.primal);
            prop_assert_eq!(a.ineq_duals, b.ineq_duals);
        }

        #[test]
        fn hint_does_not_change_answer((p, _) in random_qp()) {
            let mut plain = p.clone();
            plain.coupling_rows.clear();
            let mut cap_only = p.clone();
            cap_only.coupling_rows = vec![p.m() - 1];
            let a = solve_qp(&plain, 1e-10, 200).unwrap();
            let b = solve_qp(&cap_only, 1e-10, 200).unwrap();
            for (x, y) in a.primal.iter().zip(&b.primal) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
