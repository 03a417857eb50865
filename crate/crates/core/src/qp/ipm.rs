//! Mehrotra predictor-corrector on
//!
//! ```text
//! H v + c + A'w − z = 0,   A v + s = u,   S W e = μ e,   V Z e = μ e
//! ```
//!
//! Each Newton step reduces to the quasi-definite system
//! `[Q A'; A −Θ⁻¹] [dv; dw] = [r1; r2]` with `Q = H + Z/V` and `Θ = W/S`.
//! That system is solved by exploiting structure instead of a general sparse
//! factorization:
//!
//! * a variable that appears in a single row (and has `Q > 0`) is folded
//!   into that row's diagonal;
//! * the remaining variables are grouped into independent dense blocks via
//!   the non-coupling rows, each block eliminated with a dense Cholesky;
//! * the coupling rows are solved last through their Schur complement.

use super::dense::{dot, Cholesky};
use super::{evaluate, inf_norm, QpProblem, QpSolution, QpStatus};

const STEP_FRACTION: f64 = 0.995;
const DIVERGED: f64 = 1e15;
const REFINE_PASSES: usize = 3;
/// Iterations without a new best residual before giving up.
const STALL_LIMIT: usize = 10;
const NEIGHBOURHOOD: f64 = 1e-3;
const NEIGHBOURHOOD_TRIALS: usize = 40;

struct Block {
    vars: Vec<usize>,
    local_rows: Vec<usize>,
    /// Coupling rows touching the block: (position among coupling rows,
    /// entries as (position in block, coefficient), sorted).
    links: Vec<(usize, Vec<(usize, f64)>)>,
}

/// Symbolic analysis, fixed for the whole solve.
struct Layout {
    singleton: Vec<Option<(usize, f64)>>,
    row_singletons: Vec<Vec<(usize, f64)>>,
    coupling: Vec<usize>,
    is_coupling: Vec<bool>,
    /// For local rows: entries restricted to block variables, by position.
    local_entries: Vec<Vec<(usize, f64)>>,
    blocks: Vec<Block>,
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

impl Layout {
    fn new(p: &QpProblem) -> Self {
        let n = p.n();
        let m = p.m();
        let mut is_coupling = vec![false; m];
        let mut coupling = Vec::new();
        let all: Vec<usize>;
        let hint = if p.coupling_rows.is_empty() {
            all = (0..m).collect();
            &all
        } else {
            &p.coupling_rows
        };
        for &r in hint {
            if !is_coupling[r] {
                is_coupling[r] = true;
                coupling.push(r);
            }
        }
        coupling.sort_unstable();
        let mut coupling_pos = vec![usize::MAX; m];
        for (k, &r) in coupling.iter().enumerate() {
            coupling_pos[r] = k;
        }

        let counts = p.a.col_counts();
        let mut singleton = vec![None; n];
        let mut row_singletons = vec![Vec::new(); m];
        for r in 0..m {
            for (j, a) in p.a.row(r) {
                if counts[j] == 1 && (p.nonneg[j] || p.quad[j] > 0.0) {
                    singleton[j] = Some((r, a));
                    row_singletons[r].push((j, a));
                }
            }
        }

        // group the remaining variables through local rows
        let mut parent: Vec<usize> = (0..n).collect();
        for r in (0..m).filter(|&r| !is_coupling[r]) {
            let mut first = None;
            for (j, _) in p.a.row(r).filter(|(j, _)| singleton[*j].is_none()) {
                match first {
                    None => first = Some(j),
                    Some(f) => {
                        let (a, b) = (find(&mut parent, f), find(&mut parent, j));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
        }
        let mut block_of_root = vec![usize::MAX; n];
        let mut var_pos = vec![(usize::MAX, usize::MAX); n];
        let mut blocks: Vec<Block> = Vec::new();
        for j in 0..n {
            if singleton[j].is_some() {
                continue;
            }
            let root = find(&mut parent, j);
            if block_of_root[root] == usize::MAX {
                block_of_root[root] = blocks.len();
                blocks.push(Block {
                    vars: Vec::new(),
                    local_rows: Vec::new(),
                    links: Vec::new(),
                });
            }
            let b = block_of_root[root];
            var_pos[j] = (b, blocks[b].vars.len());
            blocks[b].vars.push(j);
        }

        let mut local_entries = vec![Vec::new(); m];
        for r in 0..m {
            let entries: Vec<(usize, usize, f64)> = p
                .a
                .row(r)
                .filter(|(j, _)| singleton[*j].is_none())
                .map(|(j, a)| (var_pos[j].0, var_pos[j].1, a))
                .collect();
            if is_coupling[r] {
                // split by block; entries arrive sorted by column, and
                // positions are increasing in column within a block
                let mut by_block: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
                for (b, pos, a) in entries {
                    match by_block.iter_mut().find(|(bb, _)| *bb == b) {
                        Some((_, list)) => list.push((pos, a)),
                        None => by_block.push((b, vec![(pos, a)])),
                    }
                }
                for (b, list) in by_block {
                    blocks[b].links.push((coupling_pos[r], list));
                }
            } else if let Some(&(b, _, _)) = entries.first() {
                blocks[b].local_rows.push(r);
                local_entries[r] = entries.into_iter().map(|(_, pos, a)| (pos, a)).collect();
            }
        }

        Layout {
            singleton,
            row_singletons,
            coupling,
            is_coupling,
            local_entries,
            blocks,
        }
    }
}

struct BlockFactor {
    chol: Cholesky,
    /// `L⁻¹ g_l` for each link, with the index of its first nonzero.
    w: Vec<(usize, Vec<f64>)>,
}

struct Factor {
    q: Vec<f64>,
    theta: Vec<f64>,
    blocks: Vec<BlockFactor>,
    schur: Cholesky,
}

impl Layout {
    fn factor(&self, p: &QpProblem, v: &[f64], z: &[f64], s: &[f64], w: &[f64]) -> Factor {
        let n = p.n();
        let m = p.m();
        let q: Vec<f64> = (0..n)
            .map(|j| p.quad[j] + if p.nonneg[j] { z[j] / v[j] } else { 0.0 })
            .collect();
        let theta: Vec<f64> = (0..m)
            .map(|r| {
                let inv = s[r] / w[r]
                    + self.row_singletons[r]
                        .iter()
                        .map(|&(j, a)| a * a / q[j])
                        .sum::<f64>();
                1.0 / inv
            })
            .collect();

        let nl = self.coupling.len();
        let mut schur = vec![0.0; nl * nl];
        for (k, &r) in self.coupling.iter().enumerate() {
            schur[k * nl + k] = 1.0 / theta[r];
        }

        let blocks = self
            .blocks
            .iter()
            .map(|blk| {
                let nk = blk.vars.len();
                let mut kmat = vec![0.0; nk * nk];
                for (pos, &j) in blk.vars.iter().enumerate() {
                    kmat[pos * nk + pos] = q[j];
                }
                for &r in &blk.local_rows {
                    let th = theta[r];
                    let e = &self.local_entries[r];
                    for (i1, &(p1, a1)) in e.iter().enumerate() {
                        let f = th * a1;
                        let row = &mut kmat[p1 * nk..p1 * nk + nk];
                        for &(p2, a2) in &e[..=i1] {
                            row[p2] += f * a2;
                        }
                    }
                }
                let chol = Cholesky::factor(kmat, nk);
                let wcols: Vec<(usize, Vec<f64>)> = blk
                    .links
                    .iter()
                    .map(|(_, entries)| {
                        let start = entries[0].0;
                        let mut col = vec![0.0; nk];
                        for &(pos, a) in entries {
                            col[pos] = a;
                        }
                        chol.forward_from(&mut col, start);
                        (start, col)
                    })
                    .collect();
                for (i1, (l1, _)) in blk.links.iter().enumerate() {
                    let (s1, c1) = &wcols[i1];
                    for (i2, (l2, _)) in blk.links[..=i1].iter().enumerate() {
                        let (s2, c2) = &wcols[i2];
                        let st = (*s1).max(*s2);
                        let d = dot(&c1[st..], &c2[st..]);
                        let (hi, lo) = if l1 >= l2 { (*l1, *l2) } else { (*l2, *l1) };
                        schur[hi * nl + lo] += d;
                    }
                }
                BlockFactor { chol, w: wcols }
            })
            .collect();

        Factor {
            q,
            theta,
            blocks,
            schur: Cholesky::factor(schur, nl),
        }
    }

    /// Solves the reduced Newton system for right-hand sides `r1` (n), `r2` (m).
    fn solve(&self, f: &Factor, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = r1.len();
        let m = r2.len();
        let mut r2p = r2.to_vec();
        for (j, single) in self.singleton.iter().enumerate() {
            if let Some((r, a)) = *single {
                r2p[r] -= a * r1[j] / f.q[j];
            }
        }

        let nl = self.coupling.len();
        let mut rhs_l: Vec<f64> = self.coupling.iter().map(|&r| -r2p[r]).collect();
        let mut ys: Vec<Vec<f64>> = Vec::with_capacity(self.blocks.len());
        for (blk, bf) in self.blocks.iter().zip(&f.blocks) {
            let mut y: Vec<f64> = blk.vars.iter().map(|&j| r1[j]).collect();
            for &r in &blk.local_rows {
                let t = f.theta[r] * r2p[r];
                for &(pos, a) in &self.local_entries[r] {
                    y[pos] += a * t;
                }
            }
            bf.chol.forward(&mut y);
            for ((l, _), (st, col)) in blk.links.iter().zip(&bf.w) {
                rhs_l[*l] += dot(&col[*st..], &y[*st..]);
            }
            ys.push(y);
        }
        let mut dw_l = rhs_l;
        if nl > 0 {
            f.schur.solve(&mut dw_l);
        }

        let mut dv = vec![0.0; n];
        for ((blk, bf), mut y) in self.blocks.iter().zip(&f.blocks).zip(ys) {
            for ((l, _), (st, col)) in blk.links.iter().zip(&bf.w) {
                let d = dw_l[*l];
                for (yk, ck) in y[*st..].iter_mut().zip(&col[*st..]) {
                    *yk -= d * ck;
                }
            }
            bf.chol.backward(&mut y);
            for (pos, &j) in blk.vars.iter().enumerate() {
                dv[j] = y[pos];
            }
        }

        let mut dw = vec![0.0; m];
        for blk in &self.blocks {
            for &r in &blk.local_rows {
                let av: f64 = self.local_entries[r]
                    .iter()
                    .map(|&(pos, a)| a * dv[blk.vars[pos]])
                    .sum();
                dw[r] = f.theta[r] * (av - r2p[r]);
            }
        }
        // local rows holding only singletons
        for r in 0..m {
            if self.local_entries[r].is_empty() && !self.is_coupling[r] {
                dw[r] = -f.theta[r] * r2p[r];
            }
        }
        for (k, &r) in self.coupling.iter().enumerate() {
            dw[r] = dw_l[k];
        }
        for (j, single) in self.singleton.iter().enumerate() {
            if let Some((r, a)) = *single {
                dv[j] = (r1[j] - a * dw[r]) / f.q[j];
            }
        }
        (dv, dw)
    }
}

/// Largest step in `[0, 1]` keeping `x + α dx ≥ 0` over the selected entries.
fn max_step<'a>(pairs: impl Iterator<Item = (&'a f64, &'a f64)>) -> f64 {
    pairs.fold(1.0f64, |alpha, (x, dx)| {
        if *dx < 0.0 {
            alpha.min(-x / dx)
        } else {
            alpha
        }
    })
}

struct Iterate {
    v: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    w: Vec<f64>,
}

pub(super) fn solve(p: &QpProblem, tol: f64, max_iter: usize) -> QpSolution {
    let n = p.n();
    let m = p.m();
    let layout = Layout::new(p);
    let is_lp = p.quad.iter().all(|h| *h == 0.0);
    let n_bounded = p.nonneg.iter().filter(|b| **b).count();
    let pairs = (m + n_bounded) as f64;

    let mut it = initial_point(p, &layout);

    let mut best: Option<(f64, Iterate)> = None;
    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;
    let mut since_best = 0;

    for iter in 0..=max_iter {
        iterations = iter;
        let rep = evaluate(p, &it.v, &it.w, &it.z);
        if best.as_ref().map_or(true, |(r, _)| rep.scaled < *r) {
            since_best = 0;
            best = Some((
                rep.scaled,
                Iterate {
                    v: it.v.clone(),
                    z: it.z.clone(),
                    s: it.s.clone(),
                    w: it.w.clone(),
                },
            ));
        }
        if rep.scaled <= tol {
            status = QpStatus::Optimal;
            break;
        }
        if farkas(p, &it.w) {
            status = QpStatus::Infeasible;
            break;
        }
        if iter == max_iter
            || since_best > STALL_LIMIT
            || inf_norm(&it.v) > DIVERGED
            || !rep.scaled.is_finite()
        {
            break;
        }
        since_best += 1;

        let av = p.a.mul(&it.v);
        let atw = p.a.mul_t(&it.w);
        let rd: Vec<f64> = (0..n)
            .map(|j| p.quad[j] * it.v[j] + p.linear[j] + atw[j] - it.z[j])
            .collect();
        let rp: Vec<f64> = (0..m).map(|i| av[i] + it.s[i] - p.u[i]).collect();
        let comp: f64 = dot(&it.s, &it.w)
            + (0..n)
                .filter(|&j| p.nonneg[j])
                .map(|j| it.v[j] * it.z[j])
                .sum::<f64>();
        let mu = if pairs > 0.0 { comp / pairs } else { 0.0 };

        let fac = layout.factor(p, &it.v, &it.z, &it.s, &it.w);

        // predictor
        let rsw: Vec<f64> = (0..m).map(|i| it.s[i] * it.w[i]).collect();
        let rvz: Vec<f64> = (0..n)
            .map(|j| if p.nonneg[j] { it.v[j] * it.z[j] } else { 0.0 })
            .collect();
        let dir_aff = direction(p, &layout, &fac, &it, &rd, &rp, &rsw, &rvz);
        let (ap, ad) = step_lengths(p, &it, &dir_aff, 1.0, is_lp);
        let mu_aff = mu_after(p, &it, &dir_aff, ap, ad);
        let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };

        // corrector
        let target = sigma * mu;
        let rsw: Vec<f64> = (0..m)
            .map(|i| it.s[i] * it.w[i] + dir_aff.s[i] * dir_aff.w[i] - target)
            .collect();
        let rvz: Vec<f64> = (0..n)
            .map(|j| {
                if p.nonneg[j] {
                    it.v[j] * it.z[j] + dir_aff.v[j] * dir_aff.z[j] - target
                } else {
                    0.0
                }
            })
            .collect();
        let mut dir = direction(p, &layout, &fac, &it, &rd, &rp, &rsw, &rvz);
        let (mut ap, mut ad) = step_lengths(p, &it, &dir, STEP_FRACTION, is_lp);

        // The second-order term can push complementarity up near a
        // degenerate vertex, and the method then cycles. Fall back to a plain
        // centred step when that happens.
        if mu_after(p, &it, &dir, ap, ad) > mu {
            let target = sigma.max(0.1) * mu;
            let rsw: Vec<f64> = (0..m).map(|i| it.s[i] * it.w[i] - target).collect();
            let rvz: Vec<f64> = (0..n)
                .map(|j| if p.nonneg[j] { it.v[j] * it.z[j] - target } else { 0.0 })
                .collect();
            let alt = direction(p, &layout, &fac, &it, &rd, &rp, &rsw, &rvz);
            let (bp, bd) = step_lengths(p, &it, &alt, STEP_FRACTION, is_lp);
            if mu_after(p, &it, &alt, bp, bd) < mu_after(p, &it, &dir, ap, ad) {
                (dir, ap, ad) = (alt, bp, bd);
            }
        }

        // Keep every pair within a wide neighbourhood of the central path;
        // letting a single product collapse sends the method into cycles.
        // A step that lands within tolerance is taken as is: near a
        // degenerate optimum the neighbourhood would otherwise cut it to
        // almost nothing.
        let full = advance(p, &it, &dir, ap, ad);
        if evaluate(p, &full.v, &full.w, &full.z).scaled <= tol {
            it = full;
            continue;
        }
        for _ in 0..NEIGHBOURHOOD_TRIALS {
            if in_neighbourhood(p, &it, &dir, ap, ad) {
                break;
            }
            ap *= 0.9;
            ad *= 0.9;
        }
        if !(ap.is_finite() && ad.is_finite()) {
            break;
        }
        it = advance(p, &it, &dir, ap, ad);
    }

    let (residual, out) = if status == QpStatus::MaxIter {
        best.expect("at least one iterate is evaluated")
    } else {
        (evaluate(p, &it.v, &it.w, &it.z).scaled, it)
    };
    QpSolution {
        primal: out.v,
        ineq_duals: out.w,
        bound_duals: out.z,
        status,
        kkt_residual: residual,
        iterations,
    }
}

/// Starting point in the style of Mehrotra: a full affine step from a
/// point scaled to the data, then shifted back into the interior and
/// balanced so no pair starts far from the others.
fn initial_point(p: &QpProblem, layout: &Layout) -> Iterate {
    let n = p.n();
    let m = p.m();
    let data = inf_norm(&p.linear)
        .max(inf_norm(&p.u))
        .max(inf_norm(&p.quad))
        .max(inf_norm(p.a.values()))
        .max(1.0);
    let d0 = data.sqrt();
    let mut it = Iterate {
        v: p.nonneg.iter().map(|&b| if b { d0 } else { 0.0 }).collect(),
        z: p.nonneg.iter().map(|&b| if b { d0 } else { 0.0 }).collect(),
        s: vec![d0; m],
        w: vec![d0; m],
    };
    let av = p.a.mul(&it.v);
    let atw = p.a.mul_t(&it.w);
    let rd: Vec<f64> = (0..n)
        .map(|j| p.quad[j] * it.v[j] + p.linear[j] + atw[j] - it.z[j])
        .collect();
    let rp: Vec<f64> = (0..m).map(|i| av[i] + it.s[i] - p.u[i]).collect();
    let rsw: Vec<f64> = (0..m).map(|i| it.s[i] * it.w[i]).collect();
    let rvz: Vec<f64> = (0..n)
        .map(|j| if p.nonneg[j] { it.v[j] * it.z[j] } else { 0.0 })
        .collect();
    let fac = layout.factor(p, &it.v, &it.z, &it.s, &it.w);
    let d = direction(p, layout, &fac, &it, &rd, &rp, &rsw, &rvz);
    let cand = Iterate {
        v: it.v.iter().zip(&d.v).map(|(a, b)| a + b).collect(),
        z: it.z.iter().zip(&d.z).map(|(a, b)| a + b).collect(),
        s: it.s.iter().zip(&d.s).map(|(a, b)| a + b).collect(),
        w: it.w.iter().zip(&d.w).map(|(a, b)| a + b).collect(),
    };
    let all_finite = [&cand.v, &cand.z, &cand.s, &cand.w]
        .iter()
        .all(|x| x.iter().all(|y| y.is_finite()));
    if !all_finite {
        return it;
    }
    it = cand;

    let idx: Vec<usize> = (0..n).filter(|&j| p.nonneg[j]).collect();
    let rows: Vec<usize> = (0..m).collect();
    let min_over = |a: &[f64], ids: &[usize]| ids.iter().map(|&j| a[j]).fold(f64::INFINITY, f64::min);
    let primal_min = min_over(&it.v, &idx).min(min_over(&it.s, &rows));
    let dual_min = min_over(&it.z, &idx).min(min_over(&it.w, &rows));
    let shift_p = (-1.5 * primal_min).max(0.0);
    let shift_d = (-1.5 * dual_min).max(0.0);
    let shift = |x: &mut [f64], ids: &[usize], by: f64| {
        for &j in ids {
            x[j] += by;
        }
    };
    shift(&mut it.v, &idx, shift_p);
    shift(&mut it.s, &rows, shift_p);
    shift(&mut it.z, &idx, shift_d);
    shift(&mut it.w, &rows, shift_d);

    let comp: f64 = idx.iter().map(|&j| it.v[j] * it.z[j]).sum::<f64>() + dot(&it.s, &it.w);
    let sum_p: f64 = idx.iter().map(|&j| it.v[j]).sum::<f64>() + it.s.iter().sum::<f64>();
    let sum_d: f64 = idx.iter().map(|&j| it.z[j]).sum::<f64>() + it.w.iter().sum::<f64>();
    let bump_p = if sum_d > 0.0 { 0.5 * comp / sum_d } else { 0.0 };
    let bump_d = if sum_p > 0.0 { 0.5 * comp / sum_p } else { 0.0 };
    // never leave a pair at zero
    let floor = 1e-2 * d0;
    shift(&mut it.v, &idx, bump_p);
    shift(&mut it.s, &rows, bump_p);
    shift(&mut it.z, &idx, bump_d);
    shift(&mut it.w, &rows, bump_d);
    for &j in &idx {
        it.v[j] = it.v[j].max(floor);
        it.z[j] = it.z[j].max(floor);
    }
    for i in 0..m {
        it.s[i] = it.s[i].max(floor);
        it.w[i] = it.w[i].max(floor);
    }
    it
}

fn advance(p: &QpProblem, it: &Iterate, d: &Direction, ap: f64, ad: f64) -> Iterate {
    let mut next = Iterate {
        v: it.v.clone(),
        z: it.z.clone(),
        s: it.s.clone(),
        w: it.w.clone(),
    };
    for j in 0..p.n() {
        next.v[j] += ap * d.v[j];
        if p.nonneg[j] {
            next.z[j] += ad * d.z[j];
        }
    }
    for i in 0..p.m() {
        next.s[i] += ap * d.s[i];
        next.w[i] += ad * d.w[i];
    }
    next
}

/// Whether the smallest complementarity product after the step stays above
/// a fixed fraction of the average.
fn in_neighbourhood(p: &QpProblem, it: &Iterate, d: &Direction, ap: f64, ad: f64) -> bool {
    let target = NEIGHBOURHOOD * mu_after(p, it, d, ap, ad);
    let rows = (0..p.m()).all(|i| (it.s[i] + ap * d.s[i]) * (it.w[i] + ad * d.w[i]) >= target);
    rows && (0..p.n())
        .filter(|&j| p.nonneg[j])
        .all(|j| (it.v[j] + ap * d.v[j]) * (it.z[j] + ad * d.z[j]) >= target)
}

/// Average complementarity product after stepping `(ap, ad)` along `d`.
fn mu_after(p: &QpProblem, it: &Iterate, d: &Direction, ap: f64, ad: f64) -> f64 {
    let mut c = 0.0;
    let mut pairs = 0usize;
    for i in 0..p.m() {
        c += (it.s[i] + ap * d.s[i]) * (it.w[i] + ad * d.w[i]);
        pairs += 1;
    }
    for j in (0..p.n()).filter(|&j| p.nonneg[j]) {
        c += (it.v[j] + ap * d.v[j]) * (it.z[j] + ad * d.z[j]);
        pairs += 1;
    }
    if pairs > 0 {
        c / pairs as f64
    } else {
        0.0
    }
}

struct Direction {
    v: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    w: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn direction(
    p: &QpProblem,
    layout: &Layout,
    fac: &Factor,
    it: &Iterate,
    rd: &[f64],
    rp: &[f64],
    rsw: &[f64],
    rvz: &[f64],
) -> Direction {
    let n = p.n();
    let m = p.m();
    let r1: Vec<f64> = (0..n)
        .map(|j| {
            if p.nonneg[j] {
                -rd[j] - rvz[j] / it.v[j]
            } else {
                -rd[j]
            }
        })
        .collect();
    let r2: Vec<f64> = (0..m).map(|i| -rp[i] + rsw[i] / it.w[i]).collect();
    let (mut dv, mut dw) = layout.solve(fac, &r1, &r2);
    // Late iterations are badly conditioned; refinement against the
    // unreduced operator recovers digits lost in elimination. A correction
    // is kept only if it shrinks the residual, since patched pivots make the
    // factor solve a slightly different system.
    let residual = |dv: &[f64], dw: &[f64]| {
        let atw = p.a.mul_t(dw);
        let av = p.a.mul(dv);
        let e1: Vec<f64> = (0..n).map(|j| r1[j] - fac.q[j] * dv[j] - atw[j]).collect();
        let e2: Vec<f64> = (0..m)
            .map(|i| r2[i] - av[i] + it.s[i] / it.w[i] * dw[i])
            .collect();
        let size = inf_norm(&e1).max(inf_norm(&e2));
        (e1, e2, size)
    };
    let (mut e1, mut e2, mut size) = residual(&dv, &dw);
    for _ in 0..REFINE_PASSES {
        if !(size > 0.0) {
            break;
        }
        let (cv, cw) = layout.solve(fac, &e1, &e2);
        let nv: Vec<f64> = dv.iter().zip(&cv).map(|(d, c)| d + c).collect();
        let nw: Vec<f64> = dw.iter().zip(&cw).map(|(d, c)| d + c).collect();
        let next = residual(&nv, &nw);
        if !(next.2 < 0.5 * size) {
            break;
        }
        (dv, dw) = (nv, nw);
        (e1, e2, size) = next;
    }
    let dz = (0..n)
        .map(|j| {
            if p.nonneg[j] {
                (-rvz[j] - it.z[j] * dv[j]) / it.v[j]
            } else {
                0.0
            }
        })
        .collect();
    let ds = (0..m).map(|i| (-rsw[i] - it.s[i] * dw[i]) / it.w[i]).collect();
    Direction { v: dv, z: dz, s: ds, w: dw }
}

fn step_lengths(p: &QpProblem, it: &Iterate, d: &Direction, frac: f64, is_lp: bool) -> (f64, f64) {
    let bounded = |x: &[f64], dx: &[f64]| {
        max_step(
            x.iter()
                .zip(dx)
                .zip(&p.nonneg)
                .filter(|(_, nn)| **nn)
                .map(|(pair, _)| pair),
        )
    };
    let ap = bounded(&it.v, &d.v).min(max_step(it.s.iter().zip(&d.s)));
    let ad = bounded(&it.z, &d.z).min(max_step(it.w.iter().zip(&d.w)));
    let scale = |a: f64| if a >= 1.0 { 1.0 } else { frac * a };
    if is_lp {
        (scale(ap), scale(ad))
    } else {
        let a = scale(ap.min(ad));
        (a, a)
    }
}

/// Whether the current row duals certify `{A v ≤ u, v_M ≥ 0}` empty:
/// `w ≥ 0`, `(A'w)_M ≥ 0`, `(A'w)_F = 0` and `u'w < 0`, up to a margin.
fn farkas(p: &QpProblem, w: &[f64]) -> bool {
    let wmax = inf_norm(w);
    if wmax < 1e4 {
        return false;
    }
    let wn: Vec<f64> = w.iter().map(|x| x / wmax).collect();
    let val = -dot(&p.u, &wn);
    if val <= 0.0 {
        return false;
    }
    let atw = p.a.mul_t(&wn);
    let viol = atw
        .iter()
        .zip(&p.nonneg)
        .map(|(g, nn)| if *nn { (-g).max(0.0) } else { g.abs() })
        .fold(0.0f64, f64::max);
    viol * (p.n() as f64) * 1e6 < val
}
