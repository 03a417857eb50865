//! The exact problem with binary starts: a brute-force oracle and a
//! best-first branch-and-bound over restricted relaxations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Instance;
use crate::planner::{complete_yz, objective, solve_restricted, Matrix, Restriction};
use crate::window;

/// Largest number of joint assignments the brute-force oracle will visit.
pub const BRUTE_FORCE_BUDGET: u128 = 10_000_000;
pub const DEFAULT_GAP_TOL: f64 = 1e-8;

/// Tolerance of the node relaxations.
const NODE_TOL: f64 = 1e-9;
/// Start mass this close to 0 or 1 counts as integral.
const INTEGRAL_TOL: f64 = 1e-6;

/// One start per load (0-based slot, `None` = never served) and the cheapest
/// thermal output for it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinarySchedule {
    pub starts: Vec<Option<usize>>,
    pub q: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BnbStats {
    pub nodes_explored: usize,
    pub best_bound: f64,
    pub incumbent_objective: f64,
    pub gap: f64,
}

fn check_starts(inst: &Instance, starts: &[Option<usize>]) -> Result<()> {
    if starts.len() != inst.num_loads() {
        return Err(Error::dimension(format!(
            "{} starts for {} loads",
            starts.len(),
            inst.num_loads()
        )));
    }
    let horizon = inst.horizon();
    for (load, s) in inst.loads.iter().zip(starts) {
        if let Some(t) = *s {
            if t >= load.last_start(horizon) {
                return Err(Error::validation(format!(
                    "load {} cannot start at slot {} and finish by slot {horizon}",
                    load.id,
                    t + 1
                )));
            }
        }
    }
    Ok(())
}

fn start_matrix(inst: &Instance, starts: &[Option<usize>]) -> Matrix {
    let horizon = inst.horizon();
    starts
        .iter()
        .map(|s| {
            let mut row = vec![0.0; horizon];
            if let Some(t) = *s {
                row[t] = 1.0;
            }
            row
        })
        .collect()
}

/// Objective of a binary schedule, with flexibility slacks from the
/// completion rule and `q_t = (demand_t − g_t)^+`.
pub fn evaluate_binary(inst: &Instance, starts: &[Option<usize>]) -> Result<(f64, Vec<f64>)> {
    inst.ensure_valid()?;
    check_starts(inst, starts)?;
    let x = start_matrix(inst, starts);
    let (y, z) = complete_yz(inst, &x)?;
    let q: Vec<f64> = inst
        .residual_demand(&x)
        .into_iter()
        .map(|d| d.max(0.0))
        .collect();
    Ok((objective(inst, &x, &y, &z, &q), q))
}

/// Number of joint assignments the oracle would visit, saturating.
pub fn brute_force_size(inst: &Instance) -> u128 {
    let horizon = inst.horizon();
    inst.loads.iter().fold(1u128, |acc, l| {
        acc.saturating_mul(l.last_start(horizon) as u128 + 1)
    })
}

/// Per-load cost of each binary start apart from generation: disutility of
/// the service window less the utility.
fn start_costs(inst: &Instance) -> Vec<Vec<f64>> {
    let horizon = inst.horizon();
    inst.loads
        .iter()
        .map(|load| {
            let tau = load.tau;
            (0..load.last_start(horizon))
                .map(|r| {
                    let mut c = -load.ubar;
                    for t in 0..horizon {
                        c += load.dis_start[t] * window::start_coef(t, r, tau) / tau as f64;
                        c += load.dis_end[t] * window::end_coef(t, r, tau, horizon) / tau as f64;
                    }
                    c
                })
                .collect()
        })
        .collect()
}

/// Enumerates every joint assignment, starts before `None` and the first
/// load most significant, keeping the first strict improvement; ties
/// therefore go to the lexicographically earliest starts.
pub fn brute_force_spp(inst: &Instance) -> Result<BinarySchedule> {
    inst.ensure_valid()?;
    let required = brute_force_size(inst);
    if required > BRUTE_FORCE_BUDGET {
        return Err(Error::Budget {
            required,
            budget: BRUTE_FORCE_BUDGET,
        });
    }
    let horizon = inst.horizon();
    let m = inst.num_loads();
    let costs = start_costs(inst);
    let lasts: Vec<usize> = inst.loads.iter().map(|l| l.last_start(horizon)).collect();
    let gen = &inst.generator;

    let value = |digits: &[usize]| {
        let mut demand = vec![0.0; horizon];
        let mut v = 0.0;
        for (i, load) in inst.loads.iter().enumerate() {
            let r = digits[i];
            if r < lasts[i] {
                v += costs[i][r];
                for d in &mut demand[r..r + load.tau] {
                    *d += load.level;
                }
            }
        }
        for t in 0..horizon {
            v += gen.cost((demand[t] - gen.renewable[t]).max(0.0));
        }
        v
    };

    let mut digits = vec![0usize; m];
    let mut best_digits = digits.clone();
    let mut best = value(&digits);
    loop {
        // odometer step, last load fastest
        let mut k = m;
        loop {
            if k == 0 {
                let starts = best_digits
                    .iter()
                    .zip(&lasts)
                    .map(|(&d, &l)| (d < l).then_some(d))
                    .collect::<Vec<_>>();
                let (objective, q) = evaluate_binary(inst, &starts)?;
                return Ok(BinarySchedule {
                    starts,
                    q,
                    objective,
                });
            }
            k -= 1;
            if digits[k] < lasts[k] {
                digits[k] += 1;
                break;
            }
            digits[k] = 0;
        }
        let v = value(&digits);
        if v < best - 1e-12 * (1.0 + best.abs()) {
            best = v;
            best_digits.clone_from(&digits);
        }
    }
}

struct Node {
    bound: f64,
    seq: usize,
    restrictions: Vec<Restriction>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // reversed so the max-heap pops the smallest bound, then the oldest node
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// How far a load's start row is from a single whole start.
fn fractionality(row: &[f64]) -> f64 {
    let mass: f64 = row.iter().sum();
    let top = row.iter().fold(0.0f64, |m, v| m.max(*v));
    mass.min(1.0 - top).max(0.0)
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (t, v)| if *v > acc.1 { (t, *v) } else { acc })
        .0
}

/// Best-first branch-and-bound. Each node solves the relaxation with some
/// starts forced or excluded; a load is branched on "starts at its heaviest
/// slot" against "never starts there". Late starts are excluded throughout.
pub fn solve_spp_bnb(inst: &Instance, gap_tol: f64) -> Result<(BinarySchedule, BnbStats)> {
    inst.ensure_valid()?;
    let horizon = inst.horizon();
    let m = inst.num_loads();
    let empty = vec![None; m];
    let (obj, q) = evaluate_binary(inst, &empty)?;
    let mut incumbent = BinarySchedule {
        starts: empty,
        q,
        objective: obj,
    };
    let slack = |inc: f64| gap_tol * (1.0 + inc.abs());

    let root: Vec<Restriction> = inst
        .loads
        .iter()
        .map(|l| Restriction::full_starts(l.tau, horizon))
        .collect();
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq: 0,
        restrictions: root,
    });
    let mut seq = 1;
    let mut nodes = 0;
    // smallest bound among nodes dropped only because of the gap tolerance
    let mut loose = f64::INFINITY;

    while let Some(node) = heap.pop() {
        if node.bound >= incumbent.objective - slack(incumbent.objective) {
            loose = loose.min(node.bound);
            // every remaining node is at least as bad
            for rest in heap.drain() {
                loose = loose.min(rest.bound);
            }
            break;
        }
        nodes += 1;
        let out = solve_restricted(inst, Some(&node.restrictions), NODE_TOL)?;
        let bound = out.solution.objective;
        if bound >= incumbent.objective - slack(incumbent.objective) {
            loose = loose.min(bound);
            continue;
        }
        let x = &out.solution.x;

        // rounding heuristic: the heaviest start of every load carrying at
        // least half a unit of mass
        let rounded: Vec<Option<usize>> = x
            .iter()
            .map(|row| (row.iter().sum::<f64>() >= 0.5).then(|| argmax(row)))
            .collect();
        if rounded
            .iter()
            .zip(&node.restrictions)
            .all(|(s, r)| s.map_or(true, |t| r.allowed[t] || r.forced == Some(t)))
        {
            let (obj, q) = evaluate_binary(inst, &rounded)?;
            if obj < incumbent.objective {
                incumbent = BinarySchedule {
                    starts: rounded,
                    q,
                    objective: obj,
                };
            }
        }

        let branch = (0..m)
            .map(|i| (i, fractionality(&x[i])))
            .filter(|(_, f)| *f > INTEGRAL_TOL)
            .fold(None, |acc: Option<(usize, f64)>, (i, f)| match acc {
                Some((_, g)) if g >= f => acc,
                _ => Some((i, f)),
            });
        let Some((i, _)) = branch else {
            // integral relaxation: the rounding above already evaluated it
            continue;
        };
        let t = argmax(&x[i]);
        let mut take = node.restrictions.clone();
        take[i].forced = Some(t);
        let mut skip = node.restrictions;
        skip[i].allowed[t] = false;
        for restrictions in [take, skip] {
            heap.push(Node {
                bound,
                seq,
                restrictions,
            });
            seq += 1;
        }
    }

    let best_bound = loose.min(incumbent.objective);
    let stats = BnbStats {
        nodes_explored: nodes,
        best_bound,
        incumbent_objective: incumbent.objective,
        gap: incumbent.objective - best_bound,
    };
    Ok((incumbent, stats))
}
