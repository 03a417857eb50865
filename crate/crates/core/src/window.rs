//! Service-window arithmetic shared by the planner, the price formulas and
//! the binary evaluators.
//!
//! A start probability row `x` (0-based, length `T`) induces a running status
//! `r[s] = sum_{r = max(0, s - tau + 1)}^{s} x[r]`. The start-side flexibility
//! rows use the prefix sums of `r`, the end-side rows its suffix sums.
//! Every function here works on 0-based indices.

/// Running (in-service) status for each slot.
pub fn running(x: &[f64], tau: usize) -> Vec<f64> {
    // direct window sums; a sliding accumulator drifts on long horizons
    (0..x.len())
        .map(|s| x[(s + 1).saturating_sub(tau)..=s].iter().sum())
        .collect()
}

/// `sum_{s <= t} running[s]` for every `t`.
pub fn start_side(x: &[f64], tau: usize) -> Vec<f64> {
    let run = running(x, tau);
    let mut acc = 0.0;
    run.iter()
        .map(|r| {
            acc += r;
            acc
        })
        .collect()
}

/// `sum_{s >= t} running[s]` for every `t`.
pub fn end_side(x: &[f64], tau: usize) -> Vec<f64> {
    let run = running(x, tau);
    let mut out = vec![0.0; run.len()];
    let mut acc = 0.0;
    for t in (0..run.len()).rev() {
        acc += run[t];
        out[t] = acc;
    }
    out
}

/// Coefficient of start `r` in the start-side row `t`: the number of service
/// slots of a load started at `r` that fall in `[r, t]`.
#[inline]
pub fn start_coef(t: usize, r: usize, tau: usize) -> f64 {
    if r > t {
        0.0
    } else {
        ((t - r + 1).min(tau)) as f64
    }
}

/// Coefficient of start `r` in the end-side row `t`: the number of service
/// slots of a load started at `r` that fall in `[t, T - 1]`.
#[inline]
pub fn end_coef(t: usize, r: usize, tau: usize, horizon: usize) -> f64 {
    let last = (r + tau - 1).min(horizon - 1);
    let first = t.max(r);
    if first > last {
        0.0
    } else {
        (last - first + 1) as f64
    }
}

/// Whether start `r` (0-based) completes inside the horizon.
#[inline]
pub fn is_full_start(r: usize, tau: usize, horizon: usize) -> bool {
    r + tau <= horizon
}

/// Number of in-horizon service slots for a start at `r`.
#[inline]
pub fn served_slots(r: usize, tau: usize, horizon: usize) -> usize {
    tau.min(horizon - r)
}
