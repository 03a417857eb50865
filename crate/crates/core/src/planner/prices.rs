use crate::error::{Error, Result};
use crate::model::{Instance, LoadType};
use crate::window;

use super::{DualCertificate, PriceSet};

fn check_len(name: &str, v: &[f64], horizon: usize) -> Result<()> {
    if v.len() != horizon {
        return Err(Error::dimension(format!(
            "{name} has length {}, expected {horizon}",
            v.len()
        )));
    }
    Ok(())
}

/// Energy cost of starting at each slot: `l Σ_{s=t}^{t+τ−1} λ_s`, truncated
/// at the horizon.
pub fn price_plambda(load: &LoadType, lambda: &[f64]) -> Result<Vec<f64>> {
    check_len("lambda", lambda, load.dis_start.len())?;
    let horizon = lambda.len();
    Ok((0..horizon)
        .map(|t| load.level * lambda[t..(t + load.tau).min(horizon)].iter().sum::<f64>())
        .collect())
}

/// Flexibility cost of starting at each slot: each start-side and end-side
/// multiplier weighted by how many service slots of that start its row
/// counts.
///
/// For starts that finish inside the horizon the end-side weight is
/// `min(T − t + 1, τ, τ − (s − t))`; for later starts the service window is
/// truncated at `T`, so the weight becomes `T − max(s, t) + 1`. Using the
/// exact count keeps `Σ_t x_t out[t]` equal to the multiplier-weighted row
/// sums for every `x`.
pub fn price_pnu(load: &LoadType, nu_s: &[f64], nu_e: &[f64]) -> Result<Vec<f64>> {
    let horizon = nu_s.len();
    check_len("nu_s", nu_s, load.dis_start.len())?;
    check_len("nu_e", nu_e, horizon)?;
    let tau = load.tau;
    Ok((0..horizon)
        .map(|r| {
            let start: f64 = (r..horizon)
                .map(|t| nu_s[t] * window::start_coef(t, r, tau))
                .sum();
            let last = (r + tau - 1).min(horizon - 1);
            let end: f64 = (0..=last)
                .map(|t| nu_e[t] * window::end_coef(t, r, tau, horizon))
                .sum();
            start + end
        })
        .collect())
}

pub fn derive_prices(inst: &Instance, duals: &DualCertificate) -> Result<PriceSet> {
    let horizon = inst.horizon();
    let m = inst.num_loads();
    check_len("lambda", &duals.lambda, horizon)?;
    if duals.nu_s.len() != m || duals.nu_e.len() != m {
        return Err(Error::dimension(format!(
            "flexibility duals cover {} / {} loads, expected {m}",
            duals.nu_s.len(),
            duals.nu_e.len()
        )));
    }
    let mut p_con = Vec::with_capacity(m);
    let mut p_s = Vec::with_capacity(m);
    let mut p_e = Vec::with_capacity(m);
    for (i, load) in inst.loads.iter().enumerate() {
        let pl = price_plambda(load, &duals.lambda)?;
        let pn = price_pnu(load, &duals.nu_s[i], &duals.nu_e[i])?;
        p_con.push(pl.iter().zip(&pn).map(|(a, b)| a + b).collect());
        let tau = load.tau as f64;
        p_s.push(duals.nu_s[i].iter().map(|v| tau * v).collect());
        p_e.push(duals.nu_e[i].iter().map(|v| tau * v).collect());
    }
    Ok(PriceSet {
        p_con,
        p_gen: duals.lambda.clone(),
        p_s,
        p_e,
    })
}
