//! Random and hand-sized instances for tests, examples and benchmarks.

use rand::Rng;

use crate::model::{build_quadratic_disutility, GeneratorModel, Instance, LoadType, TimeGrid};

/// Size limits for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub min_loads: usize,
    pub max_loads: usize,
    pub min_slots: usize,
    pub max_slots: usize,
    pub max_tau: usize,
}

impl SynthSpec {
    pub fn new(max_loads: usize, max_slots: usize, max_tau: usize) -> Self {
        SynthSpec {
            min_loads: 1,
            max_loads,
            min_slots: 2,
            max_slots,
            max_tau,
        }
    }
}

/// Draws a valid instance: quadratic flexibility windows, a bell-shaped
/// renewable trace with noise, and utilities scaled so that some loads are
/// worth serving and some are not.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, spec: SynthSpec) -> Instance {
    let horizon = rng.gen_range(spec.min_slots..=spec.max_slots);
    let grid = TimeGrid::new(horizon, 15).expect("positive horizon");
    let m = rng.gen_range(spec.min_loads..=spec.max_loads);
    let a = rng.gen_range(0.1..2.0);
    let b = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..1.0) };
    let peak = rng.gen_range(0.0..4.0);
    let centre = rng.gen_range(0.0..horizon as f64);
    let width = rng.gen_range(1.0..horizon as f64 + 1.0);
    let renewable = (0..horizon)
        .map(|t| {
            let d = (t as f64 - centre) / width;
            (peak * (-d * d).exp() + rng.gen_range(-0.2..0.2)).max(0.0)
        })
        .collect();

    let loads = (0..m)
        .map(|i| {
            let tau = rng.gen_range(1..=spec.max_tau.min(horizon));
            let level = rng.gen_range(0.2..3.0);
            let ubar = tau as f64 * level * rng.gen_range(0.05..4.0);
            let t_c = rng.gen_range(1..=horizon);
            let t_d = rng.gen_range(t_c..=horizon);
            let alpha = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..0.5) };
            let (dis_start, dis_end) =
                build_quadratic_disutility(t_c, t_d, alpha, &grid).expect("window inside grid");
            LoadType {
                id: format!("load-{i}"),
                tau,
                level,
                ubar,
                dis_start,
                dis_end,
            }
        })
        .collect();

    Instance {
        grid,
        loads,
        generator: GeneratorModel { a, b, renewable },
    }
}

/// One unit load of duration one against a pure quadratic generator
/// `c(q) = 0.5 q²` with no renewables.
pub fn single_unit_load(horizon: usize, ubar: f64) -> Instance {
    Instance {
        grid: TimeGrid::new(horizon, 15).expect("positive horizon"),
        loads: vec![LoadType {
            id: "unit".into(),
            tau: 1,
            level: 1.0,
            ubar,
            dis_start: vec![0.0; horizon],
            dis_end: vec![0.0; horizon],
        }],
        generator: GeneratorModel {
            a: 0.5,
            b: 0.0,
            renewable: vec![0.0; horizon],
        },
    }
}

/// An instance with no loads and no renewables.
pub fn empty_instance(horizon: usize) -> Instance {
    Instance {
        grid: TimeGrid::new(horizon, 15).expect("positive horizon"),
        loads: Vec::new(),
        generator: GeneratorModel {
            a: 0.5,
            b: 0.0,
            renewable: vec![0.0; horizon],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_instance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_instances_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let inst = random_instance(&mut rng, SynthSpec::new(6, 30, 5));
            assert!(validate_instance(&inst).is_empty());
        }
    }
}
