use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::milp::evaluate_binary;
use crate::synth::{random_instance, single_unit_load, SynthSpec};

fn solved(inst: &Instance) -> (RelaxedSolution, DualCertificate) {
    solve_sppr(inst, 1e-10).unwrap()
}

#[test]
fn single_replica_is_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inst = random_instance(&mut rng, SynthSpec::new(3, 8, 3));
    let (sol, duals) = solved(&inst);
    let rep = scale_solution(&inst, &sol, &duals, 1, 1e-8).unwrap();
    assert_eq!(rep.x, sol.x);
    assert_eq!(rep.nu_s, duals.nu_s);
    assert_eq!(rep.nu_e, duals.nu_e);
    assert_eq!(rep.lambda, duals.lambda);
}

#[test]
fn two_replicas_halve_flexibility_multipliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inst = random_instance(&mut rng, SynthSpec::new(4, 12, 4));
    let (sol, duals) = solved(&inst);
    let rep = scale_solution(&inst, &sol, &duals, 2, 1e-8).unwrap();
    assert_eq!(rep.lambda, duals.lambda);
    for (a, b) in rep.nu_s.iter().flatten().zip(duals.nu_s.iter().flatten()) {
        assert_eq!(*a, b / 2.0);
    }
    assert!(check_replicated_kkt(&inst, &rep, 1e-8).unwrap().passes());
}

#[test]
fn replicated_balance_matches_original() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inst = random_instance(&mut rng, SynthSpec::new(4, 12, 4));
    let (sol, duals) = solved(&inst);
    let one = check_replicated_kkt(&inst, &scale_solution(&inst, &sol, &duals, 1, 1e-8).unwrap(), 1e-8)
        .unwrap();
    let ten = check_replicated_kkt(&inst, &scale_solution(&inst, &sol, &duals, 10, 1e-8).unwrap(), 1e-8)
        .unwrap();
    assert!((one.balance_slackness - ten.balance_slackness).abs() < 1e-9);
    assert!((one.primal_feasibility - ten.primal_feasibility).abs() < 1e-9);
}

#[test]
fn scaling_rejects_non_optimal_input() {
    let inst = single_unit_load(1, 10.0);
    let (mut sol, duals) = solved(&inst);
    sol.q[0] = 0.0;
    assert!(scale_solution(&inst, &sol, &duals, 2, 1e-8).is_err());
    let (sol, duals) = solved(&inst);
    assert!(scale_solution(&inst, &sol, &duals, 0, 1e-8).is_err());
}

#[test]
fn unscaled_multipliers_fail_the_replicated_check() {
    let inst = single_unit_load(1, 10.0);
    let (sol, duals) = solved(&inst);
    let mut rep = scale_solution(&inst, &sol, &duals, 5, 1e-8).unwrap();
    rep.lambda.iter_mut().for_each(|v| *v /= 5.0);
    assert!(!check_replicated_kkt(&inst, &rep, 1e-8).unwrap().passes());
}

#[test]
fn degenerate_rows_sample_deterministically() {
    let x = vec![vec![0.0, 0.0, 1.0, 0.0], vec![0.0; 4]];
    let s = sample_binary(&x, 50, 9).unwrap();
    assert!(s[0].iter().all(|v| *v == Some(2)));
    assert!(s[1].iter().all(Option::is_none));
}

#[test]
fn sampling_matches_probabilities() {
    let n = 100_000;
    let x = vec![vec![0.5, 0.5, 0.0]];
    let s = sample_binary(&x, n, 4).unwrap();
    let bound = 3.0 * (0.25 / n as f64).sqrt();
    for t in 0..2 {
        let freq = s[0].iter().filter(|v| **v == Some(t)).count() as f64 / n as f64;
        assert!((freq - 0.5).abs() <= bound, "slot {t}: {freq}");
    }
    assert!(s[0].iter().all(Option::is_some));
}

#[test]
fn sampling_validates_rows() {
    assert!(sample_binary(&vec![vec![0.7, 0.4]], 3, 0).is_err());
    assert!(sample_binary(&vec![vec![-0.1, 0.4]], 3, 0).is_err());
    assert!(sample_binary(&vec![vec![0.5, 0.5 + 1e-9]], 3, 0).is_ok());
}

#[test]
fn sampling_is_reproducible_per_type() {
    let x = vec![vec![0.2, 0.3, 0.1], vec![0.4, 0.0, 0.4]];
    let a = sample_binary(&x, 200, 17).unwrap();
    assert_eq!(a, sample_binary(&x, 200, 17).unwrap());
    assert_ne!(a, sample_binary(&x, 200, 18).unwrap());
    // a type's draws do not depend on the other rows
    let other = sample_binary(&vec![vec![0.0, 0.0, 1.0], x[1].clone()], 200, 17).unwrap();
    assert_eq!(other[1], a[1]);
}

#[test]
fn integral_schedules_never_violate_balance() {
    let inst = single_unit_load(1, 10.0);
    let (sol, _) = solved(&inst);
    assert!((sol.x[0][0] - 1.0).abs() < 1e-9);
    let mut sol = sol;
    sol.x[0][0] = 1.0;
    sol.q = inst.residual_demand(&sol.x).iter().map(|d| d.max(0.0)).collect();
    for p in lln_convergence(&inst, &sol, &[1, 10, 100], 5).unwrap() {
        assert_eq!(p.mean_violation, 0.0);
    }
}

#[test]
fn violation_shrinks_like_inverse_square_root() {
    // x = 0.1 with the balance row binding at q = 0.1
    let inst = single_unit_load(1, 0.1);
    let (sol, _) = solved(&inst);
    let ns = [100, 1_000, 10_000, 100_000];
    let pts = lln_convergence(&inst, &sol, &ns, 42).unwrap();
    let inversions = pts.windows(2).filter(|w| w[1].mean_violation > w[0].mean_violation).count();
    assert!(inversions <= 1, "{pts:?}");
    let slope = log_log_slope(
        &pts.iter().map(|p| (p.n as f64, p.mean_violation)).collect::<Vec<_>>(),
    )
    .unwrap();
    assert!((slope + 0.5).abs() <= 0.15, "slope {slope}");
}

#[test]
fn log_log_slope_of_power_law() {
    let pts: Vec<(f64, f64)> = [1.0, 10.0, 100.0].iter().map(|x: &f64| (*x, 3.0 * x.powf(-0.5))).collect();
    assert!((log_log_slope(&pts).unwrap() + 0.5).abs() < 1e-12);
    assert!(log_log_slope(&pts[..1]).is_none());
}

#[test]
fn single_integral_replica_realizes_the_binary_value() {
    let inst = single_unit_load(1, 10.0);
    let tr = run_flex_sched(&inst, 1, 3, 1e-10).unwrap();
    assert_eq!(tr.sampled_starts, vec![vec![Some(0)]]);
    let (v, _) = evaluate_binary(&inst, &[Some(0)]).unwrap();
    assert!((tr.realized_objective - v).abs() < 1e-8);
}

#[test]
fn nothing_served_means_no_payments() {
    // with a linear cost term any service costs strictly more than it is worth
    let mut inst = single_unit_load(3, 0.0);
    inst.generator.b = 1.0;
    let tr = run_flex_sched(&inst, 20, 1, 1e-10).unwrap();
    assert!(tr.sampled_starts[0].iter().all(Option::is_none));
    let l = tr.ledger;
    assert!(l.consumption_payments.abs() < 1e-12);
    assert!(l.flexibility_credits.abs() < 1e-12);
    assert!(l.generator_revenue.abs() < 1e-12);
    assert_eq!(audit_individual_rationality(&tr, 1e-8).value, 0.0);
}

#[test]
fn zero_prices_balance_trivially() {
    let inst = single_unit_load(2, 1.0);
    let mut tr = run_flex_sched(&inst, 5, 1, 1e-10).unwrap();
    for row in [&mut tr.prices.p_con, &mut tr.prices.p_s, &mut tr.prices.p_e] {
        row.iter_mut().flatten().for_each(|v| *v = 0.0);
    }
    tr.prices.p_gen.iter_mut().for_each(|v| *v = 0.0);
    assert_eq!(audit_budget_balance(&tr, 1e-8).value, 0.0);
}

#[test]
fn perturbed_generator_price_breaks_balance() {
    let inst = single_unit_load(2, 10.0);
    let mut tr = run_flex_sched(&inst, 10, 1, 1e-10).unwrap();
    assert!(audit_budget_balance(&tr, 1e-8).passes);
    tr.prices.p_gen.iter_mut().for_each(|v| *v *= 1.1);
    let audit = audit_budget_balance(&tr, 1e-8);
    assert!(!audit.passes);
    assert!(audit.value > 1e-3);
}

#[test]
fn unscheduled_replicas_get_nothing() {
    let inst = single_unit_load(1, 0.1);
    let tr = run_flex_sched(&inst, 200, 8, 1e-10).unwrap();
    for (s, u) in tr.sampled_starts[0].iter().zip(&tr.net_utilities[0]) {
        if s.is_none() {
            assert_eq!(*u, 0.0);
        }
    }
    assert!(tr.sampled_starts[0].iter().any(Option::is_none));
    assert!(tr.sampled_starts[0].iter().any(Option::is_some));
}

#[test]
fn raised_activation_price_costs_scheduled_consumers() {
    let inst = single_unit_load(1, 0.1);
    let mut tr = run_flex_sched(&inst, 200, 8, 1e-10).unwrap();
    assert!(audit_individual_rationality(&tr, 1e-8).passes);
    let delta = 0.25;
    tr.prices.p_con.iter_mut().flatten().for_each(|v| *v += delta);
    let audit = audit_individual_rationality(&tr, 1e-8);
    assert!(!audit.passes);
    assert!((audit.value + delta).abs() < 1e-8, "{}", audit.value);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn replicated_solutions_stay_optimal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, SynthSpec::new(5, 16, 4));
        let (sol, duals) = solve_sppr(&inst, 1e-9).unwrap();
        for n in [2, 5, 10] {
            let rep = scale_solution(&inst, &sol, &duals, n, 1e-8).unwrap();
            let k = check_replicated_kkt(&inst, &rep, 1e-8).unwrap();
            prop_assert!(k.passes(), "n={} {:?}", n, k.worst());
        }
    }

    #[test]
    fn expected_rounding_value_is_the_relaxed_optimum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, SynthSpec::new(5, 16, 4));
        let (sol, _) = solve_sppr(&inst, 1e-9).unwrap();
        let e = expected_objective(&inst, &sol.x, &sol.q);
        prop_assert!((e - sol.objective).abs() <= 1e-8 * (1.0 + sol.objective.abs()), "{} vs {}", e, sol.objective);
    }

    #[test]
    fn mechanism_audits_hold(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, SynthSpec::new(4, 12, 4));
        let tr = run_flex_sched(&inst, 2_000, seed, 1e-9).unwrap();
        let bb = audit_budget_balance(&tr, 1e-8);
        prop_assert!(bb.passes, "{:?}", bb);
        let ir = audit_individual_rationality(&tr, 1e-8);
        prop_assert!(ir.passes, "{:?}", ir);
        prop_assert_eq!(&tr, &run_flex_sched(&inst, 2_000, seed, 1e-9).unwrap());
    }
}
