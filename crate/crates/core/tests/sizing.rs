use mrtss::design::{
    build_quadratic_features, elicit_quadratic_effect, make_availability, AvailabilityKind,
    TrialDesign,
};
use mrtss::distributions::{f_quantile, ncf_cdf, FDistParams};
use mrtss::samplesize::{power, solve_sample_size, solve_sample_size_with_cap, SizingInputs};
use mrtss::Error;
use proptest::prelude::*;

fn inputs(days: usize, tau: f64, kind: AvailabilityKind, avg: f64, max_day: usize) -> SizingInputs {
    let design = TrialDesign::new(days, 5, 0.4).unwrap();
    SizingInputs {
        features: build_quadratic_features(&design).unwrap(),
        tau: make_availability(kind, tau, &design).unwrap(),
        effect: elicit_quadratic_effect(0.0, avg, max_day, &design).unwrap(),
        design,
        alpha0: 0.05,
        power_target: 0.8,
    }
}

fn kind_strategy() -> impl Strategy<Value = AvailabilityKind> {
    prop_oneof![
        Just(AvailabilityKind::Constant),
        (-0.1f64..0.1).prop_map(|amplitude| AvailabilityKind::Linear { amplitude }),
        (0.0f64..0.1).prop_map(|amplitude| AvailabilityKind::WeeklyPeriodic { amplitude }),
    ]
}

#[test]
fn power_from_first_principles() {
    // Recompute the power at N = 42 from the noncentrality and F kernels.
    let inp = inputs(42, 0.5, AvailabilityKind::Constant, 0.1, 29);
    let q = inp.q_matrix().unwrap();
    let d = nalgebra::DVector::from_column_slice(&inp.effect.coefficients().unwrap());
    let c = 42.0 * (d.transpose() * &q * &d)[(0, 0)];
    let crit = f_quantile(0.95, FDistParams::central(3, 36).unwrap()).unwrap();
    let want = 1.0 - ncf_cdf(crit, FDistParams::noncentral(3, 36, c).unwrap()).unwrap();
    assert!((power(42, &inp).unwrap() - want).abs() < 1e-14);
}

#[test]
fn cap_is_enforced() {
    let inp = inputs(42, 0.5, AvailabilityKind::Constant, 0.01, 29);
    assert!(solve_sample_size_with_cap(&inp, 100).is_err());
    assert!(solve_sample_size(&inp).unwrap().n > 100);
}

#[test]
fn zero_effect_has_no_solution() {
    let mut inp = inputs(42, 0.5, AvailabilityKind::Constant, 0.1, 29);
    inp.effect = inp.effect.scaled(0.0);
    assert!(solve_sample_size(&inp).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn certificate_and_monotonicity(
        days in 14usize..60,
        tau in 0.3f64..0.8,
        kind in kind_strategy(),
        avg in 0.05f64..0.15,
        frac in 0.5f64..1.0,
    ) {
        let max_day = ((days as f64 * frac) as usize).clamp(2, days);
        let inp = inputs(days, tau, kind.clone(), avg, max_day);
        let res = solve_sample_size(&inp).unwrap();
        prop_assert!(res.achieved_power >= 0.8);
        if let Some(below) = res.power_at_n_minus_1 {
            prop_assert!(below < 0.8);
        }
        let mut last = 0.0;
        for n in 8..res.n + 5 {
            let pw = power(n, &inp).unwrap();
            prop_assert!(pw >= last - 1e-12, "power dips at n = {n}");
            last = pw;
        }

        // More availability or a larger effect never needs more subjects.
        let more_tau = inputs(days, tau + 0.1, kind, avg, max_day);
        prop_assert!(solve_sample_size(&more_tau).unwrap().n <= res.n);
        let mut bigger = inp.clone();
        bigger.effect = inp.effect.scaled(1.2);
        prop_assert!(solve_sample_size(&bigger).unwrap().n <= res.n);
        let mut stricter = inp.clone();
        stricter.power_target = 0.9;
        prop_assert!(solve_sample_size(&stricter).unwrap().n >= res.n);
    }

    #[test]
    fn availability_averages_to_target(
        days in 7usize..60,
        target in 0.2f64..0.8,
        kind in kind_strategy(),
    ) {
        let design = TrialDesign::new(days, 5, 0.4).unwrap();
        let pat = make_availability(kind, target, &design).unwrap();
        prop_assert!((pat.average() - target).abs() < 1e-12);
        prop_assert!(pat.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn elicited_effect_meets_constraints(
        days in 7usize..60,
        avg in -0.2f64..0.2,
        initial in -0.05f64..0.05,
        frac in 0.2f64..1.0,
    ) {
        let design = TrialDesign::new(days, 5, 0.4).unwrap();
        let max_day = ((days as f64 * frac) as usize).clamp(2, days);
        match elicit_quadratic_effect(initial, avg, max_day, &design) {
            Ok(e) => {
                let [c0, c1, c2] = e.coefficients().unwrap();
                prop_assert!(c2 < 0.0);
                prop_assert!((c0 - initial).abs() < 1e-12);
                prop_assert!((e.average() - avg).abs() < 1e-12);
                // Vertex of the quadratic sits on the peak day (0-based index).
                prop_assert!((-c1 / (2.0 * c2) - (max_day - 1) as f64).abs() < 1e-8);
            }
            // The constraints force an upward-opening parabola.
            Err(Error::NoInteriorMaximum(c2)) => prop_assert!(c2 >= 0.0),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}
