#![allow(clippy::excessive_precision)]

mod common;

use mrtss::distributions::{
    f_cdf, f_quantile, hotelling_critical, hotelling_multiplier, ln_gamma, ncf_cdf, reg_inc_beta,
    FDistParams,
};
use proptest::prelude::*;

// Reference values below come from 30-digit mpmath (loggamma, and the
// Poisson-mixture series of regularized incomplete betas for the noncentral
// F), rounded to 20 significant digits.

#[test]
fn ln_gamma_reference_values() {
    let cases = [
        (0.5, 0.572_364_942_924_700_087_07),
        (1e-8, 18.420_680_738_180_208_884),
        (3.7, 1.428_072_326_665_388_129_2),
        (10.25, 13.368_023_671_476_046_295),
        (171.3, 708.114_947_038_996_882_73),
        (1e5, 1_051_287.708_973_656_894_9),
    ];
    for (x, want) in cases {
        let got = ln_gamma(x).unwrap();
        assert!((got - want).abs() <= 1e-14 * want.abs().max(1.0), "x = {x}: {got} vs {want}");
    }
}

#[test]
fn ncf_reference_values() {
    let cases = [
        (3, 36, 8.0, 1.5, 0.134_758_085_641_228_863_7),
        (3, 36, 8.0, 4.0, 0.602_808_671_158_123_397_23),
        (1, 10, 0.5, 0.2, 0.266_111_827_631_706_798_8),
        (5, 20, 30.0, 3.0, 0.039_638_223_993_833_138_034),
        (3, 36, 80.0, 10.0, 0.001_214_024_092_264_955_204),
    ];
    for (d1, d2, lambda, x, want) in cases {
        let got = ncf_cdf(x, FDistParams::noncentral(d1, d2, lambda).unwrap()).unwrap();
        assert!((got - want).abs() <= 1e-12, "({d1}, {d2}, {lambda}, {x}): {got} vs {want}");
    }
}

#[test]
fn ncf_matches_sampling() {
    let xs = [0.3, 1.0, 2.5, 5.0];
    let mc = common::ncf_cdf_monte_carlo(&xs, 2, 15, 4.0, 1_000_000, 77);
    for (&x, (p, se)) in xs.iter().zip(mc) {
        let got = ncf_cdf(x, FDistParams::noncentral(2, 15, 4.0).unwrap()).unwrap();
        assert!((got - p).abs() <= 4.0 * se, "x = {x}: {got} vs {p} +- {se}");
    }
}

#[test]
fn hotelling_scaling() {
    // Critical value is the F quantile scaled by p (N - q - 1) / (N - q - p).
    let mult = hotelling_multiplier(3, 3, 42).unwrap();
    assert!((mult - 3.0 * 38.0 / 36.0).abs() < 1e-15);
    let crit = hotelling_critical(3, 3, 42, 0.05).unwrap();
    let f = f_quantile(0.95, FDistParams::central(3, 36).unwrap()).unwrap();
    assert!((crit - mult * f).abs() < 1e-12 * crit);
    assert!(hotelling_multiplier(3, 3, 6).is_err());
}

#[test]
fn domain_errors() {
    assert!(ln_gamma(0.0).is_err());
    assert!(ln_gamma(-1.5).is_err());
    assert!(reg_inc_beta(0.0, 1.0, 0.5).is_err());
    assert!(reg_inc_beta(1.0, 1.0, 1.5).is_err());
    assert!(FDistParams::central(0, 3).is_err());
    assert!(FDistParams::noncentral(1, 3, -0.1).is_err());
    assert!(f_quantile(1.0, FDistParams::central(2, 3).unwrap()).is_err());
    assert!(f_cdf(f64::NAN, FDistParams::central(2, 3).unwrap()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f_cdf_matches_quadrature(d1 in 1u32..60, d2 in 1u32..120, x in 0.01f64..20.0) {
        let got = f_cdf(x, FDistParams::central(d1, d2).unwrap()).unwrap();
        let want = common::f_cdf_quadrature(x, d1, d2);
        prop_assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
    }

    #[test]
    fn inc_beta_symmetry(a in 0.1f64..50.0, b in 0.1f64..50.0, x in 0.0f64..=1.0) {
        let lhs = reg_inc_beta(a, b, x).unwrap();
        let rhs = 1.0 - reg_inc_beta(b, a, 1.0 - x).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-13);
        prop_assert!((0.0..=1.0).contains(&lhs));
    }

    #[test]
    fn quantile_roundtrip(d1 in 1u32..40, d2 in 1u32..200, p in 0.001f64..0.999) {
        let params = FDistParams::central(d1, d2).unwrap();
        let q = f_quantile(p, params).unwrap();
        prop_assert!((f_cdf(q, params).unwrap() - p).abs() <= 1e-8);
    }

    #[test]
    fn ncf_decreases_in_noncentrality(
        d1 in 1u32..10,
        d2 in 2u32..80,
        x in 0.1f64..8.0,
        lambda in 0.0f64..60.0,
        step in 0.1f64..10.0,
    ) {
        let at = |l| ncf_cdf(x, FDistParams::noncentral(d1, d2, l).unwrap()).unwrap();
        prop_assert!(at(lambda + step) <= at(lambda) + 1e-14);
    }

    #[test]
    fn ncf_at_zero_is_central(d1 in 1u32..30, d2 in 1u32..100, x in 0.0f64..15.0) {
        let central = f_cdf(x, FDistParams::central(d1, d2).unwrap()).unwrap();
        let nc = ncf_cdf(x, FDistParams::noncentral(d1, d2, 0.0).unwrap()).unwrap();
        prop_assert!((central - nc).abs() <= 1e-14);
    }
}
