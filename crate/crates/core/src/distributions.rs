//! Special functions and the central/noncentral F distribution.
//!
//! Everything here is a pure function of its arguments. The incomplete beta
//! is evaluated by Lentz's continued fraction, the noncentral F as a Poisson
//! mixture of incomplete betas summed outward from the modal Poisson index.

#![allow(clippy::excessive_precision)]

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convergence threshold for the noncentral series, both for the running
/// term and for the analytic Poisson tail bound.
pub const NCF_SERIES_EPS: f64 = 1e-13;

/// Maximum number of series terms per direction before `ncf_cdf` gives up.
pub const NCF_MAX_TERMS: usize = 100_000;

/// Target |F(x) - p| for the quantile solver.
pub const QUANTILE_CDF_TOL: f64 = 1e-10;

/// Bisection iteration cap for the quantile solver.
pub const QUANTILE_MAX_ITER: usize = 200;

const BETA_CF_EPS: f64 = 1e-16;
const BETA_CF_MAX_ITER: usize = 20_000;
const TINY: f64 = 1e-300;

/// Degrees of freedom and noncentrality of an F distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FDistParams {
    pub d1: u32,
    pub d2: u32,
    pub lambda: f64,
}

impl FDistParams {
    pub fn central(d1: u32, d2: u32) -> Result<Self> {
        Self::noncentral(d1, d2, 0.0)
    }

    pub fn noncentral(d1: u32, d2: u32, lambda: f64) -> Result<Self> {
        let params = Self { d1, d2, lambda };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d2 == 0 {
            return Err(Error::Domain(format!(
                "degrees of freedom must be >= 1 (d1 = {}, d2 = {})",
                self.d1, self.d2
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Domain(format!(
                "noncentrality must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    fn require_central(&self) -> Result<()> {
        self.validate()?;
        if self.lambda != 0.0 {
            return Err(Error::Domain(format!(
                "central F requested with lambda = {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

const LANCZOS_G: f64 = 5.242_187_5;
const LANCZOS_COEF: [f64; 14] = [
    57.156_235_665_862_923_5,
    -59.597_960_355_475_491_2,
    14.136_097_974_741_747_1,
    -0.491_913_816_097_620_199,
    0.339_946_499_848_118_887e-4,
    0.465_236_289_270_485_756e-4,
    -0.983_744_753_048_795_646e-4,
    0.158_088_703_224_912_494e-3,
    -0.210_264_441_724_104_883e-3,
    0.217_439_618_115_212_643e-3,
    -0.164_318_106_536_763_890e-3,
    0.844_182_239_838_527_433e-4,
    -0.261_908_384_015_814_087e-4,
    0.368_991_826_595_316_234e-5,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("ln_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma_unchecked(x))
}

fn ln_gamma_unchecked(x: f64) -> f64 {
    // Exact at the two zeros of ln Γ.
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let mut y = x;
    let tmp = x + LANCZOS_G;
    let tmp = (x + 0.5) * tmp.ln() - tmp;
    let mut ser = 0.999_999_999_999_997_092;
    for c in LANCZOS_COEF {
        y += 1.0;
        ser += c / y;
    }
    tmp + (2.506_628_274_631_000_5 * ser / x).ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma_unchecked(a) + ln_gamma_unchecked(b) - ln_gamma_unchecked(a + b)
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "incomplete beta requires a, b > 0 (a = {a}, b = {b})"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!(
            "incomplete beta requires x in [0, 1], got {x}"
        )));
    }
    inc_beta(a, b, x, 1.0 - x)
}

/// `I_x(a, b)` with `1 - x` supplied separately so callers can avoid the
/// cancellation in forming it.
fn inc_beta(a: f64, b: f64, x: f64, cx: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    if cx <= 0.0 {
        return Ok(1.0);
    }
    let ln_front = a * x.ln() + b * cx.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        let cf = beta_cf(a, b, x)?;
        Ok((ln_front.exp() * cf / a).clamp(0.0, 1.0))
    } else {
        let cf = beta_cf(b, a, cx)?;
        Ok((1.0 - ln_front.exp() * cf / b).clamp(0.0, 1.0))
    }
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() <= BETA_CF_EPS {
            return Ok(h);
        }
    }
    Err(Error::Convergence(format!(
        "incomplete beta continued fraction (a = {a}, b = {b}, x = {x})"
    )))
}

fn check_x(x: f64) -> Result<()> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("F argument must be >= 0, got {x}")));
    }
    Ok(())
}

/// Beta-scale argument and its complement for an F variate at `x`.
fn beta_args(x: f64, d1: f64, d2: f64) -> (f64, f64) {
    let denom = d1 * x + d2;
    (d1 * x / denom, d2 / denom)
}

/// CDF of the central F distribution.
pub fn f_cdf(x: f64, params: FDistParams) -> Result<f64> {
    params.require_central()?;
    check_x(x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let (d1, d2) = (f64::from(params.d1), f64::from(params.d2));
    let (y, cy) = beta_args(x, d1, d2);
    inc_beta(d1 / 2.0, d2 / 2.0, y, cy)
}

/// Quantile of the central F distribution.
///
/// Brackets geometrically around 1 and bisects until the bracket collapses
/// to a few ulps; the result must then sit within [`QUANTILE_CDF_TOL`] of
/// `prob` on the CDF scale.
pub fn f_quantile(prob: f64, params: FDistParams) -> Result<f64> {
    params.require_central()?;
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Domain(format!(
            "quantile probability must lie in (0, 1), got {prob}"
        )));
    }
    let cdf = |x: f64| f_cdf(x, params);

    let mut lo = 1.0;
    let mut hi = 1.0;
    if cdf(1.0)? < prob {
        while cdf(hi)? < prob {
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::Convergence(format!(
                    "could not bracket F quantile for p = {prob}"
                )));
            }
        }
    } else {
        while cdf(lo)? > prob {
            hi = lo;
            lo *= 0.5;
            if lo == 0.0 {
                return Ok(0.0);
            }
        }
    }

    for _ in 0..QUANTILE_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let f = cdf(mid)?;
        if f == prob {
            return Ok(mid);
        }
        if f < prob {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    let err = (cdf(mid)? - prob).abs();
    if err <= QUANTILE_CDF_TOL || hi - lo <= 4.0 * f64::EPSILON * hi {
        Ok(mid)
    } else {
        Err(Error::Convergence(format!(
            "F quantile bisection stopped with |F(x) - p| = {err:e}"
        )))
    }
}

/// CDF of the noncentral F distribution `F_{d1, d2; lambda}`.
///
/// `P = sum_j Pois(j; lambda/2) I_y(d1/2 + j, d2/2)` with
/// `y = d1 x / (d1 x + d2)`. The sum starts at the modal Poisson index and
/// walks both directions, updating the incomplete betas by the standard
/// one-step recurrence kept in log space.
pub fn ncf_cdf(x: f64, params: FDistParams) -> Result<f64> {
    params.validate()?;
    check_x(x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    if params.lambda == 0.0 {
        return f_cdf(x, params);
    }

    let (d1, d2) = (f64::from(params.d1), f64::from(params.d2));
    let a = d1 / 2.0;
    let b = d2 / 2.0;
    let (y, cy) = beta_args(x, d1, d2);
    let (ln_y, ln_cy) = (y.ln(), cy.ln());
    let mu = params.lambda / 2.0;
    let ln_mu = mu.ln();

    let k = mu.floor();
    let w_mode = (-mu + k * ln_mu - ln_gamma_unchecked(k + 1.0)).exp();
    let i_mode = inc_beta(a + k, b, y, cy)?;
    // ln of y^s (1-y)^b / (s B(s, b)) = I_y(s, b) - I_y(s + 1, b) at s = a + k
    let ln_t_mode = ln_gamma_unchecked(a + k + b) - ln_gamma_unchecked(a + k + 1.0)
        - ln_gamma_unchecked(b)
        + (a + k) * ln_y
        + b * ln_cy;

    let mut sum = w_mode * i_mode;

    // Upward from the mode.
    let (mut w, mut i_val, mut ln_t, mut j) = (w_mode, i_mode, ln_t_mode, k);
    let mut converged = false;
    for _ in 0..NCF_MAX_TERMS {
        let s = a + j;
        i_val = (i_val - ln_t.exp()).max(0.0);
        ln_t += ln_y + (s + b).ln() - (s + 1.0).ln();
        j += 1.0;
        w *= mu / j;
        let term = w * i_val;
        sum += term;
        let ratio = mu / (j + 1.0);
        let tail = if ratio < 1.0 {
            w * ratio / (1.0 - ratio)
        } else {
            f64::INFINITY
        };
        if term < NCF_SERIES_EPS && tail * i_val < NCF_SERIES_EPS {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence(format!(
            "noncentral F series exceeded {NCF_MAX_TERMS} terms (lambda = {})",
            params.lambda
        )));
    }

    // Downward from the mode.
    let (mut w, mut i_val, mut ln_t, mut j) = (w_mode, i_mode, ln_t_mode, k);
    let mut steps = 0usize;
    while j > 0.0 {
        let s = a + j;
        ln_t += s.ln() - ln_y - (s - 1.0 + b).ln();
        i_val = (i_val + ln_t.exp()).min(1.0);
        w *= j / mu;
        j -= 1.0;
        let term = w * i_val;
        sum += term;
        let ratio = j / mu;
        if ratio < 1.0 {
            let tail = w * ratio / (1.0 - ratio);
            if term < NCF_SERIES_EPS && tail < NCF_SERIES_EPS {
                break;
            }
        }
        steps += 1;
        if steps >= NCF_MAX_TERMS {
            return Err(Error::Convergence(format!(
                "noncentral F series exceeded {NCF_MAX_TERMS} terms (lambda = {})",
                params.lambda
            )));
        }
    }

    Ok(sum.clamp(0.0, 1.0))
}

/// Multiplier `p (n - q - 1) / (n - q - p)` turning an F quantile into a
/// Hotelling T² critical value.
pub fn hotelling_multiplier(p: usize, q: usize, n: usize) -> Result<f64> {
    if n <= p + q {
        return Err(Error::DegreesOfFreedom { n, p, q });
    }
    Ok((p * (n - q - 1)) as f64 / (n - q - p) as f64)
}

/// Critical value of the T²-scaled test at level `alpha0` with `p` tested
/// parameters, `q` nuisance parameters and `n` subjects.
pub fn hotelling_critical(p: usize, q: usize, n: usize, alpha0: f64) -> Result<f64> {
    let mult = hotelling_multiplier(p, q, n)?;
    if !(alpha0 > 0.0 && alpha0 < 1.0) {
        return Err(Error::Domain(format!("alpha0 must lie in (0, 1), got {alpha0}")));
    }
    let params = FDistParams::central(dof(p)?, dof(n - q - p)?)?;
    Ok(mult * f_quantile(1.0 - alpha0, params)?)
}

pub(crate) fn dof(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Domain(format!("degrees of freedom {v} too large")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn central(d1: u32, d2: u32) -> FDistParams {
        FDistParams::central(d1, d2).unwrap()
    }

    #[test]
    fn ln_gamma_known_values() {
        assert_eq!(ln_gamma(1.0).unwrap(), 0.0);
        assert!((ln_gamma(0.5).unwrap() - 0.5 * PI.ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0).unwrap() - 362_880f64.ln()).abs() < 1e-12);
        assert!(ln_gamma(0.0).is_err());
        assert!(ln_gamma(-1.5).is_err());
    }

    #[test]
    fn ln_gamma_recurrence() {
        for &x in &[1e-3, 0.1, 0.7, 1.5, 3.3, 17.0, 123.4, 5e3, 9e5] {
            let lhs = ln_gamma(x + 1.0).unwrap();
            let rhs = ln_gamma(x).unwrap() + f64::ln(x);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "x = {x}");
        }
    }

    #[test]
    fn inc_beta_boundaries_and_uniform() {
        assert_eq!(reg_inc_beta(2.0, 3.0, 0.0).unwrap(), 0.0);
        assert_eq!(reg_inc_beta(2.0, 3.0, 1.0).unwrap(), 1.0);
        assert!((reg_inc_beta(1.0, 1.0, 0.3).unwrap() - 0.3).abs() < 1e-15);
        // I_x(a, 1) = x^a
        assert!((reg_inc_beta(2.5, 1.0, 0.4).unwrap() - 0.4f64.powf(2.5)).abs() < 1e-14);
        assert!(reg_inc_beta(0.0, 1.0, 0.5).is_err());
        assert!(reg_inc_beta(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn inc_beta_symmetry() {
        for &(a, b, x) in &[(2.5, 7.0, 0.2), (30.0, 4.0, 0.9), (0.5, 0.5, 0.01)] {
            let lhs = reg_inc_beta(a, b, x).unwrap();
            let rhs = 1.0 - reg_inc_beta(b, a, 1.0 - x).unwrap();
            assert!((lhs - rhs).abs() < 1e-13);
        }
    }

    #[test]
    fn f_cdf_basic() {
        assert_eq!(f_cdf(0.0, central(3, 36)).unwrap(), 0.0);
        for k in [1, 2, 5, 17, 200] {
            assert!((f_cdf(1.0, central(k, k)).unwrap() - 0.5).abs() < 1e-13);
        }
        assert!(f_cdf(-1.0, central(1, 1)).is_err());
        assert!(f_cdf(1.0, FDistParams::noncentral(1, 1, 2.0).unwrap()).is_err());
        assert!(FDistParams::central(0, 3).is_err());
    }

    #[test]
    fn f_quantile_basic() {
        assert!((f_quantile(0.5, central(1, 1)).unwrap() - 1.0).abs() < 1e-9);
        assert!(f_quantile(0.0, central(1, 1)).is_err());
        assert!(f_quantile(1.0, central(1, 1)).is_err());
        for p in (1..=99).map(|i| i as f64 / 100.0) {
            for (d1, d2) in [(1, 1), (3, 36), (3, 6), (10, 2)] {
                let q = f_quantile(p, central(d1, d2)).unwrap();
                let back = f_cdf(q, central(d1, d2)).unwrap();
                assert!((back - p).abs() < 1e-8, "p = {p}, d = ({d1}, {d2})");
            }
        }
    }

    #[test]
    fn ncf_reduces_to_central() {
        for &x in &[0.1, 0.5, 1.0, 2.0, 2.866, 7.5] {
            let a = ncf_cdf(x, FDistParams::noncentral(3, 36, 0.0).unwrap()).unwrap();
            let b = f_cdf(x, central(3, 36)).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(ncf_cdf(0.0, FDistParams::noncentral(3, 36, 13.0).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn ncf_small_lambda_continuity() {
        let c = f_cdf(2.0, central(3, 36)).unwrap();
        let nc = ncf_cdf(2.0, FDistParams::noncentral(3, 36, 1e-9).unwrap()).unwrap();
        assert!((c - nc).abs() < 1e-8);
    }

    #[test]
    fn ncf_large_lambda_is_finite() {
        let v = ncf_cdf(900.0, FDistParams::noncentral(3, 36, 2500.0).unwrap()).unwrap();
        assert!(v > 0.0 && v < 1.0);
        let v = ncf_cdf(3.0, FDistParams::noncentral(3, 36, 1e4).unwrap()).unwrap();
        assert!(v < 1e-10);
    }

    #[test]
    fn hotelling_multiplier_and_errors() {
        assert!((hotelling_multiplier(3, 3, 42).unwrap() - 19.0 / 6.0).abs() < 1e-15);
        assert_eq!(
            hotelling_critical(3, 3, 6, 0.05),
            Err(Error::DegreesOfFreedom { n: 6, p: 3, q: 3 })
        );
        let crit = hotelling_critical(3, 3, 42, 0.05).unwrap();
        let expect = 19.0 / 6.0 * f_quantile(0.95, central(3, 36)).unwrap();
        assert!((crit - expect).abs() < 1e-12);
    }
}
