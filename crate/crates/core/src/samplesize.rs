//! Noncentrality, power and the minimal sample size.
//!
//! The test rejects when `N beta' Sigma^-1 beta` exceeds the Hotelling
//! critical value `p(N-q-1)/(N-q-p) * F^-1_{p,N-q-p}(1 - alpha0)`. Under the
//! working assumptions the statistic divided by the same multiplier is
//! approximately `F_{p, N-q-p; c_N}` with `c_N = N d'Qd`, so the multiplier
//! cancels and power is `1 - F_{p,N-q-p;c_N}(F^-1_{p,N-q-p}(1 - alpha0))`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{weighted_gram, AvailabilityPattern, EffectPath, FeaturePaths, TrialDesign};
use crate::distributions::{dof, f_quantile, ncf_cdf, FDistParams};
use crate::error::{Error, Result};
use crate::linalg::SINGULAR_REL_TOL;

/// Default upper limit for the sample-size search.
pub const DEFAULT_N_CAP: usize = 1_000_000;

/// Everything the sizing formula needs.
#[derive(Debug, Clone)]
pub struct SizingInputs {
    pub design: TrialDesign,
    pub features: FeaturePaths,
    pub tau: AvailabilityPattern,
    pub effect: EffectPath,
    pub alpha0: f64,
    pub power_target: f64,
}

impl SizingInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0 < 0.5) {
            return Err(Error::Domain(format!(
                "alpha0 must lie in (0, 0.5), got {}",
                self.alpha0
            )));
        }
        if !(self.power_target > self.alpha0 && self.power_target < 1.0) {
            return Err(Error::Domain(format!(
                "power target must lie in (alpha0, 1), got {}",
                self.power_target
            )));
        }
        let total = self.design.total_decisions();
        self.features.check_len(total)?;
        self.features.check_len(self.tau.values().len())?;
        effect_coefficients(&self.effect, self.features.p())?;
        Ok(())
    }

    fn p(&self) -> usize {
        self.features.p()
    }

    fn q(&self) -> usize {
        self.features.q()
    }

    pub fn q_matrix(&self) -> Result<DMatrix<f64>> {
        compute_q_matrix(&self.tau, self.design.rho(), &self.features)
    }
}

/// Minimal sample size with its certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeResult {
    pub n: usize,
    pub c_n: f64,
    pub achieved_power: f64,
    /// Power one subject short; `None` when `n - 1` leaves no denominator
    /// degrees of freedom.
    pub power_at_n_minus_1: Option<f64>,
}

/// `Q = sum_t tau_t rho_t (1 - rho_t) Z_t Z_t'`.
pub fn compute_q_matrix(
    tau: &AvailabilityPattern,
    rho: &[f64],
    features: &FeaturePaths,
) -> Result<DMatrix<f64>> {
    features.check_len(tau.values().len())?;
    features.check_len(rho.len())?;
    let weights: Vec<f64> = tau
        .values()
        .iter()
        .zip(rho)
        .map(|(tau, rho)| tau * rho * (1.0 - rho))
        .collect();
    let q = weighted_gram(features.z(), &weights);
    let trace = q.trace();
    let min_eig = q.clone().symmetric_eigenvalues().min();
    if !(trace > 0.0) || min_eig <= SINGULAR_REL_TOL * trace {
        return Err(Error::NotPositiveDefinite(format!(
            "Q has smallest eigenvalue {min_eig:e} (trace {trace:e})"
        )));
    }
    Ok(q)
}

fn effect_coefficients(effect: &EffectPath, p: usize) -> Result<DVector<f64>> {
    let coef = effect.coefficients().ok_or_else(|| {
        Error::Dimension("sizing needs a parametric effect; project explicit paths first".into())
    })?;
    if coef.len() != p {
        return Err(Error::Dimension(format!(
            "effect has {} coefficients, Z has {p} columns",
            coef.len()
        )));
    }
    Ok(DVector::from_column_slice(&coef))
}

/// `c_N = n d' Q d`.
pub fn noncentrality(n: usize, effect: &EffectPath, q_matrix: &DMatrix<f64>) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    let d = effect_coefficients(effect, q_matrix.nrows())?;
    let quad = (d.transpose() * q_matrix * &d)[(0, 0)];
    Ok(n as f64 * quad.max(0.0))
}

/// Approximate power of the level-`alpha0` test with `n` subjects.
pub fn power(n: usize, inputs: &SizingInputs) -> Result<f64> {
    inputs.validate()?;
    let q_matrix = inputs.q_matrix()?;
    power_with_q(n, inputs, &q_matrix)
}

fn power_with_q(n: usize, inputs: &SizingInputs, q_matrix: &DMatrix<f64>) -> Result<f64> {
    let (p, q) = (inputs.p(), inputs.q());
    if n <= p + q {
        return Err(Error::DegreesOfFreedom { n, p, q });
    }
    let (d1, d2) = (dof(p)?, dof(n - q - p)?);
    let crit = f_quantile(1.0 - inputs.alpha0, FDistParams::central(d1, d2)?)?;
    let c_n = noncentrality(n, &inputs.effect, q_matrix)?;
    let accept = ncf_cdf(crit, FDistParams::noncentral(d1, d2, c_n)?)?;
    Ok(1.0 - accept)
}

/// Smallest `n > p + q` whose power reaches the target.
pub fn solve_sample_size(inputs: &SizingInputs) -> Result<SampleSizeResult> {
    solve_sample_size_with_cap(inputs, DEFAULT_N_CAP)
}

pub fn solve_sample_size_with_cap(inputs: &SizingInputs, cap: usize) -> Result<SampleSizeResult> {
    inputs.validate()?;
    let q_matrix = inputs.q_matrix()?;
    let target = inputs.power_target;
    if inputs.effect.is_zero() || noncentrality(1, &inputs.effect, &q_matrix)? == 0.0 {
        return Err(Error::NoSolution("null effect".into()));
    }
    let pw = |n: usize| power_with_q(n, inputs, &q_matrix);

    let floor = inputs.p() + inputs.q() + 1;
    if cap < floor {
        return Err(Error::NoSolution(format!("cap {cap} is below p + q + 1 = {floor}")));
    }

    // Geometric bracket: power(lo) < target <= power(hi).
    let mut lo = floor - 1;
    let mut hi = floor;
    loop {
        if pw(hi)? >= target {
            break;
        }
        if hi == cap {
            return Err(Error::NoSolution(format!(
                "power at the cap n = {cap} is below {target}"
            )));
        }
        lo = hi;
        hi = (hi * 2).min(cap);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if pw(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    // Walk down in case power is not monotone just below the bracket.
    let mut n = hi;
    while n > floor && pw(n - 1)? >= target {
        n -= 1;
    }
    let achieved_power = pw(n)?;
    let power_at_n_minus_1 = if n > floor { Some(pw(n - 1)?) } else { None };
    Ok(SampleSizeResult {
        n,
        c_n: noncentrality(n, &inputs.effect, &q_matrix)?,
        achieved_power,
        power_at_n_minus_1,
    })
}
