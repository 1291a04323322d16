//! Centered working-model fit, sandwich variance and the test of no effect.
//!
//! Row `t` of subject `i`'s design is `x_t = (I_t B_t', I_t (A_t - rho_t) Z_t')`,
//! so unavailable rows vanish from every sum. With `G = avg_i X_i'X_i` and
//! `M = avg_i v_i v_i'`, the sandwich is `Q^-1 W Q^-1` where `Q^-1` is the
//! lower-right `p x p` block of `G^-1` and `W` that of `M`. The meat uses
//! `v_i = X_i' e_i` (unadjusted) or `v_i = X_i' (I - H_i)^-1 e_i` (hat-matrix
//! adjusted).
//!
//! The adjusted meat never forms a `T x T` matrix: with `H_i = X_i K X_i'`,
//! `X_i'(I - H_i)^-1 = (I_k - S_i K)^-1 X_i'` for `S_i = X_i'X_i`, and the
//! spectrum of `I - H_i` is `{1} U {1 - mu}` for the eigenvalues `mu` of
//! `L' S_i L` (`K = L L'`), which gives its condition number exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{SubjectRecord, TrialDataset};
use crate::design::FeaturePaths;
use crate::distributions::{dof, f_cdf, hotelling_critical, hotelling_multiplier, FDistParams};
use crate::error::{Error, Result};
use crate::linalg::{lower_right, spd_factor, spd_inverse, symmetrize};
use crate::simulate::GenerativeModel;

/// Largest tolerated 2-norm condition number of a subject's `I - H`.
pub const MAX_HAT_CONDITION: f64 = 1e12;

/// How the Gram matrix inside the hat matrix is normalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HatScaling {
    /// `H_i = X_i (sum_j X_j'X_j)^-1 X_i'` (Mancl-DeRouen leverage).
    #[default]
    Summed,
    /// `H_i = X_i (avg_j X_j'X_j)^-1 X_i'`, i.e. `N` times the summed form.
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adjustment {
    None,
    HatMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub alpha0: f64,
    pub adjusted: bool,
    pub hat_scaling: HatScaling,
}

impl TestOptions {
    pub fn new(alpha0: f64, adjusted: bool) -> Self {
        Self {
            alpha0,
            adjusted,
            hat_scaling: HatScaling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub alpha_hat: DVector<f64>,
    pub beta_hat: DVector<f64>,
    /// Per-subject residuals; zero at unavailable times.
    pub residuals: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub n: usize,
    pub beta_hat: Vec<f64>,
    /// Row-major `p x p`.
    pub sigma_beta_hat: Vec<Vec<f64>>,
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub adjustment: Adjustment,
    pub hat_scaling: Option<HatScaling>,
    pub alpha0: f64,
}

fn check_shapes(dataset: &TrialDataset, features: &FeaturePaths) -> Result<()> {
    features.check_len(dataset.decisions())
}

/// Writes `x_t` for row `t` of `rec` into `buf`; returns false when the row
/// is unavailable (and leaves `buf` untouched).
fn design_row(features: &FeaturePaths, rec: &SubjectRecord, t: usize, buf: &mut [f64]) -> bool {
    if !rec.avail[t] {
        return false;
    }
    let q = features.q();
    let centered = f64::from(u8::from(rec.action[t])) - rec.prob[t];
    for (j, slot) in buf[..q].iter_mut().enumerate() {
        *slot = features.b()[(t, j)];
    }
    for (j, slot) in buf[q..].iter_mut().enumerate() {
        *slot = centered * features.z()[(t, j)];
    }
    true
}

fn add_outer(acc: &mut DMatrix<f64>, x: &[f64], w: f64) {
    let k = x.len();
    for c in 0..k {
        let xc = w * x[c];
        for r in 0..k {
            acc[(r, c)] += x[r] * xc;
        }
    }
}

/// `S_i = X_i'X_i` for one subject.
fn subject_gram(features: &FeaturePaths, rec: &SubjectRecord, buf: &mut [f64]) -> DMatrix<f64> {
    let k = buf.len();
    let mut s = DMatrix::zeros(k, k);
    for t in 0..rec.len() {
        if design_row(features, rec, t, buf) {
            add_outer(&mut s, buf, 1.0);
        }
    }
    s
}

/// Pooled least squares for `Y = B'alpha + (A - rho) Z'beta`.
pub fn fit_working_model(dataset: &TrialDataset, features: &FeaturePaths) -> Result<ModelFit> {
    check_shapes(dataset, features)?;
    let (p, q) = (features.p(), features.q());
    let k = p + q;
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    let mut x = vec![0.0; k];
    for rec in dataset.subjects() {
        for t in 0..rec.len() {
            if design_row(features, rec, t, &mut x) {
                add_outer(&mut gram, &x, 1.0);
                let y = rec.outcome[t].expect("validated: available rows carry outcomes");
                for (r, xr) in x.iter().enumerate() {
                    rhs[r] += xr * y;
                }
            }
        }
    }
    let theta = spd_factor(&gram, "pooled design matrix")?.solve(&rhs);

    let residuals = dataset
        .subjects()
        .iter()
        .map(|rec| {
            (0..rec.len())
                .map(|t| {
                    if design_row(features, rec, t, &mut x) {
                        let fitted: f64 = x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
                        rec.outcome[t].expect("validated") - fitted
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    Ok(ModelFit {
        alpha_hat: theta.rows(0, q).into_owned(),
        beta_hat: theta.rows(q, p).into_owned(),
        residuals,
    })
}

/// Sandwich variance of `beta_hat` with the default hat scaling.
pub fn sandwich_variance(
    dataset: &TrialDataset,
    fit: &ModelFit,
    features: &FeaturePaths,
    adjusted: bool,
) -> Result<DMatrix<f64>> {
    sandwich_variance_with(dataset, fit, features, adjusted, HatScaling::default())
}

pub fn sandwich_variance_with(
    dataset: &TrialDataset,
    fit: &ModelFit,
    features: &FeaturePaths,
    adjusted: bool,
    scaling: HatScaling,
) -> Result<DMatrix<f64>> {
    check_shapes(dataset, features)?;
    let (p, q) = (features.p(), features.q());
    let k = p + q;
    if fit.residuals.len() != dataset.len()
        || fit.alpha_hat.len() != q
        || fit.beta_hat.len() != p
    {
        return Err(Error::Dimension("fit does not match dataset/features".into()));
    }
    let n = dataset.len() as f64;
    let mut x = vec![0.0; k];

    let grams: Vec<DMatrix<f64>> = dataset
        .subjects()
        .iter()
        .map(|rec| subject_gram(features, rec, &mut x))
        .collect();
    let mut total = DMatrix::zeros(k, k);
    for s in &grams {
        total += s;
    }
    let g_avg = &total / n;
    let g_inv = spd_inverse(&g_avg, "averaged Gram matrix")?;

    // Hat matrix H_i = X_i K X_i'.
    let hat = if adjusted {
        let k_mat = match scaling {
            HatScaling::Summed => &g_inv / n,
            HatScaling::Averaged => g_inv.clone(),
        };
        let l = spd_factor(&k_mat, "hat-matrix Gram inverse")?.l();
        Some((k_mat, l))
    } else {
        None
    };

    let mut meat = DMatrix::zeros(k, k);
    for (i, (rec, s)) in dataset.subjects().iter().zip(&grams).enumerate() {
        let mut u = DVector::zeros(k);
        for t in 0..rec.len() {
            if design_row(features, rec, t, &mut x) {
                let e = fit.residuals[i][t];
                for (r, xr) in x.iter().enumerate() {
                    u[r] += xr * e;
                }
            }
        }
        let v = match &hat {
            None => u,
            Some((k_mat, l)) => {
                let cond = hat_condition(s, l, rec.len());
                if !(cond <= MAX_HAT_CONDITION) {
                    return Err(Error::IllConditioned { subject: i + 1, cond });
                }
                let lhs = DMatrix::identity(k, k) - s * k_mat;
                lhs.lu().solve(&u).ok_or_else(|| {
                    Error::Singular(format!("I - H is singular for subject {}", i + 1))
                })?
            }
        };
        add_outer(&mut meat, v.as_slice(), 1.0 / n);
    }

    let q_inv = lower_right(&g_inv, p);
    let w = lower_right(&meat, p);
    Ok(symmetrize(&q_inv * w * &q_inv))
}

/// 2-norm condition number of `I - X K X'` for a subject with `rows` rows.
fn hat_condition(s: &DMatrix<f64>, l: &DMatrix<f64>, rows: usize) -> f64 {
    let k = s.nrows();
    let inner = symmetrize(l.transpose() * s * l);
    let mut mu: Vec<f64> = inner.symmetric_eigenvalues().iter().copied().collect();
    mu.sort_by(|a, b| b.total_cmp(a));
    // The nonzero leverage eigenvalues are among the top min(rows, k); the
    // remaining rows of I - H have eigenvalue exactly 1.
    let mut eig: Vec<f64> = mu.iter().take(rows.min(k)).map(|m| (1.0 - m).abs()).collect();
    if rows > k {
        eig.push(1.0);
    }
    let max = eig.iter().copied().fold(0.0, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Test of `beta = 0` at level `alpha0`, default hat scaling.
pub fn hypothesis_test(
    dataset: &TrialDataset,
    features: &FeaturePaths,
    alpha0: f64,
    adjusted: bool,
) -> Result<TestResult> {
    hypothesis_test_with(dataset, features, &TestOptions::new(alpha0, adjusted))
}

pub fn hypothesis_test_with(
    dataset: &TrialDataset,
    features: &FeaturePaths,
    opts: &TestOptions,
) -> Result<TestResult> {
    let (p, q, n) = (features.p(), features.q(), dataset.len());
    if n <= p + q {
        return Err(Error::DegreesOfFreedom { n, p, q });
    }
    let critical_value = hotelling_critical(p, q, n, opts.alpha0)?;
    let fit = fit_working_model(dataset, features)?;
    let sigma = sandwich_variance_with(dataset, &fit, features, opts.adjusted, opts.hat_scaling)?;
    let chol = spd_factor(&sigma, "sandwich variance")?;
    let solved = chol.solve(&fit.beta_hat);
    let statistic = n as f64 * fit.beta_hat.dot(&solved);

    let mult = hotelling_multiplier(p, q, n)?;
    let params = FDistParams::central(dof(p)?, dof(n - q - p)?)?;
    let p_value = (1.0 - f_cdf(statistic / mult, params)?).clamp(0.0, 1.0);

    Ok(TestResult {
        n,
        beta_hat: fit.beta_hat.iter().copied().collect(),
        sigma_beta_hat: sigma
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
        statistic,
        critical_value,
        p_value,
        reject: statistic > critical_value,
        adjustment: if opts.adjusted {
            Adjustment::HatMatrix
        } else {
            Adjustment::None
        },
        hat_scaling: opts.adjusted.then_some(opts.hat_scaling),
        alpha0: opts.alpha0,
    })
}

/// Large-sample limits of `(alpha_hat, beta_hat)` under a generative model.
pub fn asymptotic_targets(
    model: &GenerativeModel,
    features: &FeaturePaths,
) -> Result<(DVector<f64>, DVector<f64>)> {
    asymptotic_targets_from_paths(
        &model.available_mean_path(),
        &model.effect_path(),
        model.tau().values(),
        model.design().rho(),
        features,
    )
}

/// `alpha~ = (sum tau B B')^-1 sum tau B m(t)` and
/// `beta~ = (sum tau rho(1-rho) Z Z')^-1 sum tau rho(1-rho) Z beta(t)`, where
/// `m(t) = E[Y | I = 1]` and `beta(t)` is the proximal effect.
pub fn asymptotic_targets_from_paths(
    mean: &[f64],
    effect: &[f64],
    tau: &[f64],
    rho: &[f64],
    features: &FeaturePaths,
) -> Result<(DVector<f64>, DVector<f64>)> {
    for len in [mean.len(), effect.len(), tau.len(), rho.len()] {
        features.check_len(len)?;
    }
    let solve = |x: &DMatrix<f64>, w: &[f64], target: &[f64], what: &str| {
        let cols = x.ncols();
        let mut gram = DMatrix::zeros(cols, cols);
        let mut rhs = DVector::zeros(cols);
        for t in 0..x.nrows() {
            let row: Vec<f64> = x.row(t).iter().copied().collect();
            add_outer(&mut gram, &row, w[t]);
            for c in 0..cols {
                rhs[c] += w[t] * row[c] * target[t];
            }
        }
        Ok::<_, Error>(spd_factor(&gram, what)?.solve(&rhs))
    };
    let w_alpha: Vec<f64> = tau.to_vec();
    let w_beta: Vec<f64> = tau.iter().zip(rho).map(|(t, r)| t * r * (1.0 - r)).collect();
    let alpha = solve(features.b(), &w_alpha, mean, "availability-weighted B Gram")?;
    let beta = solve(features.z(), &w_beta, effect, "Q matrix")?;
    Ok((alpha, beta))
}
