//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls into the library's numerical kernels: the F CDF is
//! integrated by adaptive Gauss-Kronrod quadrature, the noncentral F CDF is
//! estimated by direct sampling, and estimator quantities are evaluated in
//! exact rational arithmetic with dense matrices.

#![allow(dead_code, clippy::needless_range_loop, clippy::excessive_precision)]

use mrtss::dataset::{SubjectRecord, TrialDataset};
use mrtss::design::FeaturePaths;
use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

// ---------------------------------------------------------------------------
// Quadrature

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = G7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        kronrod += GK_WEIGHTS[i] * s;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive G7-K15 quadrature of `f` over `[a, b]`; each accepted panel has
/// Gauss-Kronrod error estimate below `tol` (the estimate is pessimistic
/// for smooth integrands, the Kronrod value is far more accurate). The range
/// is first cut into uniform panels so narrow peaks cannot slip between the
/// nodes of a single coarse panel.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth >= 30 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, tol, depth + 1) + rec(f, m, b, tol, depth + 1)
    }
    const PANELS: usize = 64;
    let h = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|i| rec(f, a + i as f64 * h, a + (i + 1) as f64 * h, tol, 0))
        .sum()
}

/// `int_0^y t^(a-1) (1-t)^(b-1) dt` for `y <= 1/2`, via `t = s^2` so that
/// the `t = 0` singularity becomes integrable-smooth.
fn lower_beta_integral(a: f64, b: f64, y: f64) -> f64 {
    let f = |s: f64| 2.0 * s.powf(2.0 * a - 1.0) * (1.0 - s * s).powf(b - 1.0);
    integrate(&f, 0.0, y.sqrt(), 1e-14)
}

/// Regularized incomplete beta by quadrature; the complete integral is
/// formed the same way, so no gamma-function code is involved.
pub fn inc_beta_quadrature(a: f64, b: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y >= 1.0 {
        return 1.0;
    }
    let total = lower_beta_integral(a, b, 0.5) + lower_beta_integral(b, a, 0.5);
    if y <= 0.5 {
        lower_beta_integral(a, b, y) / total
    } else {
        1.0 - lower_beta_integral(b, a, 1.0 - y) / total
    }
}

pub fn f_cdf_quadrature(x: f64, d1: u32, d2: u32) -> f64 {
    let (a, b) = (d1 as f64 / 2.0, d2 as f64 / 2.0);
    let y = d1 as f64 * x / (d1 as f64 * x + d2 as f64);
    inc_beta_quadrature(a, b, y)
}

// ---------------------------------------------------------------------------
// Monte Carlo

/// Draws `draws` noncentral F variates `(chi'^2_{d1}(lambda)/d1) / (chi^2_{d2}/d2)`
/// and returns, for each `x`, the empirical CDF and its standard error.
pub fn ncf_cdf_monte_carlo(
    xs: &[f64],
    d1: u32,
    d2: u32,
    lambda: f64,
    draws: usize,
    seed: u64,
) -> Vec<(f64, f64)> {
    const CHUNKS: usize = 64;
    let per = draws / CHUNKS;
    let shift = lambda.sqrt();
    let counts: Vec<Vec<usize>> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let den = ChiSquared::new(d2 as f64).unwrap();
            let rest = (d1 > 1).then(|| ChiSquared::new((d1 - 1) as f64).unwrap());
            let mut hits = vec![0usize; xs.len()];
            for _ in 0..per {
                let z: f64 = StandardNormal.sample(&mut rng);
                let mut num = (z + shift).powi(2);
                if let Some(r) = &rest {
                    num += r.sample(&mut rng);
                }
                let f = (num / d1 as f64) / (den.sample(&mut rng) / d2 as f64);
                for (h, &x) in hits.iter_mut().zip(xs) {
                    if f <= x {
                        *h += 1;
                    }
                }
            }
            hits
        })
        .collect();
    let n = (per * CHUNKS) as f64;
    (0..xs.len())
        .map(|i| {
            let k: usize = counts.iter().map(|c| c[i]).sum();
            let p = k as f64 / n;
            (p, (p * (1.0 - p) / n).sqrt())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Exact rational linear algebra

pub type Rat = BigRational;
pub type RMat = Vec<Vec<Rat>>;

pub fn rat(v: f64) -> Rat {
    BigRational::from_float(v).expect("finite")
}

pub fn to_f64(r: &Rat) -> f64 {
    r.to_f64().expect("representable")
}

pub fn zeros(r: usize, c: usize) -> RMat {
    vec![vec![Rat::zero(); c]; r]
}

pub fn identity(n: usize) -> RMat {
    let mut m = zeros(n, n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = Rat::one();
    }
    m
}

pub fn matmul(a: &RMat, b: &RMat) -> RMat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, m);
    for i in 0..n {
        for l in 0..k {
            if a[i][l].is_zero() {
                continue;
            }
            for j in 0..m {
                out[i][j] += &a[i][l] * &b[l][j];
            }
        }
    }
    out
}

pub fn transpose(a: &RMat) -> RMat {
    let (n, m) = (a.len(), a[0].len());
    (0..m).map(|j| (0..n).map(|i| a[i][j].clone()).collect()).collect()
}

pub fn add(a: &RMat, b: &RMat) -> RMat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect()
}

pub fn sub(a: &RMat, b: &RMat) -> RMat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect())
        .collect()
}

pub fn scale(a: &RMat, s: &Rat) -> RMat {
    a.iter().map(|r| r.iter().map(|v| v * s).collect()).collect()
}

/// Exact inverse by Gauss-Jordan elimination; `None` when singular.
pub fn inverse(a: &RMat) -> Option<RMat> {
    let n = a.len();
    let mut m: RMat = a
        .iter()
        .zip(identity(n))
        .map(|(r, e)| r.iter().cloned().chain(e).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, pivot);
        let inv = Rat::one() / &m[col][col];
        for v in m[col].iter_mut() {
            *v *= &inv;
        }
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let factor = m[r][col].clone();
                for c in 0..2 * n {
                    let delta = &factor * &m[col][c];
                    m[r][c] -= delta;
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

pub fn lower_right(a: &RMat, p: usize) -> RMat {
    let k = a.len();
    a[k - p..].iter().map(|r| r[k - p..].to_vec()).collect()
}

/// Dense per-subject design `X_i` (T x (q + p)).
pub fn subject_design(rec: &SubjectRecord, features: &FeaturePaths) -> RMat {
    let (p, q) = (features.p(), features.q());
    (0..rec.len())
        .map(|t| {
            let mut row = vec![Rat::zero(); q + p];
            if rec.avail[t] {
                let c = rat(if rec.action[t] { 1.0 } else { 0.0 }) - rat(rec.prob[t]);
                for j in 0..q {
                    row[j] = rat(features.b()[(t, j)]);
                }
                for j in 0..p {
                    row[q + j] = &c * rat(features.z()[(t, j)]);
                }
            }
            row
        })
        .collect()
}

pub fn subject_outcomes(rec: &SubjectRecord) -> RMat {
    (0..rec.len())
        .map(|t| vec![if rec.avail[t] { rat(rec.outcome[t].unwrap()) } else { Rat::zero() }])
        .collect()
}

pub struct OracleFit {
    pub theta: Vec<Rat>,
    pub residuals: Vec<RMat>,
}

pub fn oracle_fit(ds: &TrialDataset, features: &FeaturePaths) -> Option<OracleFit> {
    let k = features.p() + features.q();
    let mut gram = zeros(k, k);
    let mut rhs = zeros(k, 1);
    let designs: Vec<RMat> = ds.subjects().iter().map(|r| subject_design(r, features)).collect();
    let ys: Vec<RMat> = ds.subjects().iter().map(subject_outcomes).collect();
    for (x, y) in designs.iter().zip(&ys) {
        let xt = transpose(x);
        gram = add(&gram, &matmul(&xt, x));
        rhs = add(&rhs, &matmul(&xt, y));
    }
    let theta = matmul(&inverse(&gram)?, &rhs);
    let residuals = designs
        .iter()
        .zip(&ys)
        .map(|(x, y)| sub(y, &matmul(x, &theta)))
        .collect();
    Some(OracleFit {
        theta: theta.into_iter().map(|r| r[0].clone()).collect(),
        residuals,
    })
}

/// `Q^-1 W Q^-1` with `Q^-1` the lower-right block of `(avg X'X)^-1` and `W`
/// the lower-right block of `avg X'(I - H)^-1 e e'(I - H)^-1 X`; `H = 0`
/// when unadjusted, else `H = X (sum X'X)^-1 X'` (or the averaged-Gram
/// version). Every inverse is a dense exact inverse.
pub fn oracle_sandwich(
    ds: &TrialDataset,
    features: &FeaturePaths,
    fit: &OracleFit,
    adjusted: bool,
    averaged: bool,
) -> Option<RMat> {
    let (p, q) = (features.p(), features.q());
    let k = p + q;
    let n = Rat::from_integer(BigInt::from(ds.len()));
    let inv_n = Rat::one() / &n;
    let designs: Vec<RMat> = ds.subjects().iter().map(|r| subject_design(r, features)).collect();
    let mut gram = zeros(k, k);
    for x in &designs {
        gram = add(&gram, &matmul(&transpose(x), x));
    }
    let g_avg_inv = inverse(&scale(&gram, &inv_n))?;
    let hat_inner = if averaged { g_avg_inv.clone() } else { inverse(&gram)? };
    let mut meat = zeros(k, k);
    for (x, e) in designs.iter().zip(&fit.residuals) {
        let t = x.len();
        let xt = transpose(x);
        let v = if adjusted {
            let h = matmul(&matmul(x, &hat_inner), &xt);
            let ih_inv = inverse(&sub(&identity(t), &h))?;
            matmul(&xt, &matmul(&ih_inv, e))
        } else {
            matmul(&xt, e)
        };
        meat = add(&meat, &matmul(&v, &transpose(&v)));
    }
    let meat = scale(&meat, &inv_n);
    let q_inv = lower_right(&g_avg_inv, p);
    Some(matmul(&matmul(&q_inv, &lower_right(&meat, p)), &q_inv))
}

pub fn rmat_to_f64(a: &RMat) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), a[0].len(), |i, j| to_f64(&a[i][j]))
}

pub fn max_abs(a: &RMat) -> Rat {
    a.iter().flatten().map(|v| v.abs()).max().unwrap_or_else(Rat::zero)
}

// ---------------------------------------------------------------------------
// Random tiny instances

pub struct TinyInstance {
    pub dataset: TrialDataset,
    pub features: FeaturePaths,
}

/// A random trial with `n` subjects, `t` decision times and `p`/`q` random
/// feature columns (first column of each is an intercept).
pub fn tiny_instance(rng: &mut impl Rng, n: usize, t: usize, p: usize, q: usize) -> TinyInstance {
    let col = |rng: &mut dyn rand::RngCore, j: usize| -> f64 {
        if j == 0 {
            1.0
        } else {
            rng.random_range(-1.0..1.0)
        }
    };
    let z = DMatrix::from_fn(t, p, |_, j| col(rng, j));
    let b = DMatrix::from_fn(t, q, |_, j| col(rng, j));
    let rho: Vec<f64> = (0..t).map(|_| rng.random_range(0.2..0.8)).collect();
    let subjects = (0..n)
        .map(|_| {
            let avail: Vec<bool> = (0..t).map(|_| rng.random_bool(0.8)).collect();
            let action: Vec<bool> = rho.iter().map(|&r| rng.random_bool(r)).collect();
            let outcome = avail
                .iter()
                .map(|&a| {
                    let y: f64 = StandardNormal.sample(rng);
                    a.then_some(y)
                })
                .collect();
            SubjectRecord::new(avail, action, rho.clone(), outcome).unwrap()
        })
        .collect();
    TinyInstance {
        dataset: TrialDataset::new(subjects).unwrap(),
        features: FeaturePaths::new(z, b).unwrap(),
    }
}

/// Largest entrywise difference relative to the oracle's largest entry.
pub fn rel_err(got: &DMatrix<f64>, want: &RMat) -> f64 {
    let scale_ = to_f64(&max_abs(want)).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for i in 0..want.len() {
        for j in 0..want[0].len() {
            let d = (rat(got[(i, j)]) - &want[i][j]).abs();
            worst = worst.max(to_f64(&d) / scale_);
        }
    }
    worst
}
