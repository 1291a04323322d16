//! Error processes for the outcome model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Order of the equal-weight autoregression `e_t = (phi/5) sum_{j<=5} e_{t-j} + v_t`.
pub const AR5_ORDER: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ErrorFamily {
    IidNormal,
    /// Student t with 3 degrees of freedom.
    IidT3Scaled,
    /// `Exp(1) - 1`.
    IidExpCentered,
    Ar1 { phi: f64 },
    Ar5 { phi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorProcess {
    pub family: ErrorFamily,
    /// Scale every family to unit marginal variance.
    #[serde(default = "default_true")]
    pub unit_variance: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ErrorProcess {
    fn default() -> Self {
        Self::new(ErrorFamily::IidNormal)
    }
}

impl ErrorProcess {
    pub fn new(family: ErrorFamily) -> Self {
        Self {
            family,
            unit_variance: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler().map(|_| ())
    }

    /// Marginal variance of each `e_t`.
    pub fn marginal_variance(&self) -> Result<f64> {
        Ok(match self.sampler()? {
            Sampler::Iid { scale, kind } => {
                let raw = match kind {
                    IidKind::T3 => 3.0,
                    IidKind::Normal | IidKind::Exp => 1.0,
                };
                raw * scale * scale
            }
            Sampler::Ar(ar) => ar.marginal,
        })
    }

    pub fn sampler(&self) -> Result<Sampler> {
        let unit = self.unit_variance;
        Ok(match self.family {
            ErrorFamily::IidNormal => Sampler::Iid { kind: IidKind::Normal, scale: 1.0 },
            ErrorFamily::IidT3Scaled => Sampler::Iid {
                kind: IidKind::T3,
                scale: if unit { (1.0f64 / 3.0).sqrt() } else { 1.0 },
            },
            ErrorFamily::IidExpCentered => Sampler::Iid { kind: IidKind::Exp, scale: 1.0 },
            ErrorFamily::Ar1 { phi } => Sampler::Ar(ArSampler::new(vec![phi], unit)?),
            ErrorFamily::Ar5 { phi } => {
                Sampler::Ar(ArSampler::new(vec![phi / AR5_ORDER as f64; AR5_ORDER], unit)?)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IidKind {
    Normal,
    T3,
    Exp,
}

/// A ready-to-draw error process.
#[derive(Debug, Clone)]
pub enum Sampler {
    Iid { kind: IidKind, scale: f64 },
    Ar(ArSampler),
}

impl Sampler {
    /// Draws `e_1, ..., e_len`.
    pub fn path<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        match self {
            Sampler::Iid { kind, scale } => {
                let t3 = StudentT::new(3.0).expect("3 degrees of freedom");
                (0..len)
                    .map(|_| {
                        let raw: f64 = match kind {
                            IidKind::Normal => StandardNormal.sample(rng),
                            IidKind::T3 => t3.sample(rng),
                            IidKind::Exp => {
                                let e: f64 = Exp1.sample(rng);
                                e - 1.0
                            }
                        };
                        scale * raw
                    })
                    .collect()
            }
            Sampler::Ar(ar) => ar.path(len, rng),
        }
    }
}

/// Stationary Gaussian AR(p), started from its stationary law.
#[derive(Debug, Clone)]
pub struct ArSampler {
    coefs: Vec<f64>,
    innovation_sd: f64,
    marginal: f64,
    /// Lower Cholesky factor of the stationary covariance of `(e_1..e_p)`.
    init: DMatrix<f64>,
}

impl ArSampler {
    pub fn new(coefs: Vec<f64>, unit_variance: bool) -> Result<Self> {
        let abs_sum: f64 = coefs.iter().map(|a| a.abs()).sum();
        if coefs.is_empty() || coefs.iter().any(|a| !a.is_finite()) || abs_sum >= 1.0 {
            return Err(Error::Domain(format!(
                "autoregressive coefficients {coefs:?} must be finite with absolute sum below 1"
            )));
        }
        let gamma = yule_walker_autocovariance(&coefs)?;
        let (innovation_sd, marginal, scale) = if unit_variance {
            (1.0 / gamma[0].sqrt(), 1.0, 1.0 / gamma[0])
        } else {
            (1.0, gamma[0], 1.0)
        };
        let p = coefs.len();
        let cov = DMatrix::from_fn(p, p, |i, j| scale * gamma[i.abs_diff(j)]);
        let init = cov
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("stationary AR covariance".into()))?
            .l();
        Ok(Self {
            coefs,
            innovation_sd,
            marginal,
            init,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefs
    }

    pub fn innovation_sd(&self) -> f64 {
        self.innovation_sd
    }

    pub fn marginal_variance(&self) -> f64 {
        self.marginal
    }

    fn path<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        let p = self.coefs.len();
        let head = p.min(len);
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let start = &self.init * z;
        let mut out = Vec::with_capacity(len);
        out.extend(start.iter().take(head));
        for t in head..len {
            let v: f64 = StandardNormal.sample(rng);
            let mean: f64 = self.coefs.iter().enumerate().map(|(j, a)| a * out[t - 1 - j]).sum();
            out.push(mean + self.innovation_sd * v);
        }
        out
    }
}

/// Autocovariances `gamma_0..gamma_p` of an AR(p) with unit innovation
/// variance, from the Yule-Walker equations.
pub fn yule_walker_autocovariance(coefs: &[f64]) -> Result<Vec<f64>> {
    let p = coefs.len();
    let n = p + 1;
    let mut m = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    rhs[0] = 1.0;
    for k in 0..n {
        m[(k, k)] += 1.0;
        for (j, a) in coefs.iter().enumerate() {
            let lag = k.abs_diff(j + 1);
            m[(k, lag)] -= a;
        }
    }
    let gamma = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Yule-Walker system".into()))?;
    if !(gamma[0] > 0.0) {
        return Err(Error::Domain("autoregression is not stationary".into()));
    }
    Ok(gamma.iter().copied().collect())
}
