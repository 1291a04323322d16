//! Generative models for simulated trials.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::errors::ErrorProcess;
use super::rng::{stream_rng, DOMAIN_CALIBRATION};
use crate::dataset::SubjectRecord;
use crate::design::{elicit_quadratic_effect, AvailabilityPattern, EffectPath, TrialDesign};
use crate::error::{Error, Result};

/// Nuisance mean coefficients `alpha(t) = a1 + a2 u + a3 u^2` of the base
/// simulation model (`u` = day index).
pub const BASE_ALPHA: [f64; 3] = [2.5, 0.727, -8.66e-4];

/// Weekend-mean scenario: `alpha(1)` and `avg_t alpha(t) - alpha(1)` used to
/// solve for the quadratic part, whose maximum is put on the last day.
pub const WEEKEND_ALPHA_START: f64 = 2.5;
pub const WEEKEND_ALPHA_RISE: f64 = 0.1;

/// Ratio `max / min` of `sigma_bar_t` for the linear variance trends.
pub const HETERO_TREND_RATIO: f64 = 1.5;
/// Weekday and weekend `sigma_bar_t` of the weekend variance trend, before
/// normalization.
pub const HETERO_WEEKDAY_SIGMA: f64 = 0.8;
pub const HETERO_WEEKEND_SIGMA: f64 = 1.5;

/// Look-back window (decision times) for the feedback scenarios.
pub const FEEDBACK_WINDOW: usize = 5;

/// Minimum number of available draws per decision time during calibration.
pub const MIN_CALIBRATION_SAMPLES: usize = 100;

/// Retained fraction of the peak at the last day for the degraded shapes.
pub const SLIGHT_DEGRADATION: f64 = 0.5;
pub const SEVERE_DEGRADATION: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaTrend {
    Constant,
    Increasing,
    Decreasing,
    Weekend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Scenario {
    WorkingTrue,
    /// `I_t ~ Bern(tau_t + eta sum_j (A I - rho tau)_{t-j})`. Means outside
    /// `[0, 1]` are an error unless `clamp` is set.
    AvailabilityFeedback {
        eta: f64,
        #[serde(default)]
        clamp: bool,
    },
    /// `alpha(t) = B_t'alpha + theta W_t`, `W_t` the weekend indicator.
    WeekendMean { theta: f64 },
    /// Arm-specific error scales with `sigma_1t / sigma_0t = ratio`.
    Heteroscedastic { ratio: f64, trend: SigmaTrend },
    /// Availability and outcome depend on the recent treatment count
    /// `C_t = sum_j A_{t-j} I_{t-j}` and, for availability, on past errors.
    TreatmentFeedback {
        eta1: f64,
        eta2: f64,
        gamma1: f64,
        gamma2: f64,
    },
}

/// Parametric stand-ins for smooth non-quadratic effect paths: a quadratic
/// rise from zero to a peak, then either held or linearly decayed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EffectShape {
    Maintained,
    /// Decays linearly after the peak to `fraction` of it on the last day.
    Degraded { fraction: f64 },
}

impl EffectShape {
    pub fn slightly_degraded() -> Self {
        EffectShape::Degraded { fraction: SLIGHT_DEGRADATION }
    }

    pub fn severely_degraded() -> Self {
        EffectShape::Degraded { fraction: SEVERE_DEGRADATION }
    }

    /// Path peaking on (1-based) day `max_day` with time average `average`.
    pub fn path(&self, average: f64, max_day: usize, design: &TrialDesign) -> Result<EffectPath> {
        let days = design.days();
        if max_day < 2 || max_day > days {
            return Err(Error::Domain(format!(
                "day of maximal effect must lie in 2..={days}, got {max_day}"
            )));
        }
        if !average.is_finite() {
            return Err(Error::Domain("average effect must be finite".into()));
        }
        let fraction = match *self {
            EffectShape::Maintained => 1.0,
            EffectShape::Degraded { fraction } => {
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(Error::Domain(format!(
                        "retained fraction must lie in [0, 1], got {fraction}"
                    )));
                }
                fraction
            }
        };
        let peak = (max_day - 1) as f64;
        let last = (days - 1) as f64;
        let unit = |u: f64| {
            if u <= peak {
                1.0 - ((peak - u) / peak).powi(2)
            } else {
                1.0 - (1.0 - fraction) * (u - peak) / (last - peak)
            }
        };
        let raw: Vec<f64> = design.day_indices().map(|u| unit(u as f64)).collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        EffectPath::explicit(raw.iter().map(|v| v * average / mean).collect())
    }
}

/// Monte Carlo constants of the treatment-feedback scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// `E[C_t | I_t = 1]` per decision time.
    pub conditional_count_mean: Vec<f64>,
    /// `Var(C_t | I_t = 1)` per decision time.
    pub conditional_count_var: Vec<f64>,
    pub sigma_star: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Full description of how simulated subjects are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    design: TrialDesign,
    scenario: Scenario,
    alpha: [f64; 3],
    effect: EffectPath,
    tau: AvailabilityPattern,
    errors: ErrorProcess,
    calibration: Option<Calibration>,
}

impl GenerativeModel {
    /// `effect` is the true standardized effect path `d(t)`; with unit average
    /// variance it equals `beta(t)`.
    pub fn new(
        design: TrialDesign,
        scenario: Scenario,
        effect: EffectPath,
        tau: AvailabilityPattern,
        errors: ErrorProcess,
    ) -> Result<Self> {
        let total = design.total_decisions();
        if effect.values().len() != total || tau.values().len() != total {
            return Err(Error::Dimension(format!(
                "effect ({}) and availability ({}) must cover {total} decision times",
                effect.values().len(),
                tau.values().len()
            )));
        }
        errors.validate()?;
        let alpha = match &scenario {
            Scenario::WeekendMean { theta } => {
                check_finite(*theta, "theta")?;
                let path = elicit_quadratic_effect(
                    WEEKEND_ALPHA_START,
                    WEEKEND_ALPHA_START + WEEKEND_ALPHA_RISE,
                    design.days(),
                    &design,
                )?;
                path.coefficients().expect("quadratic")
            }
            _ => BASE_ALPHA,
        };
        match &scenario {
            Scenario::WorkingTrue | Scenario::WeekendMean { .. } => {}
            Scenario::AvailabilityFeedback { eta, .. } => check_finite(*eta, "eta")?,
            Scenario::Heteroscedastic { ratio, .. } => {
                if !(ratio.is_finite() && *ratio > 0.0) {
                    return Err(Error::Domain(format!("variance ratio must be positive, got {ratio}")));
                }
            }
            Scenario::TreatmentFeedback { eta1, eta2, gamma1, gamma2 } => {
                for (v, name) in [(eta1, "eta1"), (eta2, "eta2"), (gamma1, "gamma1"), (gamma2, "gamma2")] {
                    check_finite(*v, name)?;
                }
            }
        }
        Ok(Self {
            design,
            scenario,
            alpha,
            effect,
            tau,
            errors,
            calibration: None,
        })
    }

    /// Replaces the nuisance mean coefficients.
    pub fn with_alpha(mut self, alpha: [f64; 3]) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_calibration(mut self, calibration: Calibration) -> Result<Self> {
        let total = self.design.total_decisions();
        if calibration.conditional_count_mean.len() != total
            || calibration.conditional_count_var.len() != total
        {
            return Err(Error::Dimension("calibration does not cover the design".into()));
        }
        self.calibration = Some(calibration);
        Ok(self)
    }

    /// Calibrates the treatment-feedback constants; other scenarios are
    /// returned unchanged.
    pub fn calibrated(self, reps: usize, seed: u64) -> Result<Self> {
        if matches!(self.scenario, Scenario::TreatmentFeedback { .. }) {
            let cal = calibrate_sigma_star(&self, reps, seed)?;
            self.with_calibration(cal)
        } else {
            Ok(self)
        }
    }

    pub fn design(&self) -> &TrialDesign {
        &self.design
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn alpha(&self) -> [f64; 3] {
        self.alpha
    }

    pub fn effect(&self) -> &EffectPath {
        &self.effect
    }

    pub fn tau(&self) -> &AvailabilityPattern {
        &self.tau
    }

    pub fn errors(&self) -> &ErrorProcess {
        &self.errors
    }

    pub fn calibration(&self) -> Option<&Calibration> {
        self.calibration.as_ref()
    }

    pub fn needs_calibration(&self) -> bool {
        matches!(self.scenario, Scenario::TreatmentFeedback { .. }) && self.calibration.is_none()
    }

    /// `alpha(t)` for every decision time.
    pub fn mean_path(&self) -> Vec<f64> {
        let [a1, a2, a3] = self.alpha;
        (1..=self.design.total_decisions())
            .map(|t| {
                let u = self.design.day_index(t) as f64;
                let base = a1 + a2 * u + a3 * u * u;
                match self.scenario {
                    Scenario::WeekendMean { theta } if self.design.is_weekend(t) => base + theta,
                    _ => base,
                }
            })
            .collect()
    }

    /// `E[Y_{t+1} | I_t = 1]`; every feedback term is centered, so this is
    /// `alpha(t)` in all scenarios.
    pub fn available_mean_path(&self) -> Vec<f64> {
        self.mean_path()
    }

    /// `beta(t)`, which equals `d(t)` because every scenario is scaled to unit
    /// average variance.
    pub fn effect_path(&self) -> Vec<f64> {
        self.effect.values().to_vec()
    }

    /// `(sigma_0t, sigma_1t)` of the heteroscedastic scenario, scaled so that
    /// `avg_t [rho sigma_1t^2 + (1 - rho) sigma_0t^2] = 1`.
    pub fn arm_scales(&self) -> Option<Vec<(f64, f64)>> {
        let Scenario::Heteroscedastic { ratio, trend } = self.scenario else {
            return None;
        };
        let total = self.design.total_decisions();
        let last_day = (self.design.days() - 1).max(1) as f64;
        let sigma_bar: Vec<f64> = (1..=total)
            .map(|t| {
                let frac = self.design.day_index(t) as f64 / last_day;
                match trend {
                    SigmaTrend::Constant => 1.0,
                    SigmaTrend::Increasing => 1.0 + (HETERO_TREND_RATIO - 1.0) * frac,
                    SigmaTrend::Decreasing => HETERO_TREND_RATIO - (HETERO_TREND_RATIO - 1.0) * frac,
                    SigmaTrend::Weekend => {
                        if self.design.is_weekend(t) {
                            HETERO_WEEKEND_SIGMA
                        } else {
                            HETERO_WEEKDAY_SIGMA
                        }
                    }
                }
            })
            .collect();
        let mean_sq = sigma_bar.iter().map(|s| s * s).sum::<f64>() / total as f64;
        Some(
            sigma_bar
                .iter()
                .zip(self.design.rho())
                .map(|(s, rho)| {
                    let var_bar = s * s / mean_sq;
                    let s0 = (var_bar / (rho * ratio * ratio + 1.0 - rho)).sqrt();
                    (s0, ratio * s0)
                })
                .collect(),
        )
    }

    /// Draws one subject.
    pub fn generate_subject<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SubjectRecord> {
        generate_subject(self, rng)
    }
}

fn check_finite(v: f64, name: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite")))
    }
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p
}

fn trunc_unit(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        x
    } else {
        x.signum()
    }
}

/// `E[C_t] = sum_{j=1..5} rho_{t-j} tau_{t-j}` with zero pre-study history.
fn expected_count(t: usize, rho: &[f64], tau: &[f64]) -> f64 {
    (1..=FEEDBACK_WINDOW)
        .filter(|&j| j <= t)
        .map(|j| rho[t - j] * tau[t - j])
        .sum()
}

/// Sequential draw of `(I, A, e)` plus the recent-treatment count `C_t`
/// seen at each time. Shared by generation and calibration.
struct Trajectory {
    avail: Vec<bool>,
    action: Vec<bool>,
    errors: Vec<f64>,
    counts: Vec<f64>,
}

fn draw_trajectory<R: Rng + ?Sized>(model: &GenerativeModel, rng: &mut R) -> Result<Trajectory> {
    let total = model.design.total_decisions();
    let rho = model.design.rho();
    let tau = model.tau.values();
    let errors = model.errors.sampler()?.path(total, rng);
    let mut avail = Vec::with_capacity(total);
    let mut action = Vec::with_capacity(total);
    let mut counts = Vec::with_capacity(total);
    // treated[s] = A_s I_s (0-based s).
    let mut treated: Vec<f64> = Vec::with_capacity(total);
    for t in 0..total {
        let window = (1..=FEEDBACK_WINDOW).filter(|&j| j <= t);
        let count: f64 = window.clone().map(|j| treated[t - j]).sum();
        let mean = match model.scenario {
            Scenario::AvailabilityFeedback { eta, clamp } => {
                let centered: f64 = window.map(|j| treated[t - j] - rho[t - j] * tau[t - j]).sum();
                let m = tau[t] + eta * centered;
                if clamp {
                    m.clamp(0.0, 1.0)
                } else if !(0.0..=1.0).contains(&m) {
                    return Err(Error::InvalidProbability { t: t + 1, value: m });
                } else {
                    m
                }
            }
            Scenario::TreatmentFeedback { eta1, eta2, .. } => {
                let past_err: f64 =
                    window.map(|j| errors[t - j]).sum::<f64>() / FEEDBACK_WINDOW as f64;
                let m = tau[t]
                    + tau[t] * eta1 * (count - expected_count(t, rho, tau))
                    + tau[t] * eta2 * trunc_unit(past_err);
                m.clamp(0.0, 1.0)
            }
            _ => tau[t],
        };
        let i = bernoulli(mean, rng);
        let a = bernoulli(rho[t], rng);
        treated.push(if i && a { 1.0 } else { 0.0 });
        avail.push(i);
        action.push(a);
        counts.push(count);
    }
    Ok(Trajectory { avail, action, errors, counts })
}

/// Draws one subject's `(I_t, A_t, Y_{t+1})` sequence.
pub fn generate_subject<R: Rng + ?Sized>(model: &GenerativeModel, rng: &mut R) -> Result<SubjectRecord> {
    let cal = match (&model.scenario, &model.calibration) {
        (Scenario::TreatmentFeedback { .. }, None) => {
            return Err(Error::MissingCalibration(
                "treatment-feedback needs E[C_t | I_t = 1] and sigma*".into(),
            ))
        }
        (_, c) => c.as_ref(),
    };
    let traj = draw_trajectory(model, rng)?;
    let rho = model.design.rho();
    let alpha = model.mean_path();
    let d = model.effect.values();
    let scales = model.arm_scales();

    let total = traj.avail.len();
    let mut outcome = Vec::with_capacity(total);
    for t in 0..total {
        if !traj.avail[t] {
            outcome.push(None);
            continue;
        }
        let centered = f64::from(u8::from(traj.action[t])) - rho[t];
        let e = traj.errors[t];
        let y = match model.scenario {
            Scenario::Heteroscedastic { .. } => {
                let (s0, s1) = scales.as_ref().expect("heteroscedastic scales")[t];
                let sd = if traj.action[t] { s1 } else { s0 };
                alpha[t] + centered * d[t] + sd * e
            }
            Scenario::TreatmentFeedback { gamma1, gamma2, .. } => {
                let cal = cal.expect("checked above");
                let dev = traj.counts[t] - cal.conditional_count_mean[t];
                alpha[t] + gamma1 * dev + centered * d[t] * (1.0 + gamma2 * dev) + cal.sigma_star * e
            }
            _ => alpha[t] + centered * d[t] + e,
        };
        outcome.push(Some(y));
    }
    Ok(SubjectRecord {
        avail: traj.avail,
        action: traj.action,
        prob: rho.to_vec(),
        outcome,
    })
}

/// Estimates `E[C_t | I_t = 1]`, `Var(C_t | I_t = 1)` and the error scale
/// `sigma*` that makes the average conditional outcome variance one.
pub fn calibrate_sigma_star(model: &GenerativeModel, reps: usize, seed: u64) -> Result<Calibration> {
    let Scenario::TreatmentFeedback { gamma1, gamma2, .. } = model.scenario else {
        return Err(Error::Domain("calibration applies to the treatment-feedback scenario".into()));
    };
    let total = model.design.total_decisions();
    let mut count = vec![0usize; total];
    let mut sum = vec![0.0; total];
    let mut sum_sq = vec![0.0; total];
    for r in 0..reps {
        let mut rng = stream_rng(seed, DOMAIN_CALIBRATION, 0, r as u64);
        let traj = draw_trajectory(model, &mut rng)?;
        for t in 0..total {
            if traj.avail[t] {
                count[t] += 1;
                sum[t] += traj.counts[t];
                sum_sq[t] += traj.counts[t] * traj.counts[t];
            }
        }
    }
    if let Some((t, &c)) = count.iter().enumerate().find(|(_, c)| **c < MIN_CALIBRATION_SAMPLES) {
        return Err(Error::InsufficientReps { t: t + 1, count: c });
    }
    let mean: Vec<f64> = (0..total).map(|t| sum[t] / count[t] as f64).collect();
    let var: Vec<f64> = (0..total)
        .map(|t| {
            let n = count[t] as f64;
            ((sum_sq[t] - n * mean[t] * mean[t]) / (n - 1.0)).max(0.0)
        })
        .collect();

    let rho = model.design.rho();
    let d = model.effect.values();
    let feedback_var = (0..total)
        .map(|t| {
            let k1 = gamma1 + (1.0 - rho[t]) * d[t] * gamma2;
            let k0 = gamma1 - rho[t] * d[t] * gamma2;
            (rho[t] * k1 * k1 + (1.0 - rho[t]) * k0 * k0) * var[t]
        })
        .sum::<f64>()
        / total as f64;
    let err_var = model.errors.marginal_variance()?;
    let remaining = 1.0 - feedback_var;
    if !(remaining > 0.0) {
        return Err(Error::Domain(format!(
            "feedback terms alone give average variance {feedback_var:.4} >= 1"
        )));
    }
    Ok(Calibration {
        conditional_count_mean: mean,
        conditional_count_var: var,
        sigma_star: (remaining / err_var).sqrt(),
        reps,
        seed,
    })
}
