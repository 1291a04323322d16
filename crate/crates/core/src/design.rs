//! Trial designs: decision grid, feature paths, availability and effects.
//!
//! Decision times are 1-based (`t = 1..=T`) in the public API, matching how
//! trial protocols number them; storage is 0-based. Day indices are
//! zero-based, `u_t = floor((t - 1) / m)`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spd_factor, spd_solve};

/// Days per week, used by the weekly availability pattern and the weekend
/// indicator.
pub const DAYS_PER_WEEK: usize = 7;

/// Decision grid and randomization probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDesign {
    days: usize,
    decisions_per_day: usize,
    rho: Vec<f64>,
    p: usize,
    q: usize,
}

impl TrialDesign {
    /// Quadratic-in-day design (`p = q = 3`) with a constant randomization
    /// probability.
    pub fn new(days: usize, decisions_per_day: usize, rho: f64) -> Result<Self> {
        Self::with_rho_path(days, decisions_per_day, vec![rho; days * decisions_per_day])
    }

    pub fn with_rho_path(days: usize, decisions_per_day: usize, rho: Vec<f64>) -> Result<Self> {
        if days == 0 || decisions_per_day == 0 {
            return Err(Error::Domain(
                "days and decisions per day must both be positive".into(),
            ));
        }
        let total = days * decisions_per_day;
        if rho.len() != total {
            return Err(Error::Dimension(format!(
                "rho has {} entries, design has {total} decision times",
                rho.len()
            )));
        }
        if let Some((i, r)) = rho.iter().enumerate().find(|(_, r)| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::InvalidProbability { t: i + 1, value: *r });
        }
        Ok(Self {
            days,
            decisions_per_day,
            rho,
            p: 3,
            q: 3,
        })
    }

    /// Overrides the effect (`p`) and nuisance (`q`) feature dimensions.
    pub fn with_dims(mut self, p: usize, q: usize) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::Dimension("p and q must be positive".into()));
        }
        self.p = p;
        self.q = q;
        Ok(self)
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn decisions_per_day(&self) -> usize {
        self.decisions_per_day
    }

    pub fn total_decisions(&self) -> usize {
        self.days * self.decisions_per_day
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Zero-based day index of the 1-based decision time `t`.
    pub fn day_index(&self, t: usize) -> usize {
        debug_assert!(t >= 1);
        (t - 1) / self.decisions_per_day
    }

    /// Day indices for every decision time, in order.
    pub fn day_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=self.total_decisions()).map(|t| self.day_index(t))
    }

    /// Whether decision time `t` falls on a weekend, assuming the study
    /// starts on a Monday.
    pub fn is_weekend(&self, t: usize) -> bool {
        self.day_index(t) % DAYS_PER_WEEK >= 5
    }
}

/// Effect features `Z_t` (rows of `z`) and nuisance features `B_t` (rows of
/// `b`), one row per decision time.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePaths {
    z: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl FeaturePaths {
    pub fn new(z: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if z.nrows() != b.nrows() || z.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "Z has {} rows, B has {} rows",
                z.nrows(),
                b.nrows()
            )));
        }
        if z.ncols() == 0 || b.ncols() == 0 {
            return Err(Error::Dimension("feature dimensions must be positive".into()));
        }
        if z.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite feature value".into()));
        }
        Ok(Self { z, b })
    }

    /// Builds the paths and verifies that `sum tau rho (1 - rho) Z Z'` and
    /// `sum tau B B'` are invertible.
    pub fn checked(
        z: DMatrix<f64>,
        b: DMatrix<f64>,
        tau: &AvailabilityPattern,
        rho: &[f64],
    ) -> Result<Self> {
        let paths = Self::new(z, b)?;
        paths.check_invertible(tau, rho)?;
        Ok(paths)
    }

    pub fn check_invertible(&self, tau: &AvailabilityPattern, rho: &[f64]) -> Result<()> {
        self.check_len(tau.values().len())?;
        self.check_len(rho.len())?;
        let z_weights: Vec<f64> = tau
            .values()
            .iter()
            .zip(rho)
            .map(|(tau, rho)| tau * rho * (1.0 - rho))
            .collect();
        spd_factor(&weighted_gram(&self.z, &z_weights), "sum tau rho(1-rho) Z Z'")?;
        spd_factor(&weighted_gram(&self.b, tau.values()), "sum tau B B'")?;
        Ok(())
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::Dimension(format!(
                "features cover {} decision times, got {len}",
                self.len()
            )));
        }
        Ok(())
    }

    /// Number of decision times.
    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn q(&self) -> usize {
        self.b.ncols()
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Rescales every `Z_t` by `kappa`.
    pub fn scale_z(&self, kappa: f64) -> Self {
        Self {
            z: &self.z * kappa,
            b: self.b.clone(),
        }
    }
}

/// `sum_t w_t x_t x_t'` over the rows `x_t` of `x`.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let k = x.ncols();
    let mut out = DMatrix::zeros(k, k);
    for (t, &wt) in w.iter().enumerate() {
        if wt == 0.0 {
            continue;
        }
        let row = x.row(t);
        out.ger(wt, &row.transpose(), &row.transpose(), 1.0);
    }
    out
}

/// `Z_t = B_t = (1, u_t, u_t^2)'`.
pub fn build_quadratic_features(design: &TrialDesign) -> Result<FeaturePaths> {
    if design.p() != 3 || design.q() != 3 {
        return Err(Error::Dimension(format!(
            "quadratic features need p = q = 3, design has p = {}, q = {}",
            design.p(),
            design.q()
        )));
    }
    let total = design.total_decisions();
    let z = DMatrix::from_fn(total, 3, |i, j| (design.day_index(i + 1) as f64).powi(j as i32));
    FeaturePaths::new(z.clone(), z)
}

/// Shape family of an availability pattern. Offsets are additive and are
/// re-centred so the pattern averages exactly to the requested target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AvailabilityKind {
    Constant,
    /// Linear ramp from `target - amplitude` to `target + amplitude`;
    /// negative amplitudes ramp down.
    Linear { amplitude: f64 },
    /// Day-of-week cosine peaking over the weekend and bottoming out
    /// mid-week, with peak offset `amplitude` before re-centring.
    WeeklyPeriodic { amplitude: f64 },
    /// Equal-length consecutive blocks carrying the given offsets.
    Piecewise { levels: Vec<f64> },
}

/// Expected availability `tau_t = E[I_t]` per decision time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityPattern {
    tau: Vec<f64>,
    kind: AvailabilityKind,
    target_average: f64,
}

impl AvailabilityPattern {
    pub fn values(&self) -> &[f64] {
        &self.tau
    }

    pub fn kind(&self) -> &AvailabilityKind {
        &self.kind
    }

    pub fn target_average(&self) -> f64 {
        self.target_average
    }

    pub fn average(&self) -> f64 {
        self.tau.iter().sum::<f64>() / self.tau.len() as f64
    }

    /// A pattern from explicit values, labelled piecewise.
    pub fn from_values(tau: Vec<f64>) -> Result<Self> {
        if tau.is_empty() {
            return Err(Error::Dimension("empty availability pattern".into()));
        }
        if let Some((i, v)) = tau.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidProbability { t: i + 1, value: *v });
        }
        let target_average = tau.iter().sum::<f64>() / tau.len() as f64;
        Ok(Self {
            tau,
            kind: AvailabilityKind::Piecewise { levels: Vec::new() },
            target_average,
        })
    }
}

/// Builds an availability pattern of the requested shape averaging to
/// `target_average`.
pub fn make_availability(
    kind: AvailabilityKind,
    target_average: f64,
    design: &TrialDesign,
) -> Result<AvailabilityPattern> {
    if !(target_average > 0.0 && target_average <= 1.0) {
        return Err(Error::Domain(format!(
            "average availability must lie in (0, 1], got {target_average}"
        )));
    }
    let total = design.total_decisions();
    let raw: Vec<f64> = match &kind {
        AvailabilityKind::Constant => vec![0.0; total],
        AvailabilityKind::Linear { amplitude } => {
            check_finite(*amplitude, "amplitude")?;
            if total == 1 {
                vec![0.0]
            } else {
                (0..total)
                    .map(|i| amplitude * (2.0 * i as f64 / (total - 1) as f64 - 1.0))
                    .collect()
            }
        }
        AvailabilityKind::WeeklyPeriodic { amplitude } => {
            check_finite(*amplitude, "amplitude")?;
            let peak = 5.5;
            design
                .day_indices()
                .map(|u| {
                    let dow = (u % DAYS_PER_WEEK) as f64;
                    amplitude * (2.0 * std::f64::consts::PI * (dow - peak) / DAYS_PER_WEEK as f64).cos()
                })
                .collect()
        }
        AvailabilityKind::Piecewise { levels } => {
            if levels.is_empty() || levels.len() > total {
                return Err(Error::Domain(format!(
                    "piecewise pattern needs between 1 and {total} levels"
                )));
            }
            for v in levels {
                check_finite(*v, "level")?;
            }
            (0..total).map(|i| levels[i * levels.len() / total]).collect()
        }
    };

    let shift = target_average - raw.iter().sum::<f64>() / total as f64;
    let mut tau: Vec<f64> = raw.iter().map(|r| r + shift).collect();
    const SLACK: f64 = 1e-12;
    for (i, v) in tau.iter_mut().enumerate() {
        if *v < -SLACK || *v > 1.0 + SLACK {
            return Err(Error::InfeasiblePattern(format!(
                "tau at decision time {} would be {v:.6} after centring on {target_average}",
                i + 1
            )));
        }
        *v = v.clamp(0.0, 1.0);
    }
    Ok(AvailabilityPattern {
        tau,
        kind,
        target_average,
    })
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be finite")))
    }
}

/// How an effect path was specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum EffectForm {
    /// `d(t) = d1 + d2 u_t + d3 u_t^2`.
    Quadratic { coefficients: [f64; 3] },
    Explicit,
}

/// Standardized proximal effect path `d(t) = beta(t) / sigma_bar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectPath {
    form: EffectForm,
    values: Vec<f64>,
}

impl EffectPath {
    pub fn quadratic(coefficients: [f64; 3], design: &TrialDesign) -> Self {
        let [d1, d2, d3] = coefficients;
        let values = design
            .day_indices()
            .map(|u| {
                let u = u as f64;
                d1 + d2 * u + d3 * u * u
            })
            .collect();
        Self {
            form: EffectForm::Quadratic { coefficients },
            values,
        }
    }

    pub fn explicit(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite effect value".into()));
        }
        Ok(Self {
            form: EffectForm::Explicit,
            values,
        })
    }

    pub fn zero(design: &TrialDesign) -> Self {
        Self::quadratic([0.0; 3], design)
    }

    pub fn form(&self) -> &EffectForm {
        &self.form
    }

    pub fn coefficients(&self) -> Option<[f64; 3]> {
        match self.form {
            EffectForm::Quadratic { coefficients } => Some(coefficients),
            EffectForm::Explicit => None,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(1/T) sum_t d(t)`.
    pub fn average(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// The same path multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let form = match self.form {
            EffectForm::Quadratic { coefficients } => EffectForm::Quadratic {
                coefficients: coefficients.map(|c| c * factor),
            },
            EffectForm::Explicit => EffectForm::Explicit,
        };
        Self {
            form,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Solves for quadratic coefficients from three elicited quantities: the
/// effect on day 0, the time-averaged effect, and the (1-based) day on which
/// the effect peaks.
pub fn elicit_quadratic_effect(
    initial: f64,
    average: f64,
    max_day: usize,
    design: &TrialDesign,
) -> Result<EffectPath> {
    if !initial.is_finite() || !average.is_finite() {
        return Err(Error::Domain("elicited effects must be finite".into()));
    }
    if max_day <= 1 || max_day > design.days() {
        return Err(Error::Domain(format!(
            "day of maximal effect must lie in 2..={}, got {max_day}",
            design.days()
        )));
    }
    let total = design.total_decisions() as f64;
    let (mut mean_u, mut mean_u2) = (0.0, 0.0);
    for u in design.day_indices() {
        let u = u as f64;
        mean_u += u;
        mean_u2 += u * u;
    }
    mean_u /= total;
    mean_u2 /= total;
    let vertex = (max_day - 1) as f64;

    #[rustfmt::skip]
    let system = Matrix3::new(
        1.0, 0.0,    0.0,
        1.0, mean_u, mean_u2,
        0.0, 1.0,    2.0 * vertex,
    );
    let det = system.determinant();
    let scale = 1.0 + mean_u2.abs() + 2.0 * vertex * mean_u;
    if det.abs() <= 1e-12 * scale {
        return Err(Error::Singular("elicitation system".into()));
    }
    let rhs = Vector3::new(initial, average, 0.0);
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("elicitation system".into()))?;
    if sol[2] >= 0.0 {
        return Err(Error::NoInteriorMaximum(sol[2]));
    }
    Ok(EffectPath::quadratic([sol[0], sol[1], sol[2]], design))
}

/// Least-squares projection of an effect path onto the span of `Z_t`,
/// weighted by `tau_t rho_t (1 - rho_t)`.
pub fn project_effect(
    path: &EffectPath,
    tau: &AvailabilityPattern,
    features: &FeaturePaths,
    rho: &[f64],
) -> Result<EffectPath> {
    if features.p() != 3 {
        return Err(Error::Dimension(format!(
            "projection onto a quadratic needs p = 3, got {}",
            features.p()
        )));
    }
    features.check_len(path.values().len())?;
    features.check_len(tau.values().len())?;
    features.check_len(rho.len())?;

    let weights: Vec<f64> = tau
        .values()
        .iter()
        .zip(rho)
        .map(|(tau, rho)| tau * rho * (1.0 - rho))
        .collect();
    let gram = weighted_gram(features.z(), &weights);
    let mut moment = DVector::zeros(3);
    for (t, (&w, &d)) in weights.iter().zip(path.values()).enumerate() {
        moment.axpy(w * d, &features.z().row(t).transpose(), 1.0);
    }
    let coef = spd_solve(&gram, &moment, "projection Gram matrix")?;
    let values = (features.z() * &coef).iter().copied().collect();
    Ok(EffectPath {
        form: EffectForm::Quadratic {
            coefficients: [coef[0], coef[1], coef[2]],
        },
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heartsteps() -> TrialDesign {
        TrialDesign::new(42, 5, 0.4).unwrap()
    }

    #[test]
    fn quadratic_feature_rows() {
        let f = build_quadratic_features(&heartsteps()).unwrap();
        assert_eq!(f.len(), 210);
        let row = |t: usize| f.z().row(t - 1).iter().copied().collect::<Vec<_>>();
        assert_eq!(row(1), vec![1.0, 0.0, 0.0]);
        assert_eq!(row(6), vec![1.0, 1.0, 1.0]);
        assert_eq!(row(210), vec![1.0, 41.0, 1681.0]);
        assert_eq!(f.z(), f.b());
    }

    #[test]
    fn quadratic_features_need_three_dims() {
        let d = heartsteps().with_dims(2, 3).unwrap();
        assert!(matches!(build_quadratic_features(&d), Err(Error::Dimension(_))));
    }

    #[test]
    fn design_validation() {
        assert!(TrialDesign::new(0, 5, 0.4).is_err());
        assert!(TrialDesign::new(42, 5, 1.0).is_err());
        assert!(TrialDesign::with_rho_path(2, 2, vec![0.5; 3]).is_err());
        let d = heartsteps();
        assert_eq!(d.day_index(1), 0);
        assert_eq!(d.day_index(5), 0);
        assert_eq!(d.day_index(6), 1);
        assert!(!d.is_weekend(25));
        assert!(d.is_weekend(26));
        assert!(d.is_weekend(35));
        assert!(!d.is_weekend(36));
    }

    #[test]
    fn elicitation_matches_published_coefficients() {
        let path = elicit_quadratic_effect(0.0, 0.1, 29, &heartsteps()).unwrap();
        let [d1, d2, d3] = path.coefficients().unwrap();
        assert_eq!(d1, 0.0);
        assert!((d2 - 9.64e-3).abs() < 0.005e-3, "d2 = {d2}");
        assert!((d3 + 1.72e-4).abs() < 0.005e-4, "d3 = {d3}");
    }

    #[test]
    fn elicitation_closed_loop() {
        let design = heartsteps();
        let path = elicit_quadratic_effect(0.0, 0.06, 29, &design).unwrap();
        assert!((path.average() - 0.06).abs() < 1e-12);
        assert_eq!(path.values()[0], 0.0);
        let [_, d2, d3] = path.coefficients().unwrap();
        assert!((-d2 / (2.0 * d3) - 28.0).abs() < 1e-9);
    }

    #[test]
    fn elicitation_rejects_flat_and_bad_days() {
        let design = heartsteps();
        assert!(matches!(
            elicit_quadratic_effect(0.1, 0.1, 29, &design),
            Err(Error::NoInteriorMaximum(_))
        ));
        assert!(matches!(
            elicit_quadratic_effect(0.1, 0.05, 29, &design),
            Err(Error::NoInteriorMaximum(_))
        ));
        assert!(elicit_quadratic_effect(0.0, 0.1, 1, &design).is_err());
        assert!(elicit_quadratic_effect(0.0, 0.1, 43, &design).is_err());
    }

    #[test]
    fn availability_constant() {
        let design = heartsteps();
        for target in [0.5, 0.7] {
            let tau = make_availability(AvailabilityKind::Constant, target, &design).unwrap();
            assert!(tau.values().iter().all(|v| *v == target));
        }
        assert!(make_availability(AvailabilityKind::Constant, 0.0, &design).is_err());
        assert!(make_availability(AvailabilityKind::Constant, 1.1, &design).is_err());
    }

    #[test]
    fn availability_weekly_peaks_on_weekends() {
        let design = heartsteps();
        let tau =
            make_availability(AvailabilityKind::WeeklyPeriodic { amplitude: 0.2 }, 0.5, &design)
                .unwrap();
        assert!((tau.average() - 0.5).abs() < 1e-9);
        let v = tau.values();
        // Saturday (day 5) vs Wednesday (day 2) of the first week.
        assert!(v[5 * 5] > v[2 * 5]);
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn availability_linear_and_piecewise() {
        let design = heartsteps();
        let lin = make_availability(AvailabilityKind::Linear { amplitude: -0.3 }, 0.5, &design)
            .unwrap();
        assert!((lin.average() - 0.5).abs() < 1e-9);
        assert!((lin.values()[0] - 0.8).abs() < 1e-12);
        let pw = make_availability(
            AvailabilityKind::Piecewise { levels: vec![0.3, 0.0, -0.1] },
            0.4,
            &design,
        )
        .unwrap();
        assert!((pw.average() - 0.4).abs() < 1e-9);
        let infeasible =
            make_availability(AvailabilityKind::Linear { amplitude: 0.6 }, 0.5, &design);
        assert!(matches!(infeasible, Err(Error::InfeasiblePattern(_))));
    }

    #[test]
    fn projection_is_idempotent_on_quadratics() {
        let design = heartsteps();
        let features = build_quadratic_features(&design).unwrap();
        let tau =
            make_availability(AvailabilityKind::WeeklyPeriodic { amplitude: 0.2 }, 0.5, &design)
                .unwrap();
        let path = elicit_quadratic_effect(0.0, 0.1, 29, &design).unwrap();
        let explicit = EffectPath::explicit(path.values().to_vec()).unwrap();
        let proj = project_effect(&explicit, &tau, &features, design.rho()).unwrap();
        for (a, b) in proj
            .coefficients()
            .unwrap()
            .iter()
            .zip(path.coefficients().unwrap())
        {
            assert!((a - b).abs() < 1e-10);
        }
        let zero = EffectPath::explicit(vec![0.0; 210]).unwrap();
        let proj = project_effect(&zero, &tau, &features, design.rho()).unwrap();
        assert_eq!(proj.coefficients().unwrap(), [0.0; 3]);
    }

    #[test]
    fn invertibility_check_catches_zero_availability() {
        let design = heartsteps();
        let features = build_quadratic_features(&design).unwrap();
        let tau = AvailabilityPattern::from_values(vec![0.0; 210]).unwrap();
        assert!(features.check_invertible(&tau, design.rho()).is_err());
        let ok = make_availability(AvailabilityKind::Constant, 0.5, &design).unwrap();
        assert!(FeaturePaths::checked(features.z().clone(), features.b().clone(), &ok, design.rho())
            .is_ok());
    }
}
