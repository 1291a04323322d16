//! Monte Carlo estimation of rejection rates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rng::{stream_rng, DOMAIN_DATA};
use super::scenario::{generate_subject, GenerativeModel};
use crate::dataset::TrialDataset;
use crate::design::FeaturePaths;
use crate::error::{Error, Result};
use crate::estimator::{hypothesis_test_with, HatScaling, TestOptions, TestResult};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSettings {
    /// Subjects per simulated trial.
    pub n: usize,
    pub reps: usize,
    pub alpha0: f64,
    #[serde(default = "default_adjusted")]
    pub adjusted: bool,
    #[serde(default)]
    pub hat_scaling: HatScaling,
    pub seed: u64,
}

fn default_adjusted() -> bool {
    true
}

impl MonteCarloSettings {
    pub fn test_options(&self) -> TestOptions {
        TestOptions {
            alpha0: self.alpha0,
            adjusted: self.adjusted,
            hat_scaling: self.hat_scaling,
        }
    }
}

/// Replicate counts; merging is associative and commutative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub replicates: usize,
    pub rejections: usize,
    pub failures: usize,
}

impl Tally {
    pub fn from_outcome(outcome: &Result<TestResult>) -> Self {
        match outcome {
            Ok(r) => Self { replicates: 1, rejections: usize::from(r.reject), failures: 0 },
            Err(_) => Self { replicates: 1, rejections: 0, failures: 1 },
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            replicates: self.replicates + other.replicates,
            rejections: self.rejections + other.rejections,
            failures: self.failures + other.failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub replicates: usize,
    pub rejections: usize,
    /// Replicates aborted by an estimation error; not counted as rejections.
    pub failures: usize,
    pub rate: f64,
    /// Wilson score interval.
    pub ci95: [f64; 2],
    pub seed: u64,
    /// SHA-256 of the model and settings (seed excluded).
    pub config_digest: String,
    /// First failure message, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
}

impl MonteCarloReport {
    pub fn from_tally(tally: Tally, seed: u64, config_digest: String) -> Self {
        let rate = if tally.replicates == 0 {
            0.0
        } else {
            tally.rejections as f64 / tally.replicates as f64
        };
        Self {
            replicates: tally.replicates,
            rejections: tally.rejections,
            failures: tally.failures,
            rate,
            ci95: wilson_interval(tally.rejections, tally.replicates),
            seed,
            config_digest,
            first_failure: None,
        }
    }
}

pub fn wilson_interval(successes: usize, trials: usize) -> [f64; 2] {
    if trials == 0 {
        return [0.0, 1.0];
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    [lo, hi]
}

/// Digest of everything that determines a report except the seed.
pub fn config_digest(model: &GenerativeModel, settings: &MonteCarloSettings) -> String {
    #[derive(Serialize)]
    struct Keyed<'a> {
        model: &'a GenerativeModel,
        n: usize,
        reps: usize,
        alpha0: f64,
        adjusted: bool,
        hat_scaling: HatScaling,
    }
    let keyed = Keyed {
        model,
        n: settings.n,
        reps: settings.reps,
        alpha0: settings.alpha0,
        adjusted: settings.adjusted,
        hat_scaling: settings.hat_scaling,
    };
    let json = serde_json::to_vec(&keyed).expect("model serializes");
    hex::encode(Sha256::digest(json))
}

/// The `replicate`-th simulated trial of `n` subjects.
pub fn simulate_dataset(
    model: &GenerativeModel,
    n: usize,
    seed: u64,
    replicate: u64,
) -> Result<TrialDataset> {
    let subjects = (0..n as u64)
        .map(|s| {
            let mut rng = stream_rng(seed, DOMAIN_DATA, replicate, s);
            generate_subject(model, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    TrialDataset::new(subjects)
}

/// Simulates and analyzes one replicate.
pub fn run_replicate(
    model: &GenerativeModel,
    features: &FeaturePaths,
    settings: &MonteCarloSettings,
    replicate: u64,
) -> Result<TestResult> {
    let data = simulate_dataset(model, settings.n, settings.seed, replicate)?;
    hypothesis_test_with(&data, features, &settings.test_options())
}

fn validate(model: &GenerativeModel, features: &FeaturePaths, settings: &MonteCarloSettings) -> Result<()> {
    if settings.reps == 0 {
        return Err(Error::Domain("reps must be at least 1".into()));
    }
    let (p, q) = (features.p(), features.q());
    if settings.n <= p + q {
        return Err(Error::DegreesOfFreedom { n: settings.n, p, q });
    }
    if !(settings.alpha0 > 0.0 && settings.alpha0 < 1.0) {
        return Err(Error::Domain(format!("alpha0 must lie in (0, 1), got {}", settings.alpha0)));
    }
    features.check_len(model.design().total_decisions())?;
    if model.needs_calibration() {
        return Err(Error::MissingCalibration(
            "calibrate the treatment-feedback model before simulating".into(),
        ));
    }
    Ok(())
}

/// Rejection rate of the test over `reps` independent simulated trials.
/// Replicates run on the current rayon pool; the result does not depend on
/// the number of threads.
pub fn monte_carlo(
    model: &GenerativeModel,
    features: &FeaturePaths,
    settings: &MonteCarloSettings,
) -> Result<MonteCarloReport> {
    validate(model, features, settings)?;
    let outcomes: Vec<(Tally, Option<String>)> = (0..settings.reps as u64)
        .into_par_iter()
        .map(|r| {
            let outcome = run_replicate(model, features, settings, r);
            let msg = outcome.as_ref().err().map(|e| format!("replicate {r}: {e}"));
            (Tally::from_outcome(&outcome), msg)
        })
        .collect();
    let tally = outcomes.iter().fold(Tally::default(), |acc, (t, _)| acc.merge(*t));
    let mut report = MonteCarloReport::from_tally(tally, settings.seed, config_digest(model, settings));
    report.first_failure = outcomes.into_iter().find_map(|(_, m)| m);
    Ok(report)
}
