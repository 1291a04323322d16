//! Run configuration: one JSON document per invocation.
//!
//! Every block is optional at parse time; each command then asks for the
//! blocks it needs and builds all domain objects before any computation, so
//! a bad field fails fast with its path.

use std::path::Path;

use mrtss::design::{
    build_quadratic_features, elicit_quadratic_effect, make_availability, project_effect,
    AvailabilityKind, AvailabilityPattern, EffectPath, FeaturePaths, TrialDesign,
};
use mrtss::estimator::{HatScaling, TestOptions};
use mrtss::samplesize::SizingInputs;
use mrtss::simulate::{EffectShape, ErrorProcess, GenerativeModel, MonteCarloSettings, Scenario};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const DEFAULT_CALIBRATION_REPS: usize = 5000;
pub const DEFAULT_SEED: u64 = 2024;
pub const DEFAULT_REPS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<AvailabilityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect: Option<EffectConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<ErrorProcess>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_power")]
    pub power: f64,
    /// Subjects; `power` requires it, `simulate` sizes the trial when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_true")]
    pub adjusted: bool,
    #[serde(default)]
    pub hat_scaling: HatScaling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
}

fn default_alpha0() -> f64 {
    0.05
}

fn default_power() -> f64 {
    0.8
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub days: usize,
    #[serde(default = "default_per_day")]
    pub decisions_per_day: usize,
    /// A constant or one value per decision time.
    #[serde(default = "default_rho")]
    pub rho: Rho,
}

fn default_per_day() -> usize {
    5
}

fn default_rho() -> Rho {
    Rho::Constant(0.4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rho {
    Constant(f64),
    Path(Vec<f64>),
}

/// Either a shaped pattern (`average` plus optional `pattern`, constant by
/// default) or explicit per-time `values`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvailabilityConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<AvailabilityKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

/// Standardized effect: initial value, time average and peak day. Without
/// `shape` the path is the quadratic through those constraints; with a
/// shape the generated path follows it and sizing uses its projection onto
/// the quadratic span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectConfig {
    pub average: f64,
    pub max_day: usize,
    #[serde(default)]
    pub initial: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<EffectShape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub average_effects: Vec<f64>,
    pub availabilities: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            average_effects: vec![0.10, 0.09, 0.08, 0.07, 0.06, 0.05],
            availabilities: vec![0.7, 0.6, 0.5, 0.4],
        }
    }
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            CliError::Config(e.inner().to_string())
        } else {
            CliError::Config(format!("at `{path}`: {}", e.inner()))
        }
    })
}

fn missing(block: &str) -> CliError {
    CliError::Config(format!("missing field `{block}`"))
}

impl RunConfig {
    /// SHA-256 of the normalized configuration (defaults filled in).
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn design(&self) -> Result<TrialDesign, CliError> {
        let d = self.design.as_ref().ok_or_else(|| missing("design"))?;
        let design = match &d.rho {
            Rho::Constant(rho) => TrialDesign::new(d.days, d.decisions_per_day, *rho),
            Rho::Path(rho) => TrialDesign::with_rho_path(d.days, d.decisions_per_day, rho.clone()),
        };
        design.map_err(|e| CliError::Config(format!("at `design`: {e}")))
    }

    pub fn features(&self, design: &TrialDesign) -> Result<FeaturePaths, CliError> {
        Ok(build_quadratic_features(design)?)
    }

    pub fn availability(&self, design: &TrialDesign) -> Result<AvailabilityPattern, CliError> {
        let a = self.availability.as_ref().ok_or_else(|| missing("availability"))?;
        let at = |e: mrtss::Error| CliError::Config(format!("at `availability`: {e}"));
        match (&a.values, a.average) {
            (Some(values), None) if a.pattern.is_none() => {
                if values.len() != design.total_decisions() {
                    return Err(CliError::Config(format!(
                        "at `availability.values`: expected {} values, got {}",
                        design.total_decisions(),
                        values.len()
                    )));
                }
                AvailabilityPattern::from_values(values.clone()).map_err(at)
            }
            (None, Some(average)) => {
                let kind = a.pattern.clone().unwrap_or(AvailabilityKind::Constant);
                make_availability(kind, average, design).map_err(at)
            }
            _ => Err(CliError::Config(
                "at `availability`: give either `average` (with optional `pattern`) or `values`".into(),
            )),
        }
    }

    fn effect_config(&self) -> Result<&EffectConfig, CliError> {
        self.effect.as_ref().ok_or_else(|| missing("effect"))
    }

    /// The true standardized effect path.
    pub fn effect_path(&self, design: &TrialDesign) -> Result<EffectPath, CliError> {
        let e = self.effect_config()?;
        let at = |err: mrtss::Error| CliError::Config(format!("at `effect`: {err}"));
        match e.shape {
            None if e.average == 0.0 && e.initial == 0.0 => Ok(EffectPath::zero(design)),
            None => elicit_quadratic_effect(e.initial, e.average, e.max_day, design).map_err(at),
            Some(shape) => shape.path(e.average, e.max_day, design).map_err(at),
        }
    }

    /// The effect used for sizing: the quadratic itself, or the projection
    /// of a shaped path onto the quadratic span.
    pub fn sizing_effect(
        &self,
        design: &TrialDesign,
        tau: &AvailabilityPattern,
        features: &FeaturePaths,
    ) -> Result<EffectPath, CliError> {
        let path = self.effect_path(design)?;
        if path.coefficients().is_some() {
            Ok(path)
        } else {
            Ok(project_effect(&path, tau, features, design.rho())?)
        }
    }

    pub fn sizing_inputs(&self) -> Result<SizingInputs, CliError> {
        let design = self.design()?;
        let features = self.features(&design)?;
        let tau = self.availability(&design)?;
        let effect = self.sizing_effect(&design, &tau, &features)?;
        let inputs = SizingInputs {
            design,
            features,
            tau,
            effect,
            alpha0: self.alpha0,
            power_target: self.power,
        };
        inputs.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(inputs)
    }

    pub fn test_options(&self) -> Result<TestOptions, CliError> {
        if !(self.alpha0 > 0.0 && self.alpha0 < 1.0) {
            return Err(CliError::Config(format!(
                "at `alpha0`: must lie in (0, 1), got {}",
                self.alpha0
            )));
        }
        Ok(TestOptions {
            alpha0: self.alpha0,
            adjusted: self.adjusted,
            hat_scaling: self.hat_scaling,
        })
    }

    /// Generative model, calibrated when the scenario needs it.
    pub fn model(&self, seed: u64) -> Result<GenerativeModel, CliError> {
        let design = self.design()?;
        let tau = self.availability(&design)?;
        let effect = self.effect_path(&design)?;
        let scenario = self.scenario.clone().unwrap_or(Scenario::WorkingTrue);
        let errors = self.errors.unwrap_or_default();
        let model = GenerativeModel::new(design, scenario, effect, tau, errors)
            .map_err(|e| CliError::Config(e.to_string()))?;
        if model.needs_calibration() {
            let reps = self.calibration_reps.unwrap_or(DEFAULT_CALIBRATION_REPS);
            Ok(model.calibrated(reps, seed)?)
        } else {
            Ok(model)
        }
    }

    pub fn monte_carlo_settings(&self, n: usize, reps: usize, seed: u64) -> Result<MonteCarloSettings, CliError> {
        if reps == 0 {
            return Err(CliError::Config("at `reps`: must be at least 1".into()));
        }
        let opts = self.test_options()?;
        Ok(MonteCarloSettings {
            n,
            reps,
            alpha0: opts.alpha0,
            adjusted: opts.adjusted,
            hat_scaling: opts.hat_scaling,
            seed,
        })
    }
}
