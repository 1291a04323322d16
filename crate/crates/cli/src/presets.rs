//! Preset simulation grids for robustness studies.
//!
//! Every cell sizes the trial with the formula (unless the preset fixes the
//! sizing inputs on purpose, as in the misspecification grids) and then
//! estimates the rejection rate under the cell's generative model. Grid axes
//! that cannot be pinned down exactly use the stand-ins documented in the
//! README.

use mrtss::design::AvailabilityKind;
use mrtss::samplesize::solve_sample_size;
use mrtss::simulate::{
    monte_carlo, EffectShape, ErrorFamily, ErrorProcess, MonteCarloReport, Scenario, SigmaTrend,
};
use serde::Serialize;

use crate::config::{AvailabilityConfig, DesignConfig, EffectConfig, Rho, RunConfig};
use crate::render;
use crate::CliError;

pub const PRESET_IDS: [&str; 12] = [
    "typeI-6wk",
    "power-6wk",
    "duration",
    "power-errors",
    "weekend-mean",
    "availability-feedback",
    "power-shapes",
    "power-hetero",
    "treatment-feedback",
    "misspecified-effect",
    "misspecified-availability",
    "typeI-errors",
];

/// Peak day of the default effect; 6-week designs.
const MAX_DAY: usize = 29;
const DBAR: f64 = 0.10;
const TAU: f64 = 0.5;
/// Stand-in amplitude for the time-varying availability patterns.
const PATTERN_AMPLITUDE: f64 = 0.2;

#[derive(Debug, Clone, Serialize)]
pub struct PresetCell {
    pub column: String,
    pub n: usize,
    pub report: MonteCarloReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PresetRow {
    pub label: String,
    pub cells: Vec<PresetCell>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PresetTable {
    pub id: String,
    pub description: String,
    pub reps: usize,
    pub seed: u64,
    pub columns: Vec<String>,
    pub rows: Vec<PresetRow>,
}

impl PresetTable {
    pub fn to_text(&self) -> String {
        let mut header = vec![String::new()];
        header.extend(self.columns.iter().cloned());
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.label.clone()];
                row.extend(
                    r.cells
                        .iter()
                        .map(|c| format!("{:.1} (N={})", 100.0 * c.report.rate, c.n)),
                );
                row
            })
            .collect();
        format!(
            "{}: {}\nrejection rate in % over {} replicates, seed {}\n{}",
            self.id,
            self.description,
            self.reps,
            self.seed,
            render::table(&header, &rows)
        )
    }
}

struct CellSpec {
    row: String,
    column: String,
    /// Generative configuration.
    truth: RunConfig,
    n: usize,
}

fn config(days: usize, tau: f64, pattern: Option<AvailabilityKind>, dbar: f64, max_day: usize) -> RunConfig {
    RunConfig {
        design: Some(DesignConfig {
            days,
            decisions_per_day: 5,
            rho: Rho::Constant(0.4),
        }),
        availability: Some(AvailabilityConfig {
            average: Some(tau),
            pattern,
            values: None,
        }),
        effect: Some(EffectConfig {
            average: dbar,
            max_day,
            initial: 0.0,
            shape: None,
        }),
        errors: None,
        scenario: None,
        alpha0: 0.05,
        power: 0.8,
        n: None,
        reps: None,
        seed: None,
        adjusted: true,
        hat_scaling: Default::default(),
        calibration_reps: None,
        grid: None,
    }
}

fn heartsteps() -> RunConfig {
    config(42, TAU, None, DBAR, MAX_DAY)
}

fn sized(cfg: &RunConfig) -> Result<usize, CliError> {
    Ok(solve_sample_size(&cfg.sizing_inputs()?)?.n)
}

fn null(mut cfg: RunConfig) -> RunConfig {
    if let Some(e) = cfg.effect.as_mut() {
        e.average = 0.0;
        e.initial = 0.0;
        e.shape = None;
    }
    cfg
}

fn patterns() -> [(&'static str, Option<AvailabilityKind>); 4] {
    [
        ("constant", None),
        ("increasing", Some(AvailabilityKind::Linear { amplitude: PATTERN_AMPLITUDE })),
        ("decreasing", Some(AvailabilityKind::Linear { amplitude: -PATTERN_AMPLITUDE })),
        ("weekly", Some(AvailabilityKind::WeeklyPeriodic { amplitude: PATTERN_AMPLITUDE })),
    ]
}

fn error_families() -> [(&'static str, ErrorFamily); 7] {
    [
        ("normal", ErrorFamily::IidNormal),
        ("t3", ErrorFamily::IidT3Scaled),
        ("exponential", ErrorFamily::IidExpCentered),
        ("ar1 +0.6", ErrorFamily::Ar1 { phi: 0.6 }),
        ("ar1 -0.6", ErrorFamily::Ar1 { phi: -0.6 }),
        ("ar5 +0.6", ErrorFamily::Ar5 { phi: 0.6 }),
        ("ar5 -0.6", ErrorFamily::Ar5 { phi: -0.6 }),
    ]
}

/// Type I and power columns for one sized configuration.
fn null_and_alt(row: &str, cfg: RunConfig) -> Result<Vec<CellSpec>, CliError> {
    let n = sized(&cfg)?;
    Ok(vec![
        CellSpec { row: row.into(), column: "type I".into(), truth: null(cfg.clone()), n },
        CellSpec { row: row.into(), column: "power".into(), truth: cfg, n },
    ])
}

fn build(id: &str) -> Result<(String, Vec<CellSpec>), CliError> {
    let mut cells = Vec::new();
    let description = match id {
        "typeI-6wk" | "power-6wk" => {
            for (label, pattern) in patterns() {
                for tau in [0.7, 0.6, 0.5, 0.4] {
                    let cfg = config(42, tau, pattern.clone(), DBAR, MAX_DAY);
                    let n = sized(&cfg)?;
                    let truth = if id == "typeI-6wk" { null(cfg) } else { cfg };
                    cells.push(CellSpec { row: label.into(), column: format!("tau {tau}"), truth, n });
                }
            }
            if id == "typeI-6wk" {
                "type I error, working model correct, 6 weeks, sized for dbar 0.10"
            } else {
                "power, working model correct, 6 weeks, dbar 0.10"
            }
        }
        "duration" => {
            for (label, days, max_day) in [("4 weeks", 28, 19), ("6 weeks", 42, 29), ("8 weeks", 56, 39)] {
                cells.extend(null_and_alt(label, config(days, TAU, None, DBAR, max_day))?);
            }
            "study length, iid normal errors, tau 0.5, peak at about 70% of the study"
        }
        "power-errors" | "typeI-errors" => {
            for (label, family) in error_families() {
                for max_day in [22, 29] {
                    let mut cfg = config(42, TAU, None, DBAR, max_day);
                    cfg.errors = Some(ErrorProcess::new(family));
                    let n = sized(&cfg)?;
                    let truth = if id == "typeI-errors" { null(cfg) } else { cfg };
                    cells.push(CellSpec { row: label.into(), column: format!("max day {max_day}"), truth, n });
                }
            }
            if id == "typeI-errors" {
                "type I error by error distribution, tau 0.5"
            } else {
                "power by error distribution, tau 0.5, dbar 0.10"
            }
        }
        "weekend-mean" => {
            for theta in [0.0, 0.5, 1.0] {
                let mut cfg = heartsteps();
                cfg.scenario = Some(Scenario::WeekendMean { theta });
                cells.extend(null_and_alt(&format!("theta {theta}"), cfg)?);
            }
            "weekend shift in the outcome mean (mean model misspecified)"
        }
        "availability-feedback" => {
            for eta in [-0.2, 0.2] {
                let mut cfg = heartsteps();
                cfg.scenario = Some(Scenario::AvailabilityFeedback { eta, clamp: true });
                cells.extend(null_and_alt(&format!("eta {eta}"), cfg)?);
            }
            "availability depends on recent treatment, probabilities clamped to [0, 1]"
        }
        "power-shapes" => {
            let shapes = [
                ("quadratic", None),
                ("maintained", Some(EffectShape::Maintained)),
                ("slightly degraded", Some(EffectShape::slightly_degraded())),
                ("severely degraded", Some(EffectShape::severely_degraded())),
            ];
            for (label, shape) in shapes {
                for max_day in [22, 29] {
                    let mut cfg = heartsteps();
                    cfg.effect.as_mut().expect("effect set").max_day = max_day;
                    cfg.effect.as_mut().expect("effect set").shape = shape;
                    let n = sized(&cfg)?;
                    cells.push(CellSpec { row: label.into(), column: format!("max day {max_day}"), truth: cfg, n });
                }
            }
            "non-quadratic effect shapes (effect model misspecified), sized by projection"
        }
        "power-hetero" => {
            let trends = [
                ("constant", SigmaTrend::Constant),
                ("increasing", SigmaTrend::Increasing),
                ("decreasing", SigmaTrend::Decreasing),
                ("weekend", SigmaTrend::Weekend),
            ];
            for ratio in [0.8, 1.0, 1.2] {
                for (label, trend) in trends {
                    let mut cfg = heartsteps();
                    cfg.scenario = Some(Scenario::Heteroscedastic { ratio, trend });
                    let n = sized(&cfg)?;
                    cells.push(CellSpec { row: format!("ratio {ratio}"), column: label.into(), truth: cfg, n });
                }
            }
            "arm-specific error scales (unequal arm variances), tau 0.5, dbar 0.10"
        }
        "treatment-feedback" => {
            for gamma1 in [-0.1, -0.3, -0.5] {
                for gamma2 in [-0.1, -0.2, -0.3] {
                    let mut cfg = heartsteps();
                    cfg.scenario = Some(Scenario::TreatmentFeedback { eta1: -0.1, eta2: -0.1, gamma1, gamma2 });
                    let n = sized(&cfg)?;
                    cells.push(CellSpec {
                        row: format!("gamma1 {gamma1}"),
                        column: format!("gamma2 {gamma2}"),
                        truth: cfg,
                        n,
                    });
                }
            }
            "treatment and error feedback (availability and outcome depend on past treatment), eta1 = eta2 = -0.1"
        }
        "misspecified-effect" => {
            let n = sized(&heartsteps())?;
            for dbar in [0.10, 0.09, 0.08, 0.07] {
                let truth = config(42, TAU, None, dbar, MAX_DAY);
                cells.push(CellSpec { row: format!("true dbar {dbar:.2}"), column: "sized at 0.10".into(), truth, n });
            }
            "power when the average effect is overestimated at the design stage"
        }
        "misspecified-availability" => {
            let n = sized(&heartsteps())?;
            for tau in [0.5, 0.45, 0.4, 0.35] {
                let truth = config(42, tau, None, DBAR, MAX_DAY);
                cells.push(CellSpec { row: format!("true tau {tau:.2}"), column: "sized at 0.5".into(), truth, n });
            }
            "power when availability is overestimated at the design stage"
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown preset `{other}`; expected one of: {}",
                PRESET_IDS.join(", ")
            )))
        }
    };
    Ok((description.into(), cells))
}

/// Validates the preset id without running anything.
pub fn check(id: &str) -> Result<(), CliError> {
    build(id).map(|_| ())
}

pub fn run(id: &str, reps: usize, seed: u64) -> Result<PresetTable, CliError> {
    let (description, specs) = build(id)?;
    let mut columns: Vec<String> = Vec::new();
    let mut rows: Vec<PresetRow> = Vec::new();
    for spec in specs {
        let model = spec.truth.model(seed)?;
        let features = spec.truth.features(model.design())?;
        let settings = spec.truth.monte_carlo_settings(spec.n, reps, seed)?;
        let report = monte_carlo(&model, &features, &settings)?;
        if !columns.contains(&spec.column) {
            columns.push(spec.column.clone());
        }
        let cell = PresetCell { column: spec.column, n: spec.n, report };
        match rows.iter_mut().find(|r| r.label == spec.row) {
            Some(row) => row.cells.push(cell),
            None => rows.push(PresetRow { label: spec.row, cells: vec![cell] }),
        }
    }
    Ok(PresetTable {
        id: id.into(),
        description,
        reps,
        seed,
        columns,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds() {
        for id in PRESET_IDS {
            let (_, cells) = build(id).unwrap();
            assert!(!cells.is_empty(), "{id}");
            for c in &cells {
                c.truth.model(1).map(|_| ()).or_else(|e| match e {
                    // Treatment feedback calibrates during model construction.
                    CliError::Numeric(_) => Ok(()),
                    other => Err(other),
                })
                .unwrap();
            }
        }
        assert!(build("table-9").is_err());
    }

    #[test]
    fn heartsteps_cells_use_the_formula() {
        let (_, cells) = build("power-6wk").unwrap();
        let c = cells.iter().find(|c| c.row == "constant" && c.column == "tau 0.5").unwrap();
        assert_eq!(c.n, 42);
        let (_, cells) = build("misspecified-effect").unwrap();
        assert!(cells.iter().all(|c| c.n == 42));
    }
}
