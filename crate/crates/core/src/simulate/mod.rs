//! Synthetic trials and Monte Carlo power.
//!
//! A [`GenerativeModel`] couples a design, a scenario, the true effect path,
//! an availability pattern and an [`ErrorProcess`]. Subjects are generated
//! sequentially in time; [`monte_carlo`] simulates and analyzes independent
//! trials in parallel, each replicate and subject drawing from its own
//! deterministic random stream.

pub mod errors;
pub mod montecarlo;
pub mod rng;
pub mod scenario;

pub use errors::{ErrorFamily, ErrorProcess};
pub use montecarlo::{
    config_digest, monte_carlo, run_replicate, simulate_dataset, wilson_interval,
    MonteCarloReport, MonteCarloSettings, Tally,
};
pub use scenario::{
    calibrate_sigma_star, generate_subject, Calibration, EffectShape, GenerativeModel, Scenario,
    SigmaTrend, BASE_ALPHA,
};
