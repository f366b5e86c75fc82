//! Data ingestion, built-in experts, adversarial Nature and experiment runs.

pub mod config;
pub mod data;
pub mod experts;
pub mod nature;
pub mod run;

use thiserror::Error;

use crate::blackwell::GameError;
use crate::metrics::MetricError;

pub use config::{ExperimentConfig, Mode, NatureKind, OracleKind};
pub use data::{ar1_regime_shift, generate, load_series, outcome_range, seasonal};
pub use experts::{expert_forecast, ExpertKind, WINDOW};
pub use nature::{CoverageNature, GreedyNature, Pit, QceNature};
pub use run::{
    features_at, run_experiment, series_for, state_digest, DecisionSummary, ExpertOracle, GameSummary, Report,
    RunOutput, StepRow, BUDGET_TOL, SCHEMA,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("data: {0}")]
    Data(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("step {t} (state {digest}): {source}")]
    Step {
        t: usize,
        digest: String,
        source: GameError,
    },
    #[error("metrics: {0}")]
    Metric(#[from] MetricError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
