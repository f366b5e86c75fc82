//! Flat experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experts::ExpertKind;
use super::HarnessError;
use crate::orca::OrcaConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// A forecaster against an adversarial Nature.
    Adversarial,
    /// Experts and their ORCA recalibration on a series.
    Recalibrate,
    /// Newsvendor commitments from expert and recalibrated forecasts.
    Decision,
}

/// Forecaster played in adversarial mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Exact quantile-calibration oracle.
    Quantile,
    Orca,
    Aci,
    AciClassic,
    MomentGrid,
    HistogramGrid,
    /// The configured expert, played as is.
    Expert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NatureKind {
    /// Maximizes the next cumulative QCE.
    Qce,
    /// Maximizes the next squared norm of the average payoff.
    Greedy,
    /// Pushes ACI coverage away from its target.
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// CSV file with a `value` column; overrides `generator`.
    pub data: Option<PathBuf>,
    /// Synthetic series id (`ar1`, `seasonal`); defaults to `ar1` for
    /// recalibration and `seasonal` for decisions.
    pub generator: Option<String>,
    pub seed: u64,
    pub lags: usize,
    pub horizon: usize,
    /// Expert panel; the first one is recalibrated or used as the base.
    pub experts: Vec<ExpertKind>,
    pub oracle: OracleKind,
    pub nature: NatureKind,
    /// Scan a 10x finer outcome grid than the adversary's.
    pub dense_nature: bool,
    /// Outcome interval of adversarial runs.
    pub y_min: f64,
    pub y_max: f64,
    pub bins: usize,
    pub adversary_grid: usize,
    pub steps: usize,
    pub lr: f64,
    pub tau: f64,
    pub early_stop: f64,
    /// Decision-loss asymmetry.
    pub lambda: f64,
    /// ACI target coverage and level-grid resolution.
    pub beta: f64,
    pub aci_grid: usize,
    /// Ticks per axis of the moment and histogram grids.
    pub grid_ticks: usize,
    pub histogram_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let orca = OrcaConfig::default();
        Self {
            mode: Mode::Adversarial,
            data: None,
            generator: None,
            seed: 0,
            lags: 24,
            horizon: 1000,
            experts: vec![ExpertKind::Marginal],
            oracle: OracleKind::Quantile,
            nature: NatureKind::Qce,
            dense_nature: false,
            y_min: 0.0,
            y_max: 1.0,
            bins: orca.bins,
            adversary_grid: orca.adversary_grid,
            steps: orca.steps,
            lr: orca.lr,
            tau: orca.tau,
            early_stop: orca.early_stop,
            lambda: 0.5,
            beta: 0.9,
            aci_grid: 100,
            grid_ticks: 20,
            histogram_bins: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Data paths are relative to the config file.
        if let (Some(d), Some(dir)) = (&cfg.data, path.parent()) {
            if d.is_relative() {
                cfg.data = Some(dir.join(d));
            }
        }
        Ok(cfg)
    }

    pub fn generator(&self) -> &str {
        match (&self.generator, self.mode) {
            (Some(g), _) => g,
            (None, Mode::Decision) => "seasonal",
            (None, _) => "ar1",
        }
    }

    pub fn orca(&self) -> OrcaConfig {
        OrcaConfig {
            bins: self.bins,
            adversary_grid: self.adversary_grid,
            steps: self.steps,
            lr: self.lr,
            tau: self.tau,
            early_stop: self.early_stop,
            ..OrcaConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.orca()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if self.experts.is_empty() {
            return bad("at least one expert is required".into());
        }
        if !(self.y_min < self.y_max) || !self.y_min.is_finite() || !self.y_max.is_finite() {
            return bad(format!("empty outcome interval [{}, {}]", self.y_min, self.y_max));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return bad(format!("lambda = {} outside [0, 1)", self.lambda));
        }
        if !(0.0 < self.beta && self.beta < 1.0) {
            return bad(format!("beta = {} outside (0, 1)", self.beta));
        }
        if self.aci_grid == 0 || self.grid_ticks == 0 || self.histogram_bins < 2 {
            return bad("aci_grid and grid_ticks must be positive, histogram_bins at least 2".into());
        }
        let aci = matches!(self.oracle, OracleKind::Aci | OracleKind::AciClassic);
        let grid = matches!(self.oracle, OracleKind::MomentGrid | OracleKind::HistogramGrid);
        if self.mode == Mode::Adversarial {
            if self.nature == NatureKind::Coverage && !aci {
                return bad("the coverage Nature needs an ACI oracle".into());
            }
            if self.nature == NatureKind::Qce && grid {
                return bad("grid forecasts have no PIT; use the greedy Nature".into());
            }
        }
        Ok(())
    }
}
