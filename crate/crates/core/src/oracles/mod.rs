//! Exact half-space oracles for specific calibration notions: adaptive
//! conformal inference, full quantile calibration via step quantile
//! functions, and the grid fixed-point oracles for moment and histogram
//! calibration.

mod aci;
mod grid;
mod linalg;
mod quantile_step;

pub use aci::{aci_deterministic, bisect_root, AciForecast, AciMode, AciOracle, AciPayoff};
pub use grid::{GridForecast, GridKind, GridOracle, GridPayoff, GridSolution, Triangulation, MAX_GRID_CELLS};
pub use quantile_step::{QuantileStepOracle, StepCandidate};
