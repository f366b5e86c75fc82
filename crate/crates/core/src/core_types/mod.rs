//! Value types shared by every other module: forecast densities, labelled
//! payoff vectors and the running game state.

mod density;
mod state;
mod sum;
mod vector;

pub use density::{uniform_edges, PiecewiseDensity, MASS_TOLERANCE};
pub use state::{naive_average, norm_sq, Certificate, Features, GameState, StepRecord};
pub use sum::{csum, CompensatedSum};
pub use vector::{dot, labels_from, Labels, PayoffVector};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("shape mismatch: {edges} edges/labels for {masses} masses/values")]
    Shape { edges: usize, masses: usize },
    #[error("edges must be finite and strictly increasing")]
    Edges,
    #[error("mass {0} is negative or non-finite: {1}")]
    NegativeMass(usize, f64),
    #[error("masses sum to {0}, expected 1")]
    MassSum(f64),
    #[error("outcome {y} outside [{lo}, {hi}]")]
    Domain { y: f64, lo: f64, hi: f64 },
    #[error("level {0} outside [0, 1]")]
    Level(f64),
    #[error("densities live on different intervals")]
    Support,
    #[error("label mismatch between vectors of length {left} and {right}")]
    LabelMismatch { left: usize, right: usize },
}
