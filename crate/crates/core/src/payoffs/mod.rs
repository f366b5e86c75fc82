//! Payoff constructors for each calibration notion and their combination.
//!
//! A payoff maps (features, forecast, outcome) to a labelled vector whose
//! running average is the miscalibration. Payoffs on densities can also build
//! a [`DirectionalObjective`]: the inner product with a fixed direction at a
//! fixed set of outcomes, with a smoothed surrogate and its gradient in the
//! forecast masses. ORCA minimizes the worst of these over the outcomes.

use rand::RngCore;
use thiserror::Error;

use crate::core_types::{CoreError, Features, Labels, PayoffVector, PiecewiseDensity};

pub mod audit;
mod binary;
mod combine;
mod decision;
mod distribution;
mod moment;
mod quantile;
mod regret;
pub(crate) mod smooth;

pub use binary::BinaryPayoff;
pub use combine::{CombineMode, Combined};
pub use decision::{gauss_legendre, DecisionPayoff, PinballUtility, SquaredErrorUtility, Utility};
pub use distribution::DistributionPayoff;
pub use moment::MomentPayoff;
pub use quantile::{default_levels, DiscreteForecast, QuantilePayoff};
pub use regret::{Loss, RegretPayoff};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PayoffError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("outcome {0} is not binary")]
    NonBinary(f64),
    #[error("features carry {found} expert forecasts, payoff needs {needed}")]
    MissingExperts { needed: usize, found: usize },
    #[error("payoff `{0}` has no smoothed surrogate")]
    NotSmoothable(String),
    #[error("direction has {found} coordinates, payoff has {expected}")]
    Direction { expected: usize, found: usize },
}

/// A contiguous run of coordinates contributed by one component payoff.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub len: usize,
    /// Bound of the unscaled component payoff.
    pub bound: f64,
    /// Factor applied to the component's coordinates inside the combination.
    pub scale: f64,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

pub trait PayoffSpec<F = PiecewiseDensity>: Send + Sync {
    fn name(&self) -> &str;
    fn labels(&self) -> &Labels;
    /// Upper bound on the squared norm of any payoff vector.
    fn bound(&self) -> f64;
    fn evaluate(&self, x: &Features, forecast: &F, y: f64) -> Result<PayoffVector, PayoffError>;

    /// Whether the coordinates only need to approach the nonpositive orthant.
    fn semi_consistent(&self) -> bool {
        false
    }

    fn orthant_mask(&self) -> Vec<bool> {
        vec![self.semi_consistent(); self.labels().len()]
    }

    fn blocks(&self) -> Vec<Block> {
        vec![Block {
            name: self.name().to_string(),
            start: 0,
            len: self.labels().len(),
            bound: self.bound(),
            scale: 1.0,
        }]
    }
}

/// Inner products `<dir, π(x, p, y_k)>` for a fixed outcome list `y_k`.
pub trait DirectionalObjective: Send {
    fn outcomes(&self) -> usize;
    /// True (unsmoothed) inner product at outcome `k`.
    fn value(&self, p: &PiecewiseDensity, k: usize) -> f64;
    /// Smoothed inner product at outcome `k`; adds its gradient with respect
    /// to the masses of `p` into `grad`.
    fn smoothed(&self, p: &PiecewiseDensity, k: usize, grad: &mut [f64]) -> f64;
}

pub trait DensityPayoff: PayoffSpec<PiecewiseDensity> {
    fn smoothable(&self) -> bool {
        false
    }

    /// Builds the directional objective for forecasts on `template`'s bins.
    fn objective<'a>(
        &'a self,
        x: &'a Features,
        template: &PiecewiseDensity,
        ys: &[f64],
        dir: &[f64],
        tau: f64,
    ) -> Result<Box<dyn DirectionalObjective + 'a>, PayoffError> {
        let _ = (x, template, ys, dir, tau);
        Err(PayoffError::NotSmoothable(self.name().to_string()))
    }

    /// The smoothed surrogate as a full vector (defaults to the exact payoff).
    fn evaluate_smoothed(
        &self,
        x: &Features,
        p: &PiecewiseDensity,
        y: f64,
        tau: f64,
    ) -> Result<PayoffVector, PayoffError> {
        let _ = tau;
        self.evaluate(x, p, y)
    }

    /// Draws an outcome distributed as the forecast says it is.
    fn sample_outcome(&self, p: &PiecewiseDensity, rng: &mut dyn RngCore) -> f64 {
        p.sample(rng)
    }

    /// Draws an arbitrary admissible outcome (uniform over the support).
    fn arbitrary_outcome(&self, p: &PiecewiseDensity, rng: &mut dyn RngCore) -> f64 {
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        p.y_min() + u * p.range()
    }

    /// The finite outcome space, when outcomes are not the whole interval.
    fn outcome_set(&self, p: &PiecewiseDensity) -> Option<Vec<f64>> {
        let _ = p;
        None
    }

    /// Number of expert forecasts the payoff reads from the features.
    fn experts_needed(&self) -> usize {
        0
    }
}

pub(crate) fn check_dir(expected: usize, dir: &[f64]) -> Result<(), PayoffError> {
    if dir.len() != expected {
        return Err(PayoffError::Direction {
            expected,
            found: dir.len(),
        });
    }
    Ok(())
}

/// Rescales an outcome to [0, 1] relative to the forecast's support.
pub(crate) fn unit(p: &PiecewiseDensity, y: f64) -> f64 {
    ((y - p.y_min()) / p.range()).clamp(0.0, 1.0)
}
