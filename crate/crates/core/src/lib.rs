//! Online probabilistic forecasting with calibration guarantees.
//!
//! Calibration notions are expressed as vector payoffs whose running average
//! must shrink to zero. A forecaster that always answers with a forecast whose
//! payoff is nonpositive against the current average (a half-space oracle)
//! keeps `‖avg‖² ≤ B/t` against any outcome sequence. The crate provides the
//! payoffs, exact oracles for several of them, a gradient-based oracle with
//! per-step certificates, expert recalibration, metrics and an experiment
//! harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blackwell;
pub mod core_types;
pub mod harness;
pub mod metrics;
pub mod oracles;
pub mod orca;
pub mod payoffs;
pub mod recalibration;
