//! The repeated forecasting game: ask an oracle for a forecast that keeps the
//! next payoff in the half-space opposite the running average, observe the
//! outcome, and fold the payoff into the average.
//!
//! With every realized inner product `<avg_{t-1}, π_t>` at most zero the
//! squared norm of the average stays below `B/t` at every step; in general it
//! stays below `B/t + (2/t) Σ max(0, <avg_{s-1}, π_s>)`. Semi-consistent
//! coordinates only need their positive part driven to zero, so the oracle
//! is steered by the positive part of those coordinates (the direction) and
//! the guarantee is on the norm of that directed average.

use std::io::Write;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::core_types::{csum, dot, norm_sq, Certificate, CoreError, Features, GameState, PayoffVector, StepRecord};
use crate::payoffs::{Block, PayoffError, PayoffSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Payoff(#[from] PayoffError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("oracle contract violated: {0}")]
    Contract(String),
}

#[derive(Debug, Error)]
pub enum GameError {
    #[error("step {t}: oracle failed: {source}")]
    Oracle { t: usize, source: OracleError },
    #[error("step {t}: {source}")]
    Payoff { t: usize, source: PayoffError },
    #[error("proposal for step {proposal} committed at step {expected}")]
    Stale { proposal: usize, expected: usize },
    #[error("writing history: {0}")]
    Io(#[from] std::io::Error),
}

/// What an oracle sees before announcing step `t`'s forecast.
pub struct Query<'a> {
    /// Step about to be played, starting at 1.
    pub t: usize,
    pub avg: &'a PayoffVector,
    /// `avg` with semi-consistent coordinates replaced by their positive part.
    pub direction: &'a [f64],
    pub features: &'a Features,
}

pub trait Oracle<F> {
    fn name(&self) -> &str;

    /// Announces a forecast and the claimed worst inner product of its payoff
    /// with `query.direction`. Randomized oracles draw from `rng`, which is
    /// keyed by the run seed and the step so runs replay exactly.
    fn respond(&mut self, query: &Query<'_>, rng: &mut dyn RngCore) -> Result<(F, Certificate), OracleError>;
}

/// Chooses the outcome after seeing the forecast.
pub trait Nature<F> {
    fn outcome(&mut self, x: &Features, forecast: &F, rng: &mut dyn RngCore) -> f64;
}

/// A forecast announced for step `t` and not yet resolved.
#[derive(Debug, Clone)]
pub struct Proposal<F> {
    pub t: usize,
    pub features: Features,
    pub forecast: F,
    pub certificate: Certificate,
}

pub struct Game<F> {
    spec: Arc<dyn PayoffSpec<F>>,
    mask: Vec<bool>,
    blocks: Vec<Block>,
    state: GameState<F>,
    seed: u64,
    direction: Vec<f64>,
    positive_inner: f64,
    positive_certificates: f64,
    trajectory: Vec<f64>,
}

/// Random stream purposes, so the oracle and Nature never share draws.
const ORACLE_STREAM: u64 = 0;
const NATURE_STREAM: u64 = 1;

/// Counter-based generator for `(seed, t, purpose)`.
pub fn step_rng(seed: u64, t: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((t as u64) << 8) | purpose);
    rng
}

impl<F: Clone> Game<F> {
    pub fn new(spec: Arc<dyn PayoffSpec<F>>, seed: u64) -> Self {
        let mask = spec.orthant_mask();
        let blocks = spec.blocks();
        let state = GameState::new(spec.labels().clone(), spec.bound());
        let direction = vec![0.0; mask.len()];
        Self {
            spec,
            mask,
            blocks,
            state,
            seed,
            direction,
            positive_inner: 0.0,
            positive_certificates: 0.0,
            trajectory: Vec::new(),
        }
    }

    pub fn spec(&self) -> &Arc<dyn PayoffSpec<F>> {
        &self.spec
    }

    pub fn state(&self) -> &GameState<F> {
        &self.state
    }

    pub fn t(&self) -> usize {
        self.state.t()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn history(&self) -> &[StepRecord<F>] {
        self.state.history()
    }

    /// Current approach direction.
    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    /// Squared norm of the directed average after each step.
    pub fn trajectory(&self) -> &[f64] {
        &self.trajectory
    }

    pub fn propose(&self, x: Features, oracle: &mut dyn Oracle<F>) -> Result<Proposal<F>, GameError> {
        let t = self.t() + 1;
        let query = Query {
            t,
            avg: self.state.avg(),
            direction: &self.direction,
            features: &x,
        };
        let mut rng = step_rng(self.seed, t, ORACLE_STREAM);
        let (forecast, certificate) = oracle
            .respond(&query, &mut rng)
            .map_err(|source| GameError::Oracle { t, source })?;
        Ok(Proposal {
            t,
            features: x,
            forecast,
            certificate,
        })
    }

    pub fn commit(&mut self, proposal: Proposal<F>, y: f64) -> Result<&StepRecord<F>, GameError> {
        let t = self.t() + 1;
        if proposal.t != t {
            return Err(GameError::Stale {
                proposal: proposal.t,
                expected: t,
            });
        }
        let payoff = self
            .spec
            .evaluate(&proposal.features, &proposal.forecast, y)
            .map_err(|source| GameError::Payoff { t, source })?;
        let directed_inner = dot(&self.direction, payoff.values());
        let inner = self
            .state
            .update_average(&payoff)
            .map_err(|e| GameError::Payoff { t, source: e.into() })?;
        self.positive_inner += directed_inner.max(0.0);
        self.positive_certificates += proposal.certificate.bound.max(0.0);
        self.direction = directed(self.state.avg().values(), &self.mask);
        self.trajectory.push(norm_sq(&self.direction));
        self.state.push_record(StepRecord {
            t,
            features: proposal.features,
            forecast: proposal.forecast,
            outcome: y,
            payoff,
            inner,
            directed_inner,
            certificate: proposal.certificate,
        });
        Ok(self.state.history().last().expect("just pushed"))
    }

    /// One full round with a known outcome.
    pub fn play_step(&mut self, x: Features, oracle: &mut dyn Oracle<F>, y: f64) -> Result<&StepRecord<F>, GameError> {
        let proposal = self.propose(x, oracle)?;
        self.commit(proposal, y)
    }

    /// One full round where Nature picks the outcome after seeing the forecast.
    pub fn play_against(
        &mut self,
        x: Features,
        oracle: &mut dyn Oracle<F>,
        nature: &mut dyn Nature<F>,
    ) -> Result<&StepRecord<F>, GameError> {
        let proposal = self.propose(x, oracle)?;
        let mut rng = step_rng(self.seed, proposal.t, NATURE_STREAM);
        let y = nature.outcome(&proposal.features, &proposal.forecast, &mut rng);
        self.commit(proposal, y)
    }

    pub fn report(&self) -> MiscalibrationReport {
        let t = self.t();
        let b = self.spec.bound();
        let tf = t.max(1) as f64;
        let per_block = self
            .blocks
            .iter()
            .map(|blk| {
                let n = norm_sq(&self.direction[blk.range()]);
                BlockReport {
                    name: blk.name.clone(),
                    norm_sq: n,
                    raw_norm_sq: n / (blk.scale * blk.scale),
                    bound: blk.bound,
                    scale: blk.scale,
                }
            })
            .collect();
        MiscalibrationReport {
            t,
            norm_sq: norm_sq(&self.direction),
            raw_norm_sq: self.state.avg().norm_sq(),
            bound: b,
            theorem_budget: b / tf,
            budget: b / tf + 2.0 / tf * self.positive_inner,
            certificate_budget: b / tf + 2.0 / tf * self.positive_certificates,
            per_block,
        }
    }

    /// One JSON object per step.
    pub fn write_history<W: Write>(&self, mut w: W) -> Result<(), GameError>
    where
        F: Serialize,
    {
        for r in self.history() {
            let line = HistoryLine {
                t: r.t,
                features: r.features.digest(),
                forecast: &r.forecast,
                outcome: r.outcome,
                payoff_norm_sq: r.payoff.norm_sq(),
                inner: r.directed_inner,
                certificate: r.certificate,
            };
            serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// `v` with the coordinates flagged in `mask` replaced by their positive part.
pub fn directed(v: &[f64], mask: &[bool]) -> Vec<f64> {
    v.iter()
        .zip(mask)
        .map(|(x, semi)| if *semi { x.max(0.0) } else { *x })
        .collect()
}

#[derive(Serialize)]
struct HistoryLine<'a, F> {
    t: usize,
    features: String,
    forecast: &'a F,
    outcome: f64,
    payoff_norm_sq: f64,
    inner: f64,
    certificate: Certificate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockReport {
    pub name: String,
    /// Squared norm of the block inside the combined (possibly scaled) average.
    pub norm_sq: f64,
    /// Same, in the component payoff's own units.
    pub raw_norm_sq: f64,
    pub bound: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiscalibrationReport {
    pub t: usize,
    /// Squared norm of the directed average (positive parts on
    /// semi-consistent coordinates).
    pub norm_sq: f64,
    /// Squared norm of the plain average.
    pub raw_norm_sq: f64,
    pub bound: f64,
    /// `B/t`.
    pub theorem_budget: f64,
    /// `B/t + (2/t) Σ max(0, realized directed inner products)`.
    pub budget: f64,
    /// `B/t + (2/t) Σ max(0, certificate bounds)`, known before the outcomes.
    pub certificate_budget: f64,
    pub per_block: Vec<BlockReport>,
}

/// Recomputes the report's budget from a logged history alone.
pub fn budget_from_history<F>(history: &[StepRecord<F>], bound: f64) -> f64 {
    let t = history.len().max(1) as f64;
    bound / t + 2.0 / t * csum(history.iter().map(|r| r.directed_inner.max(0.0)))
}

/// Plays the outcome it is told: the stream is fixed in advance.
pub struct Replay {
    outcomes: Vec<f64>,
    next: usize,
}

impl Replay {
    pub fn new(outcomes: Vec<f64>) -> Self {
        Self { outcomes, next: 0 }
    }
}

impl<F> Nature<F> for Replay {
    fn outcome(&mut self, _x: &Features, _forecast: &F, _rng: &mut dyn RngCore) -> f64 {
        let y = self.outcomes[self.next % self.outcomes.len()];
        self.next += 1;
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::PiecewiseDensity;
    use crate::payoffs::QuantilePayoff;

    struct Fixed(PiecewiseDensity);

    impl Oracle<PiecewiseDensity> for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn respond(
            &mut self,
            _q: &Query<'_>,
            _rng: &mut dyn RngCore,
        ) -> Result<(PiecewiseDensity, Certificate), OracleError> {
            Ok((self.0.clone(), Certificate::approximate(f64::INFINITY)))
        }
    }

    fn game() -> Game<PiecewiseDensity> {
        Game::new(Arc::new(QuantilePayoff::new(vec![0.1, 0.5, 0.9]).unwrap()), 7)
    }

    #[test]
    fn first_step_inner_product_is_zero() {
        let mut g = game();
        let mut o = Fixed(PiecewiseDensity::uniform(0.0, 1.0, 4).unwrap());
        let r = g.play_step(Features::default(), &mut o, 0.3).unwrap();
        assert_eq!(r.inner, 0.0);
        assert_eq!(r.directed_inner, 0.0);
    }

    #[test]
    fn budget_holds_for_fixed_forecasts() {
        let mut g = game();
        let mut o = Fixed(PiecewiseDensity::uniform(0.0, 1.0, 4).unwrap());
        let mut n = Replay::new(vec![0.95, 0.02, 0.97, 0.99]);
        for _ in 0..200 {
            g.play_against(Features::default(), &mut o, &mut n).unwrap();
            let r = g.report();
            assert!(r.norm_sq <= r.budget + 1e-12);
            assert!((r.budget - budget_from_history(g.history(), r.bound)).abs() < 1e-12);
            assert!((g.state().recursion_norm_sq() - r.raw_norm_sq).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_payoff_stream_has_zero_norm() {
        // Payoffs +0.5 and -0.5 cancel.
        let mut g = Game::new(Arc::new(QuantilePayoff::new(vec![0.5]).unwrap()), 0);
        let mut o = Fixed(PiecewiseDensity::uniform(0.0, 1.0, 2).unwrap());
        g.play_step(Features::default(), &mut o, 0.25).unwrap();
        g.play_step(Features::default(), &mut o, 0.75).unwrap();
        assert_eq!(g.report().norm_sq, 0.0);
    }

    #[test]
    fn stale_proposals_are_rejected() {
        let mut g = game();
        let mut o = Fixed(PiecewiseDensity::uniform(0.0, 1.0, 4).unwrap());
        let p = g.propose(Features::default(), &mut o).unwrap();
        let q = p.clone();
        g.commit(p, 0.5).unwrap();
        assert!(matches!(g.commit(q, 0.5), Err(GameError::Stale { .. })));
    }

    #[test]
    fn domain_errors_carry_the_step() {
        let mut g = game();
        let mut o = Fixed(PiecewiseDensity::uniform(0.0, 1.0, 4).unwrap());
        g.play_step(Features::default(), &mut o, 0.5).unwrap();
        let err = g.play_step(Features::default(), &mut o, 3.0).unwrap_err();
        assert!(matches!(err, GameError::Payoff { t: 2, .. }), "{err}");
    }

    #[test]
    fn history_lines_are_json() {
        let mut g = game();
        let mut o = Fixed(PiecewiseDensity::uniform(0.0, 1.0, 4).unwrap());
        for y in [0.1, 0.6] {
            g.play_step(Features::default(), &mut o, y).unwrap();
        }
        let mut buf = Vec::new();
        g.write_history(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1]["t"], 2);
        assert_eq!(lines[1]["outcome"], 0.6);
    }
}
