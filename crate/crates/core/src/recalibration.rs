//! No-regret recalibration of expert forecast streams.
//!
//! The default recalibrator runs ORCA against a normalized combination of
//! quantile calibration, regret against every expert under CRPS and MSE, and
//! first/second moment matching, warm-started from the first expert. The
//! binned variant routes each step to an independent game chosen by the
//! expert's forecast mean.

use std::sync::Arc;

use serde::Serialize;

use crate::blackwell::{Game, GameError, Oracle};
use crate::core_types::{csum, Features, PiecewiseDensity, StepRecord};
use crate::orca::{Orca, OrcaConfig, WarmStart};
use crate::payoffs::{
    CombineMode, Combined, DensityPayoff, Loss, MomentPayoff, PayoffError, PayoffSpec, QuantilePayoff, RegretPayoff,
};

/// Quantile calibration, CRPS and MSE regret against `experts` streams, and
/// the first two moments, each block scaled to unit bound.
pub fn standard_payoff(experts: usize) -> Result<Combined, PayoffError> {
    let parts: Vec<Arc<dyn DensityPayoff>> = vec![
        Arc::new(QuantilePayoff::standard()),
        Arc::new(RegretPayoff::new(experts, Loss::Crps)?),
        Arc::new(RegretPayoff::new(experts, Loss::Mse)?),
        Arc::new(MomentPayoff::new(vec![1, 2])?),
    ];
    Combined::with_names(
        vec![
            ("quantile".into(), parts[0].clone()),
            ("regret_crps".into(), parts[1].clone()),
            ("regret_mse".into(), parts[2].clone()),
            ("moment".into(), parts[3].clone()),
        ],
        CombineMode::Normalized,
    )
}

/// ORCA recalibration of a panel of experts.
pub struct Recalibrator {
    payoff: Arc<Combined>,
    game: Game<PiecewiseDensity>,
    orca: Orca,
}

impl Recalibrator {
    pub fn new(experts: usize, y_min: f64, y_max: f64, config: OrcaConfig, seed: u64) -> Result<Self, GameError> {
        let payoff = Arc::new(standard_payoff(experts).map_err(|source| GameError::Payoff { t: 0, source })?);
        Self::with_payoff(payoff, y_min, y_max, config, seed)
    }

    pub fn with_payoff(
        payoff: Arc<Combined>,
        y_min: f64,
        y_max: f64,
        config: OrcaConfig,
        seed: u64,
    ) -> Result<Self, GameError> {
        let orca = Orca::new(payoff.clone(), y_min, y_max, config)
            .map_err(|source| GameError::Oracle { t: 0, source })?
            .with_warm_start(WarmStart::Expert);
        let game = Game::new(payoff.clone() as Arc<dyn PayoffSpec>, seed);
        Ok(Self { payoff, game, orca })
    }

    pub fn payoff(&self) -> &Arc<Combined> {
        &self.payoff
    }

    pub fn game(&self) -> &Game<PiecewiseDensity> {
        &self.game
    }

    pub fn orca(&self) -> &Orca {
        &self.orca
    }

    /// The recalibrated forecast for the next step.
    pub fn recalibrate_step(&mut self, x: &Features) -> Result<PiecewiseDensity, GameError> {
        self.check(x)?;
        Ok(self.game.propose(x.clone(), &mut self.orca)?.forecast)
    }

    /// Forecasts, observes `y`, and updates the average.
    pub fn step(&mut self, x: Features, y: f64) -> Result<&StepRecord<PiecewiseDensity>, GameError> {
        self.check(&x)?;
        self.game.play_step(x, &mut self.orca, y)
    }

    fn check(&self, x: &Features) -> Result<(), GameError> {
        let needed = self.payoff.experts_needed();
        if x.experts.len() < needed {
            return Err(GameError::Payoff {
                t: self.game.t() + 1,
                source: PayoffError::MissingExperts {
                    needed,
                    found: x.experts.len(),
                },
            });
        }
        Ok(())
    }

    pub fn ledger(&self, experts: usize) -> RegretLedger {
        RegretLedger::from_history(self.game.history(), experts, &self.payoff)
    }
}

/// Per-cell games keyed on the first expert's forecast mean.
pub struct BinnedRecalibrator {
    y_min: f64,
    y_max: f64,
    cells: Vec<(Game<PiecewiseDensity>, Box<dyn Oracle<PiecewiseDensity>>)>,
    routes: Vec<usize>,
}

impl BinnedRecalibrator {
    /// `make` builds the payoff-and-oracle pair of each cell.
    pub fn new(
        cells: usize,
        y_min: f64,
        y_max: f64,
        seed: u64,
        mut make: impl FnMut() -> (Arc<dyn PayoffSpec>, Box<dyn Oracle<PiecewiseDensity>>),
    ) -> Self {
        let cells = (0..cells.max(1))
            .map(|j| {
                let (spec, oracle) = make();
                (Game::new(spec, seed.wrapping_add(j as u64)), oracle)
            })
            .collect();
        Self {
            y_min,
            y_max,
            cells,
            routes: Vec::new(),
        }
    }

    pub fn cell_of(&self, x: &Features) -> usize {
        let m = self.cells.len();
        let Some(e) = x.experts.first() else { return 0 };
        let u = (e.mean() - self.y_min) / (self.y_max - self.y_min);
        ((u * m as f64).floor().max(0.0) as usize).min(m - 1)
    }

    pub fn step(&mut self, x: Features, y: f64) -> Result<&StepRecord<PiecewiseDensity>, GameError> {
        let j = self.cell_of(&x);
        self.routes.push(j);
        let (game, oracle) = &mut self.cells[j];
        game.play_step(x, oracle.as_mut(), y)
    }

    /// Cell of each step, in order.
    pub fn routes(&self) -> &[usize] {
        &self.routes
    }

    pub fn cell_games(&self) -> impl Iterator<Item = &Game<PiecewiseDensity>> {
        self.cells.iter().map(|c| &c.0)
    }

    /// Global history in step order, rebuilt from the cells.
    pub fn history(&self) -> Vec<&StepRecord<PiecewiseDensity>> {
        let mut next = vec![0usize; self.cells.len()];
        self.routes
            .iter()
            .map(|j| {
                let r = &self.cells[*j].0.history()[next[*j]];
                next[*j] += 1;
                r
            })
            .collect()
    }

    /// Norm of the pooled average payoff and the step-weighted sum of the
    /// per-cell norms, which bounds it.
    pub fn aggregate(&self) -> (f64, f64) {
        let t = self.routes.len().max(1) as f64;
        let n = self.cells[0].0.spec().labels().len();
        let mut pooled = vec![0.0; n];
        let mut weighted = 0.0;
        for (g, _) in &self.cells {
            let w = g.t() as f64 / t;
            let avg = g.state().avg().values();
            for (p, a) in pooled.iter_mut().zip(avg) {
                *p += w * a;
            }
            weighted += w * g.state().avg().norm_sq().sqrt();
        }
        (csum(pooled.iter().map(|x| x * x)).sqrt(), weighted)
    }
}

/// Cumulative losses of the recalibrated stream and each expert.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretLedger {
    pub steps: usize,
    pub crps: LossLedger,
    pub mse: LossLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossLedger {
    pub loss: Loss,
    pub forecaster: f64,
    pub experts: Vec<f64>,
    /// Average regret block of the game, unscaled.
    pub block: Vec<f64>,
}

impl LossLedger {
    /// Mean loss of the forecaster minus that of the best expert.
    pub fn regret(&self, steps: usize) -> f64 {
        let t = steps.max(1) as f64;
        let best = self.experts.iter().copied().fold(f64::INFINITY, f64::min);
        (self.forecaster - best) / t
    }

    pub fn positive_norm(&self) -> f64 {
        csum(self.block.iter().map(|v| v.max(0.0).powi(2))).sqrt()
    }

    pub fn positive_sup(&self) -> f64 {
        self.block.iter().map(|v| v.max(0.0)).fold(0.0, f64::max)
    }
}

impl RegretLedger {
    pub fn from_history(history: &[StepRecord<PiecewiseDensity>], experts: usize, payoff: &Combined) -> Self {
        let blocks = payoff.blocks();
        let block_avg = |name: &str| -> Vec<f64> {
            let Some(b) = blocks.iter().find(|b| b.name == name) else {
                return Vec::new();
            };
            let t = history.len().max(1) as f64;
            b.range()
                .map(|k| csum(history.iter().map(|r| r.payoff.values()[k])) / t / b.scale)
                .collect()
        };
        let ledger = |loss: Loss, name: &str| LossLedger {
            loss,
            forecaster: csum(
                history
                    .iter()
                    .map(|r| loss.eval(&r.forecast, r.outcome).unwrap_or(f64::NAN)),
            ),
            experts: (0..experts)
                .map(|i| {
                    csum(
                        history
                            .iter()
                            .map(|r| loss.eval(&r.features.experts[i], r.outcome).unwrap_or(f64::NAN)),
                    )
                })
                .collect(),
            block: block_avg(name),
        };
        Self {
            steps: history.len(),
            crps: ledger(Loss::Crps, "regret_crps"),
            mse: ledger(Loss::Mse, "regret_mse"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretReport {
    pub loss: Loss,
    pub regret: f64,
    pub forecaster_mean: f64,
    pub expert_means: Vec<f64>,
    pub positive_norm: f64,
    pub positive_sup: f64,
    /// `‖(avg)⁺‖₂ ≥ ‖(avg)⁺‖_∞ ≥ R_T` up to 1e-10.
    pub chain_holds: bool,
}

pub fn regret_report(ledger: &LossLedger, steps: usize) -> RegretReport {
    let t = steps.max(1) as f64;
    let regret = ledger.regret(steps);
    let norm = ledger.positive_norm();
    let sup = ledger.positive_sup();
    RegretReport {
        loss: ledger.loss,
        regret,
        forecaster_mean: ledger.forecaster / t,
        expert_means: ledger.experts.iter().map(|l| l / t).collect(),
        positive_norm: norm,
        positive_sup: sup,
        chain_holds: norm + 1e-10 >= sup && sup + 1e-10 >= regret,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::uniform_edges;

    #[test]
    fn standard_payoff_layout() {
        let p = standard_payoff(2).unwrap();
        assert_eq!(p.labels().len(), 99 + 2 + 2 + 2);
        assert_eq!(p.bound(), 4.0);
        assert_eq!(p.experts_needed(), 2);
    }

    #[test]
    fn missing_expert_is_an_error() {
        let mut r = Recalibrator::new(1, 0.0, 1.0, OrcaConfig::default(), 0).unwrap();
        assert!(matches!(
            r.recalibrate_step(&Features::default()),
            Err(GameError::Payoff {
                source: PayoffError::MissingExperts { .. },
                ..
            })
        ));
    }

    #[test]
    fn calibrated_expert_stays_put() {
        // Zero average at the first step: the warm start is returned as is.
        let e = PiecewiseDensity::from_weights(uniform_edges(0.0, 1.0, 50), &[1.0; 50]).unwrap();
        let mut r = Recalibrator::new(1, 0.0, 1.0, OrcaConfig::default(), 0).unwrap();
        let p = r.recalibrate_step(&Features::with_experts(vec![e.clone()])).unwrap();
        assert!(p.wasserstein1(&e).unwrap() < 1e-9);
    }

    #[test]
    fn ledger_matches_game_average() {
        let edges = uniform_edges(0.0, 1.0, 50);
        let e = PiecewiseDensity::from_weights(edges, &(0..50).map(|i| 1.0 + i as f64).collect::<Vec<_>>()).unwrap();
        let cfg = OrcaConfig {
            steps: 20,
            ..OrcaConfig::default()
        };
        let mut r = Recalibrator::new(1, 0.0, 1.0, cfg, 0).unwrap();
        for t in 0..15 {
            let y = (t as f64 * 0.37).fract();
            r.step(Features::with_experts(vec![e.clone()]), y).unwrap();
        }
        let l = r.ledger(1);
        for led in [&l.crps, &l.mse] {
            let rep = regret_report(led, l.steps);
            assert!((led.block[0] - rep.regret).abs() < 1e-12);
            assert!(rep.chain_holds);
        }
    }
}
