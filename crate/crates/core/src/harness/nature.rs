//! Adversarial outcome choices.

use std::sync::Arc;

use rand::RngCore;

use crate::blackwell::Nature;
use crate::core_types::{Features, PiecewiseDensity};
use crate::oracles::AciForecast;
use crate::payoffs::PayoffSpec;

/// Forecasts whose PIT Nature can compute.
pub trait Pit {
    fn pit(&self, x: &Features, y: f64) -> f64;
}

impl Pit for PiecewiseDensity {
    fn pit(&self, _x: &Features, y: f64) -> f64 {
        self.cdf_clamped(y)
    }
}

/// An ACI play is judged through the base forecast's PIT.
impl Pit for AciForecast {
    fn pit(&self, x: &Features, y: f64) -> f64 {
        x.experts.first().map_or(0.0, |b| b.cdf_clamped(y))
    }
}

/// Picks the grid outcome that maximizes the cumulative QCE after this step
/// (smallest outcome on ties).
#[derive(Debug, Clone)]
pub struct QceNature {
    grid: Vec<f64>,
    levels: Vec<f64>,
    counts: Vec<usize>,
    t: usize,
}

impl QceNature {
    pub fn new(grid: Vec<f64>, levels: Vec<f64>) -> Self {
        let counts = vec![0; levels.len()];
        Self {
            grid,
            levels,
            counts,
            t: 0,
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// QCE after one more step with PIT `u`.
    pub fn qce_with(&self, u: f64) -> f64 {
        let t = (self.t + 1) as f64;
        self.counts
            .iter()
            .zip(&self.levels)
            .map(|(c, q)| {
                let f = (*c + usize::from(u <= *q)) as f64 / t;
                (f - q) * (f - q)
            })
            .sum()
    }

    pub fn choose(&mut self, pit: impl Fn(f64) -> f64) -> f64 {
        let mut best = (f64::NEG_INFINITY, self.grid[0], 0.0);
        for y in &self.grid {
            let u = pit(*y);
            let v = self.qce_with(u);
            if v > best.0 {
                best = (v, *y, u);
            }
        }
        for (c, q) in self.counts.iter_mut().zip(&self.levels) {
            if best.2 <= *q {
                *c += 1;
            }
        }
        self.t += 1;
        best.1
    }
}

impl<F: Pit> Nature<F> for QceNature {
    fn outcome(&mut self, x: &Features, forecast: &F, _rng: &mut dyn RngCore) -> f64 {
        self.choose(|y| forecast.pit(x, y))
    }
}

/// Picks the grid outcome that maximizes the squared norm of the average
/// payoff after this step.
pub struct GreedyNature<F> {
    spec: Arc<dyn PayoffSpec<F>>,
    grid: Vec<f64>,
    sums: Vec<f64>,
}

impl<F> GreedyNature<F> {
    pub fn new(spec: Arc<dyn PayoffSpec<F>>, grid: Vec<f64>) -> Self {
        let n = spec.labels().len();
        Self {
            spec,
            grid,
            sums: vec![0.0; n],
        }
    }
}

impl<F> Nature<F> for GreedyNature<F> {
    fn outcome(&mut self, x: &Features, forecast: &F, _rng: &mut dyn RngCore) -> f64 {
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        for y in &self.grid {
            let Ok(v) = self.spec.evaluate(x, forecast, *y) else {
                continue;
            };
            let n: f64 = self.sums.iter().zip(v.values()).map(|(s, p)| (s + p).powi(2)).sum();
            if best.as_ref().is_none_or(|b| n > b.0) {
                best = Some((n, *y, v.values().to_vec()));
            }
        }
        let (_, y, v) = best.expect("grid has an admissible outcome");
        for (s, p) in self.sums.iter_mut().zip(v) {
            *s += p;
        }
        y
    }
}

/// Pushes ACI coverage away from its target: when running coverage is at
/// or above `β`, the outcome least likely to be covered, otherwise the one
/// most likely to be covered.
pub struct CoverageNature {
    beta: f64,
    levels: Vec<f64>,
    grid: Vec<f64>,
    covered: usize,
    t: usize,
}

impl CoverageNature {
    /// `levels` is the ACI level grid indexed by action.
    pub fn new(beta: f64, levels: Vec<f64>, grid: Vec<f64>) -> Self {
        Self {
            beta,
            levels,
            grid,
            covered: 0,
            t: 0,
        }
    }

    pub fn coverage(&self) -> f64 {
        self.covered as f64 / self.t.max(1) as f64
    }
}

impl Nature<AciForecast> for CoverageNature {
    fn outcome(&mut self, x: &Features, f: &AciForecast, _rng: &mut dyn RngCore) -> f64 {
        let base = &x.experts[0];
        let quantiles: Vec<(f64, f64)> = f
            .weights
            .iter()
            .map(|(a, p)| (base.quantile_clamped(self.levels[*a]), *p))
            .collect();
        let chance = |y: f64| -> f64 { quantiles.iter().filter(|(q, _)| y <= *q).map(|(_, p)| p).sum() };
        let above = self.t == 0 || self.coverage() >= self.beta;
        let mut best = (f64::NAN, self.grid[0]);
        for y in &self.grid {
            let c = chance(*y);
            let better = best.0.is_nan() || if above { c < best.0 } else { c > best.0 };
            if better {
                best = (c, *y);
            }
        }
        self.t += 1;
        if f.covers(best.1) {
            self.covered += 1;
        }
        best.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoffs::default_levels;

    #[test]
    fn first_step_uniform_picks_lowest_extreme() {
        let grid: Vec<f64> = (0..50).map(|i| (i as f64 + 0.5) / 50.0).collect();
        let mut n = QceNature::new(grid.clone(), default_levels());
        let p = PiecewiseDensity::uniform(0.0, 1.0, 50).unwrap();
        let y = n.choose(|y| p.cdf_clamped(y));
        assert_eq!(y, grid[0]);
    }

    #[test]
    fn choice_is_optimal_and_deterministic() {
        let grid: Vec<f64> = (0..20).map(|i| (i as f64 + 0.5) / 20.0).collect();
        let p = PiecewiseDensity::from_weights(crate::core_types::uniform_edges(0.0, 1.0, 4), &[1.0, 5.0, 1.0, 3.0])
            .unwrap();
        let mut a = QceNature::new(grid.clone(), default_levels());
        let mut b = a.clone();
        for _ in 0..5 {
            let before = a.clone();
            let y = a.choose(|y| p.cdf_clamped(y));
            assert_eq!(y, b.choose(|y| p.cdf_clamped(y)));
            let got = before.qce_with(p.cdf_clamped(y));
            for g in &grid {
                assert!(before.qce_with(p.cdf_clamped(*g)) <= got);
            }
        }
    }
}
