//! Evaluation metrics over a game history.

use serde::Serialize;
use thiserror::Error;

use crate::blackwell::directed;
use crate::core_types::{csum, norm_sq, CompensatedSum, PiecewiseDensity, StepRecord};
use crate::payoffs::gauss_legendre;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty history")]
    Empty,
    #[error("value function is not monotone on the outcome range")]
    NotMonotone,
    #[error("{0}")]
    Invalid(String),
}

/// `F_t(y_t)` for each step.
pub fn pits(history: &[StepRecord<PiecewiseDensity>]) -> Vec<f64> {
    history.iter().map(|r| r.forecast.cdf_clamped(r.outcome)).collect()
}

/// `Σ_q (f_q - q)²` with `f_q` the frequency of `PIT ≤ q`.
pub fn qce_from_pits(pits: &[f64], levels: &[f64]) -> Result<f64, MetricError> {
    if pits.is_empty() {
        return Err(MetricError::Empty);
    }
    let t = pits.len() as f64;
    Ok(csum(levels.iter().map(|q| {
        let f = pits.iter().filter(|u| **u <= *q).count() as f64 / t;
        (f - q) * (f - q)
    })))
}

pub fn qce(history: &[StepRecord<PiecewiseDensity>], levels: &[f64]) -> Result<f64, MetricError> {
    qce_from_pits(&pits(history), levels)
}

/// QCE of every prefix of the stream.
pub fn qce_trajectory(pits: &[f64], levels: &[f64]) -> Vec<f64> {
    let mut counts = vec![0usize; levels.len()];
    pits.iter()
        .enumerate()
        .map(|(i, u)| {
            for (c, q) in counts.iter_mut().zip(levels) {
                if *u <= *q {
                    *c += 1;
                }
            }
            let t = (i + 1) as f64;
            csum(counts.iter().zip(levels).map(|(c, q)| (*c as f64 / t - q).powi(2)))
        })
        .collect()
}

/// Symmetric mean absolute percentage error; steps where both values are
/// zero contribute zero.
pub fn smape(pairs: &[(f64, f64)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let s = csum(pairs.iter().map(|(y, yh)| {
        let d = y.abs() + yh.abs();
        if d == 0.0 {
            0.0
        } else {
            (y - yh).abs() / (d / 2.0)
        }
    }));
    Ok(s / pairs.len() as f64)
}

fn check_lambda(lambda: f64) -> Result<(), MetricError> {
    if (0.0..1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(MetricError::Invalid(format!("λ = {lambda} outside [0, 1)")))
    }
}

/// `Σ_i (1+λ)(y_i - a_i)⁺ + (1-λ)(a_i - y_i)⁺`.
pub fn decision_loss(a: &[f64], y: &[f64], lambda: f64) -> Result<f64, MetricError> {
    check_lambda(lambda)?;
    if a.len() != y.len() {
        return Err(MetricError::Invalid(format!(
            "{} commitments for {} outcomes",
            a.len(),
            y.len()
        )));
    }
    Ok(csum(a.iter().zip(y).map(|(a, y)| {
        (1.0 + lambda) * (y - a).max(0.0) + (1.0 - lambda) * (a - y).max(0.0)
    })))
}

/// Per-period minimizers of the expected decision loss: the
/// `(1+λ)/2`-quantiles.
pub fn optimal_commitment(forecasts: &[PiecewiseDensity], lambda: f64) -> Result<Vec<f64>, MetricError> {
    check_lambda(lambda)?;
    Ok(forecasts
        .iter()
        .map(|p| p.quantile_clamped((1.0 + lambda) / 2.0))
        .collect())
}

/// `E_{y∼p}[(1+λ)(y - a)⁺ + (1-λ)(a - y)⁺]` in closed form.
pub fn expected_decision_loss(p: &PiecewiseDensity, a: f64, lambda: f64) -> f64 {
    let e = p.edges();
    csum(p.masses().iter().enumerate().map(|(i, m)| {
        let (lo, hi) = (e[i], e[i + 1]);
        let w = hi - lo;
        // Mass-weighted mean of (y - a)⁺ and (a - y)⁺ over a uniform bin.
        let above = if a <= lo {
            0.5 * (lo + hi) - a
        } else if a >= hi {
            0.0
        } else {
            (hi - a).powi(2) / (2.0 * w)
        };
        let below = above - (0.5 * (lo + hi) - a);
        m * ((1.0 + lambda) * above + (1.0 - lambda) * below)
    }))
}

/// `E_p[v(y)]`, exact for polynomials of degree below 64.
pub fn expected_value(p: &PiecewiseDensity, v: &dyn Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = gauss_legendre(32);
    let e = p.edges();
    csum(p.masses().iter().enumerate().map(|(i, m)| {
        let (lo, hi) = (e[i], e[i + 1]);
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        m * 0.5 * csum(nodes.iter().zip(&weights).map(|(x, w)| w * v(mid + half * x)))
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovCoverage {
    pub r: f64,
    /// Frequency of `v(y_t) ≥ r E_{p_t}[v]`.
    pub frequency: f64,
    /// Excess of the PIT tail frequency over `1/r`.
    pub slack: f64,
}

impl MarkovCoverage {
    pub fn holds(&self) -> bool {
        self.frequency <= 1.0 / self.r + self.slack + 1e-12
    }
}

/// How often the realized value exceeds `r` times its forecast expectation,
/// for a nonnegative monotone value function.
pub fn markov_coverage(
    history: &[StepRecord<PiecewiseDensity>],
    v: &dyn Fn(f64) -> f64,
    r: f64,
) -> Result<MarkovCoverage, MetricError> {
    let pairs: Vec<(&PiecewiseDensity, f64)> = history.iter().map(|h| (&h.forecast, h.outcome)).collect();
    markov_coverage_pairs(&pairs, v, r)
}

/// [`markov_coverage`] over `(forecast, outcome)` pairs.
pub fn markov_coverage_pairs(
    pairs: &[(&PiecewiseDensity, f64)],
    v: &dyn Fn(f64) -> f64,
    r: f64,
) -> Result<MarkovCoverage, MetricError> {
    let first = pairs.first().ok_or(MetricError::Empty)?.0;
    if !(r > 1.0) {
        return Err(MetricError::Invalid(format!("r = {r} must exceed 1")));
    }
    let (lo, hi) = (first.y_min(), first.y_max());
    let grid: Vec<f64> = (0..=200).map(|i| v(lo + (hi - lo) * i as f64 / 200.0)).collect();
    let up = grid.windows(2).all(|w| w[1] >= w[0]);
    let down = grid.windows(2).all(|w| w[1] <= w[0]);
    if !(up || down) || grid.iter().any(|x| *x < 0.0) {
        return Err(MetricError::NotMonotone);
    }
    let s = 1.0 / r;
    let t = pairs.len() as f64;
    let mut hits = 0usize;
    let mut tail = 0usize;
    for (p, y) in pairs {
        let ev = expected_value(p, v);
        if v(*y) >= r * ev {
            hits += 1;
        }
        let u = p.cdf_clamped(*y);
        if (up && u >= 1.0 - s) || (!up && u <= s) {
            tail += 1;
        }
    }
    Ok(MarkovCoverage {
        r,
        frequency: hits as f64 / t,
        slack: (tail as f64 / t - s).max(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub steps: usize,
    pub qce: f64,
    pub smape: f64,
    pub mean_crps: f64,
    pub mean_decision_loss: Option<f64>,
    /// Squared norm of the directed average payoff after each step.
    pub miscalibration: Vec<f64>,
    /// Largest positive average regret after each step, when regret blocks exist.
    pub regret: Option<Vec<f64>>,
}

impl RunReport {
    /// Recomputes every field from the history. `mask` flags semi-consistent
    /// coordinates and `regret_coords` the coordinates holding regrets.
    pub fn from_history(
        history: &[StepRecord<PiecewiseDensity>],
        levels: &[f64],
        mask: &[bool],
        regret_coords: &[usize],
        decision_losses: Option<&[f64]>,
    ) -> Result<Self, MetricError> {
        if history.is_empty() {
            return Err(MetricError::Empty);
        }
        let n = history[0].payoff.len();
        let mut sums = vec![CompensatedSum::new(); n];
        let mut miscalibration = Vec::with_capacity(history.len());
        let mut regret = Vec::with_capacity(history.len());
        for (i, r) in history.iter().enumerate() {
            for (s, v) in sums.iter_mut().zip(r.payoff.values()) {
                s.add(*v);
            }
            let t = (i + 1) as f64;
            let avg: Vec<f64> = sums.iter().map(|s| s.value() / t).collect();
            let d = directed(&avg, mask);
            miscalibration.push(norm_sq(&d));
            regret.push(regret_coords.iter().map(|k| avg[*k]).fold(f64::NEG_INFINITY, f64::max));
        }
        let pairs: Vec<(f64, f64)> = history.iter().map(|r| (r.outcome, r.forecast.mean())).collect();
        let crps = csum(history.iter().map(|r| r.forecast.crps(r.outcome).unwrap_or(f64::NAN)));
        Ok(Self {
            steps: history.len(),
            qce: qce(history, levels)?,
            smape: smape(&pairs)?,
            mean_crps: crps / history.len() as f64,
            mean_decision_loss: decision_losses.map(|d| csum(d.iter().copied()) / d.len().max(1) as f64),
            miscalibration,
            regret: (!regret_coords.is_empty()).then_some(regret),
        })
    }
}

/// One row of a forecaster comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub forecaster: String,
    pub qce: f64,
    pub smape: f64,
}

pub fn write_table<W: std::io::Write>(rows: &[TableRow], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoffs::default_levels;

    #[test]
    fn qce_of_outcomes_at_the_top() {
        // Uniform forecast with outcomes at y_max: every PIT is 1, f_q = 0.
        let pits = vec![1.0; 10];
        let want: f64 = (1..100).map(|i| (i as f64 / 100.0).powi(2)).sum();
        assert!((qce_from_pits(&pits, &default_levels()).unwrap() - want).abs() < 1e-12);
        assert!((want - 32.835).abs() < 1e-9);
    }

    #[test]
    fn qce_trajectory_ends_at_qce() {
        let pits = [0.1, 0.7, 0.35, 0.9, 0.5];
        let levels = default_levels();
        let tr = qce_trajectory(&pits, &levels);
        assert!((tr[4] - qce_from_pits(&pits, &levels).unwrap()).abs() < 1e-15);
        assert!((tr[0] - qce_from_pits(&pits[..1], &levels).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn smape_examples() {
        assert_eq!(smape(&[(2.0, 2.0)]).unwrap(), 0.0);
        assert_eq!(smape(&[(1.0, 3.0)]).unwrap(), 1.0);
        assert_eq!(smape(&[(1.0, 0.0)]).unwrap(), 2.0);
        assert_eq!(smape(&[(0.0, 0.0)]).unwrap(), 0.0);
    }

    #[test]
    fn decision_loss_examples() {
        assert_eq!(decision_loss(&[1.0, 2.0], &[1.0, 2.0], 0.5).unwrap(), 0.0);
        assert_eq!(decision_loss(&[0.0], &[1.0], 0.5).unwrap(), 1.5);
        assert_eq!(decision_loss(&[1.0], &[0.0], 0.5).unwrap(), 0.5);
        assert!(decision_loss(&[1.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn commitment_examples() {
        let u = PiecewiseDensity::uniform(0.0, 1.0, 4).unwrap();
        assert_eq!(optimal_commitment(std::slice::from_ref(&u), 0.0).unwrap(), vec![0.5]);
        assert!((optimal_commitment(std::slice::from_ref(&u), 0.5).unwrap()[0] - 0.75).abs() < 1e-15);
        // Grid search over 10⁴ candidates lands on the same point.
        let (mut best, mut arg) = (f64::INFINITY, 0.0);
        for i in 0..=10_000 {
            let a = i as f64 / 10_000.0;
            let l = expected_decision_loss(&u, a, 0.5);
            if l < best {
                best = l;
                arg = a;
            }
        }
        assert!((arg - 0.75).abs() < 1e-12);
    }

    #[test]
    fn expected_loss_matches_quadrature() {
        let p = PiecewiseDensity::new(vec![0.0, 0.3, 1.0, 2.0], vec![0.2, 0.5, 0.3]).unwrap();
        for a in [-0.5, 0.1, 0.3, 0.77, 1.9, 2.5] {
            let direct = expected_value(&p, &|y| 1.5 * (y - a).max(0.0) + 0.5 * (a - y).max(0.0));
            // Kinks inside a bin limit quadrature accuracy.
            assert!((direct - expected_decision_loss(&p, a, 0.5)).abs() < 1e-4);
        }
    }

    #[test]
    fn markov_rejects_non_monotone() {
        let p = PiecewiseDensity::uniform(0.0, 1.0, 2).unwrap();
        let rec = StepRecord {
            t: 1,
            features: Default::default(),
            forecast: p,
            outcome: 0.5,
            payoff: crate::core_types::PayoffVector::zeros(crate::core_types::labels_from(["a"]), 1.0),
            inner: 0.0,
            directed_inner: 0.0,
            certificate: crate::core_types::Certificate::exact(0.0),
        };
        assert_eq!(
            markov_coverage(std::slice::from_ref(&rec), &|y| (y - 0.5).powi(2), 2.0).unwrap_err(),
            MetricError::NotMonotone
        );
        let m = markov_coverage(&[rec], &|y| y, 2.0).unwrap();
        assert_eq!(m.frequency, 0.0);
    }
}
