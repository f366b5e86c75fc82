//! Exact oracle for quantile calibration with step quantile functions.
//!
//! The forecast puts mass `u` just above `y_min` and `1 - u` just below
//! `y_max`, so every outcome in between has `F(y) = u` and the inner product
//! with direction `c` is `S(u) - Σ_k c_k α_k`, where `S(u) = Σ_{α_k ≥ u} c_k`.
//! Since `S` integrates to `Σ_k c_k α_k` over [0, 1], its minimum over the
//! level grid and the empty tail is never above the mean, so the best step
//! leaves every interior outcome in the closed half-space.

use rand::RngCore;
use serde::Serialize;

use super::aci::aci_deterministic;
use crate::blackwell::{Oracle, OracleError, Query};
use crate::core_types::{csum, Certificate, PiecewiseDensity};
use crate::payoffs::PayoffError;

/// Width of the two end bins relative to the support.
const END_BIN: f64 = 1e-6;
/// Interior outcomes at which each candidate is checked.
const CHECK_POINTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "u", rename_all = "snake_case")]
pub enum StepCandidate {
    /// All mass at the bottom: no level is ever reached.
    AllLow,
    /// All mass at the top: every level is reached.
    AllHigh,
    /// Step placed at the root of the interpolated direction.
    Root(f64),
    /// Step placed just below the level minimizing the tail sum.
    TailMin(f64),
}

impl StepCandidate {
    fn mass_low(self) -> f64 {
        match self {
            StepCandidate::AllLow => 1.0,
            StepCandidate::AllHigh => 0.0,
            StepCandidate::Root(u) | StepCandidate::TailMin(u) => u,
        }
    }
}

pub struct QuantileStepOracle {
    /// `(level, coordinate scale)` in coordinate order.
    coords: Vec<(f64, f64)>,
    y_min: f64,
    y_max: f64,
    last: Option<StepCandidate>,
}

impl QuantileStepOracle {
    /// `blocks` lists the levels and scale of each quantile block in
    /// coordinate order; a single unscaled block is the plain payoff.
    pub fn new(blocks: &[(Vec<f64>, f64)], y_min: f64, y_max: f64) -> Result<Self, OracleError> {
        if !(y_min < y_max) {
            return Err(PayoffError::Invalid(format!("support [{y_min}, {y_max}]")).into());
        }
        let coords: Vec<(f64, f64)> = blocks
            .iter()
            .flat_map(|(levels, s)| levels.iter().map(move |a| (*a, *s)))
            .collect();
        if coords.is_empty() {
            return Err(PayoffError::Invalid("no quantile levels".into()).into());
        }
        Ok(Self {
            coords,
            y_min,
            y_max,
            last: None,
        })
    }

    /// Which candidate the last response played.
    pub fn last_candidate(&self) -> Option<StepCandidate> {
        self.last
    }

    /// The step forecast for a candidate.
    pub fn forecast(&self, cand: StepCandidate) -> PiecewiseDensity {
        let d = END_BIN * (self.y_max - self.y_min);
        let u = cand.mass_low().clamp(0.0, 1.0);
        PiecewiseDensity::new(
            vec![self.y_min, self.y_min + d, self.y_max - d, self.y_max],
            vec![u, 0.0, 1.0 - u],
        )
        .expect("step forecast is a valid density")
    }

    /// Interior outcomes used to check a step forecast.
    pub fn check_points(&self) -> Vec<f64> {
        let h = (self.y_max - self.y_min) / CHECK_POINTS as f64;
        (0..CHECK_POINTS).map(|i| self.y_min + (i as f64 + 0.5) * h).collect()
    }

    /// Worst inner product of `p`'s payoff with `c` over the check points.
    pub fn worst_inner(&self, c: &[f64], p: &PiecewiseDensity) -> f64 {
        let offset = csum(self.coords.iter().zip(c).map(|((a, s), c)| a * s * c));
        self.check_points()
            .iter()
            .map(|y| {
                let u = p.cdf_clamped(*y);
                csum(
                    self.coords
                        .iter()
                        .zip(c)
                        .filter(|((a, _), _)| u <= *a)
                        .map(|((_, s), c)| s * c),
                ) - offset
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn candidates(&self, c: &[f64]) -> Vec<StepCandidate> {
        // Aggregate the scaled direction per distinct level.
        let mut pairs: Vec<(f64, f64)> = self.coords.iter().zip(c).map(|((a, s), c)| (*a, s * c)).collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut levels: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (a, w) in pairs {
            if levels.last() == Some(&a) {
                *weights.last_mut().expect("nonempty") += w;
            } else {
                levels.push(a);
                weights.push(w);
            }
        }
        let mut out = vec![StepCandidate::AllLow, StepCandidate::AllHigh];
        let mut tail = 0.0;
        let mut best = (0.0, None);
        for j in (0..levels.len()).rev() {
            tail += weights[j];
            if tail < best.0 {
                best = (tail, Some(j));
            }
        }
        if let Some(j) = best.1 {
            let below = if j == 0 { 0.0 } else { levels[j - 1] };
            out.push(StepCandidate::TailMin(0.5 * (below + levels[j])));
        }
        if levels.len() >= 2 {
            out.push(StepCandidate::Root(aci_deterministic(&levels, &weights)));
        }
        out
    }
}

impl Oracle<PiecewiseDensity> for QuantileStepOracle {
    fn name(&self) -> &str {
        "quantile_step"
    }

    fn respond(
        &mut self,
        query: &Query<'_>,
        _rng: &mut dyn RngCore,
    ) -> Result<(PiecewiseDensity, Certificate), OracleError> {
        let c = query.direction;
        if c.len() != self.coords.len() {
            return Err(PayoffError::Direction {
                expected: self.coords.len(),
                found: c.len(),
            }
            .into());
        }
        let mut best: Option<(f64, StepCandidate, PiecewiseDensity)> = None;
        for cand in self.candidates(c) {
            let p = self.forecast(cand);
            let v = self.worst_inner(c, &p);
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, cand, p));
            }
        }
        let (v, cand, p) = best.expect("at least two candidates");
        self.last = Some(cand);
        Ok((p, Certificate::exact(v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::{Features, PayoffVector};
    use crate::payoffs::{PayoffSpec, QuantilePayoff};

    fn respond(o: &mut QuantileStepOracle, c: &[f64]) -> (PiecewiseDensity, Certificate) {
        let labels = crate::core_types::labels_from((0..c.len()).map(|i| i.to_string()));
        let avg = PayoffVector::new(labels, c.to_vec(), 1.0).unwrap();
        let x = Features::default();
        let q = Query {
            t: 2,
            avg: &avg,
            direction: c,
            features: &x,
        };
        o.respond(&q, &mut crate::blackwell::step_rng(0, 2, 0)).unwrap()
    }

    #[test]
    fn step_forecast_has_constant_interior_pit() {
        let o = QuantileStepOracle::new(&[(vec![0.5], 1.0)], 0.0, 1.0).unwrap();
        let p = o.forecast(StepCandidate::TailMin(0.3));
        for y in o.check_points() {
            assert!((p.cdf(y).unwrap() - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn certificate_matches_payoff_evaluation() {
        let q = QuantilePayoff::new(vec![0.1, 0.5, 0.9]).unwrap();
        let mut o = QuantileStepOracle::new(&[(q.levels().to_vec(), 1.0)], -2.0, 3.0).unwrap();
        let c = [0.3, -0.7, 0.2];
        let (p, cert) = respond(&mut o, &c);
        let mut worst = f64::NEG_INFINITY;
        for y in o.check_points() {
            let v = q.evaluate(&Features::default(), &p, y).unwrap();
            worst = worst.max(csum(v.values().iter().zip(&c).map(|(a, b)| a * b)));
        }
        assert!((worst - cert.bound).abs() < 1e-12);
        assert!(cert.bound <= 0.0);
    }

    #[test]
    fn tail_minimum_example() {
        // Tail sums from the top: 0.2, -0.5, -0.2 -> minimum at level 0.5.
        let o = QuantileStepOracle::new(&[(vec![0.1, 0.5, 0.9], 1.0)], 0.0, 1.0).unwrap();
        let cands = o.candidates(&[0.3, -0.7, 0.2]);
        assert!(cands.contains(&StepCandidate::TailMin(0.3)));
        // S(0.3) - Σ c α = -0.5 - (0.03 - 0.35 + 0.18) = -0.36.
        let v = o.worst_inner(&[0.3, -0.7, 0.2], &o.forecast(StepCandidate::TailMin(0.3)));
        assert!((v + 0.36).abs() < 1e-12);
    }

    #[test]
    fn zero_direction_is_certified_zero() {
        let mut o = QuantileStepOracle::new(&[(vec![0.25, 0.75], 1.0)], 0.0, 1.0).unwrap();
        let (_, cert) = respond(&mut o, &[0.0, 0.0]);
        assert_eq!(cert.bound, 0.0);
    }

    #[test]
    fn scaled_blocks_share_levels() {
        let blocks = [(vec![0.5], 0.5), (vec![0.5], 2.0)];
        let o = QuantileStepOracle::new(&blocks, 0.0, 1.0).unwrap();
        // Scaled weights 0.5 and -2 merge into one level with weight -1.5.
        let c = [1.0, -1.0];
        let best = o
            .candidates(&c)
            .into_iter()
            .map(|k| o.worst_inner(&c, &o.forecast(k)))
            .fold(f64::INFINITY, f64::min);
        assert!((best + 0.75).abs() < 1e-12);
    }
}
