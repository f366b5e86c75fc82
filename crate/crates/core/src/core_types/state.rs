use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::density::PiecewiseDensity;
use super::sum::CompensatedSum;
use super::vector::{dot, Labels, PayoffVector};
use super::CoreError;

/// Side information available before the forecast is announced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Features {
    /// Most recent outcomes, oldest first.
    pub lags: Vec<f64>,
    /// Expert forecasts for the current step.
    pub experts: Vec<PiecewiseDensity>,
}

impl Features {
    pub fn with_experts(experts: Vec<PiecewiseDensity>) -> Self {
        Self {
            lags: Vec::new(),
            experts,
        }
    }

    /// Short hex digest of the feature contents.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.lags {
            h.update(l.to_bits().to_le_bytes());
        }
        for e in &self.experts {
            for x in e.edges().iter().chain(e.masses()) {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Pre-outcome claim on the worst inner product the announced forecast allows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub bound: f64,
    pub exact: bool,
}

impl Certificate {
    pub fn exact(bound: f64) -> Self {
        Self { bound, exact: true }
    }

    pub fn approximate(bound: f64) -> Self {
        Self { bound, exact: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord<F> {
    pub t: usize,
    pub features: Features,
    pub forecast: F,
    pub outcome: f64,
    pub payoff: PayoffVector,
    /// `<avg_{t-1}, payoff_t>`.
    pub inner: f64,
    /// Inner product with the approach direction (positive parts on
    /// semi-consistent coordinates); this is what certificates bound.
    pub directed_inner: f64,
    pub certificate: Certificate,
}

/// Running average payoff and per-step log of one game.
#[derive(Debug, Clone)]
pub struct GameState<F> {
    t: usize,
    sums: Vec<CompensatedSum>,
    avg: PayoffVector,
    sq_norms: CompensatedSum,
    weighted_inner: CompensatedSum,
    history: Vec<StepRecord<F>>,
}

impl<F> GameState<F> {
    pub fn new(labels: Labels, bound: f64) -> Self {
        let n = labels.len();
        Self {
            t: 0,
            sums: vec![CompensatedSum::new(); n],
            avg: PayoffVector::zeros(labels, bound),
            sq_norms: CompensatedSum::new(),
            weighted_inner: CompensatedSum::new(),
            history: Vec::new(),
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn avg(&self) -> &PayoffVector {
        &self.avg
    }

    pub fn history(&self) -> &[StepRecord<F>] {
        &self.history
    }

    pub fn into_history(self) -> Vec<StepRecord<F>> {
        self.history
    }

    /// Folds one payoff into the running average; returns `<avg_{t-1}, payoff>`.
    pub fn update_average(&mut self, payoff: &PayoffVector) -> Result<f64, CoreError> {
        let inner = self.avg.inner_product(payoff)?;
        self.sq_norms.add(payoff.norm_sq());
        self.weighted_inner.add(self.t as f64 * inner);
        self.t += 1;
        let t = self.t as f64;
        let values: Vec<f64> = self
            .sums
            .iter_mut()
            .zip(payoff.values())
            .map(|(s, v)| {
                s.add(*v);
                s.value() / t
            })
            .collect();
        self.avg = PayoffVector::new(self.avg.labels().clone(), values, self.avg.bound())?;
        Ok(inner)
    }

    pub fn push_record(&mut self, record: StepRecord<F>) {
        self.history.push(record);
    }

    /// `Σ‖π_s‖²` over all steps so far.
    pub fn sum_sq_norms(&self) -> f64 {
        self.sq_norms.value()
    }

    /// `Σ (s-1)<avg_{s-1}, π_s>` over all steps so far.
    pub fn sum_weighted_inner(&self) -> f64 {
        self.weighted_inner.value()
    }

    /// Right-hand side of `t²‖avg_t‖² = Σ‖π_s‖² + 2Σ(s-1)<avg_{s-1}, π_s>`, divided by `t²`.
    pub fn recursion_norm_sq(&self) -> f64 {
        if self.t == 0 {
            return 0.0;
        }
        let t = self.t as f64;
        (self.sum_sq_norms() + 2.0 * self.sum_weighted_inner()) / (t * t)
    }
}

/// Recomputes the average of a payoff stream from scratch.
pub fn naive_average(payoffs: &[PayoffVector]) -> Vec<f64> {
    let n = payoffs.first().map_or(0, PayoffVector::len);
    let t = payoffs.len() as f64;
    (0..n)
        .map(|i| payoffs.iter().map(|p| p.values()[i]).sum::<f64>() / t)
        .collect()
}

/// `‖avg‖²` for a plain slice.
pub fn norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::labels_from;

    fn pv(labels: &Labels, vals: &[f64]) -> PayoffVector {
        PayoffVector::new(labels.clone(), vals.to_vec(), 10.0).unwrap()
    }

    #[test]
    fn update_average_examples() {
        let l = labels_from(["a", "b"]);
        let mut s: GameState<()> = GameState::new(l.clone(), 10.0);
        s.update_average(&pv(&l, &[1.0, 0.0])).unwrap();
        assert_eq!(s.t(), 1);
        assert_eq!(s.avg().values(), &[1.0, 0.0]);
        s.update_average(&pv(&l, &[0.0, 1.0])).unwrap();
        assert_eq!(s.avg().values(), &[0.5, 0.5]);

        let one = labels_from(["x"]);
        let mut c: GameState<()> = GameState::new(one.clone(), 9.0);
        for _ in 0..3 {
            c.update_average(&pv(&one, &[3.0])).unwrap();
        }
        assert_eq!(c.avg().values(), &[3.0]);
    }

    #[test]
    fn update_average_rejects_foreign_labels() {
        let mut s: GameState<()> = GameState::new(labels_from(["a"]), 1.0);
        let other = PayoffVector::new(labels_from(["b"]), vec![1.0], 1.0).unwrap();
        assert!(s.update_average(&other).is_err());
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = Features {
            lags: vec![1.0, 2.0],
            experts: vec![],
        };
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.lags[1] = 2.5;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 16);
    }
}
