//! Adaptive conformal inference as a calibration game. The forecaster picks
//! a quantile level `a` from a finite grid and announces the base forecast's
//! `a`-quantile as an upper prediction bound; the payoff coordinate for level
//! `a` is `p(a) (1{y ≤ Q(a)} - β)`, which drives coverage to `β`.
//!
//! For outcomes above `Q(a_0)` the covering levels are always a suffix
//! `{a ≥ a_j}` of the grid, so the worst inner product of a mixed play `p`
//! with direction `c` is `max_j (Σ_{a ≥ a_j} c_a p_a - β Σ_a c_a p_a)`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::blackwell::{Oracle, OracleError, Query};
use crate::core_types::{csum, labels_from, Certificate, Features, Labels, PayoffVector};
use crate::payoffs::{PayoffError, PayoffSpec};

/// A mixed play over quantile levels and the level actually drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AciForecast {
    /// Sparse mixture `(grid index, probability)`.
    pub weights: Vec<(usize, f64)>,
    /// Drawn grid index.
    pub action: usize,
    pub level: f64,
    /// Base-forecast quantile at the drawn level: the announced upper bound.
    pub quantile: f64,
}

impl AciForecast {
    pub fn covers(&self, y: f64) -> bool {
        y <= self.quantile
    }
}

#[derive(Debug, Clone)]
pub struct AciPayoff {
    grid: Vec<f64>,
    beta: f64,
    labels: Labels,
}

impl AciPayoff {
    /// Grid of `m + 1` evenly spaced levels on [0, 1].
    pub fn new(m: usize, beta: f64) -> Result<Self, PayoffError> {
        if m == 0 {
            return Err(PayoffError::Invalid("ACI grid needs at least two levels".into()));
        }
        if !(0.0 < beta && beta < 1.0) {
            return Err(PayoffError::Invalid(format!("target coverage {beta} outside (0, 1)")));
        }
        let grid: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
        let labels = labels_from(grid.iter().map(|a| format!("a{a}")));
        Ok(Self { grid, beta, labels })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl PayoffSpec<AciForecast> for AciPayoff {
    fn name(&self) -> &str {
        "aci"
    }

    fn labels(&self) -> &Labels {
        &self.labels
    }

    fn bound(&self) -> f64 {
        self.beta.max(1.0 - self.beta).powi(2)
    }

    fn evaluate(&self, x: &Features, forecast: &AciForecast, y: f64) -> Result<PayoffVector, PayoffError> {
        let base = x
            .experts
            .first()
            .ok_or(PayoffError::MissingExperts { needed: 1, found: 0 })?;
        base.cdf(y)?;
        let mut values = vec![0.0; self.grid.len()];
        for &(a, p) in &forecast.weights {
            let level = *self
                .grid
                .get(a)
                .ok_or_else(|| PayoffError::Invalid(format!("level index {a}")))?;
            let e = if y <= base.quantile_clamped(level) { 1.0 } else { 0.0 };
            values[a] = p * (e - self.beta);
        }
        Ok(PayoffVector::new(self.labels.clone(), values, self.bound())?)
    }
}

/// Which mixing rule the oracle follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AciMode {
    /// Only plays that are exact for every direction pattern they cover,
    /// falling back to the best certified candidate otherwise.
    Exact,
    /// Pure ends on one-signed directions, otherwise the first adjacent sign
    /// change in either orientation.
    Classic,
}

pub struct AciOracle {
    grid: Vec<f64>,
    beta: f64,
    mode: AciMode,
}

impl AciOracle {
    pub fn new(payoff: &AciPayoff, mode: AciMode) -> Self {
        Self {
            grid: payoff.grid.clone(),
            beta: payoff.beta,
            mode,
        }
    }

    /// Worst inner product over outcomes above `Q(a_0)`.
    pub fn certificate(&self, c: &[f64], p: &[(usize, f64)]) -> f64 {
        let mut w = vec![0.0; self.grid.len()];
        for &(a, pa) in p {
            w[a] = c[a] * pa;
        }
        let total = csum(w.iter().copied());
        let mut tail = 0.0;
        let mut worst = f64::NEG_INFINITY;
        for j in (1..w.len()).rev() {
            tail += w[j];
            worst = worst.max(tail - self.beta * total);
        }
        worst
    }

    /// The mixture for direction `c`.
    pub fn mixture(&self, c: &[f64]) -> Vec<(usize, f64)> {
        let m = self.grid.len() - 1;
        if c.iter().all(|v| *v >= 0.0) {
            return vec![(0, 1.0)];
        }
        if c.iter().all(|v| *v <= 0.0) {
            return vec![(m, 1.0)];
        }
        let nz: Vec<usize> = (0..=m).filter(|a| c[*a] != 0.0).collect();
        let changes: Vec<(usize, usize)> = nz
            .windows(2)
            .map(|w| (w[0], w[1]))
            .filter(|(a, b)| c[*a].signum() != c[*b].signum())
            .collect();
        if self.mode == AciMode::Classic {
            let (a, b) = changes[0];
            return pair(c, a, b);
        }
        if let Some(&(a, b)) = changes.iter().find(|(a, _)| c[*a] > 0.0) {
            return pair(c, a, b);
        }
        if c[0] >= 0.0 {
            return vec![(0, 1.0)];
        }
        if c[m] <= 0.0 {
            return vec![(m, 1.0)];
        }
        if let Some(z) = (1..m).find(|a| c[*a] == 0.0) {
            return vec![(z, 1.0)];
        }
        // Strictly monotone sign pattern (- ... -, + ... +): no play is exact
        // for every outcome, so take the candidate with the smallest worst case.
        let mut best = vec![(0, 1.0)];
        let mut best_cert = self.certificate(c, &best);
        let candidates = (0..=m)
            .map(|a| vec![(a, 1.0)])
            .chain(changes.iter().map(|(a, b)| pair(c, *a, *b)));
        for cand in candidates {
            let v = self.certificate(c, &cand);
            if v < best_cert {
                best_cert = v;
                best = cand;
            }
        }
        best
    }
}

fn pair(c: &[f64], a: usize, b: usize) -> Vec<(usize, f64)> {
    let wa = 1.0 / c[a].abs();
    let wb = 1.0 / c[b].abs();
    vec![(a, wa / (wa + wb)), (b, wb / (wa + wb))]
}

impl Oracle<AciForecast> for AciOracle {
    fn name(&self) -> &str {
        match self.mode {
            AciMode::Exact => "aci",
            AciMode::Classic => "aci_classic",
        }
    }

    fn respond(&mut self, query: &Query<'_>, rng: &mut dyn RngCore) -> Result<(AciForecast, Certificate), OracleError> {
        let c = query.direction;
        if c.len() != self.grid.len() {
            return Err(PayoffError::Direction {
                expected: self.grid.len(),
                found: c.len(),
            }
            .into());
        }
        let base = query
            .features
            .experts
            .first()
            .ok_or(PayoffError::MissingExperts { needed: 1, found: 0 })?;
        let weights = self.mixture(c);
        let cert = self.certificate(c, &weights);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut action = weights[weights.len() - 1].0;
        for &(a, p) in &weights {
            acc += p;
            if u < acc {
                action = a;
                break;
            }
        }
        let level = self.grid[action];
        let forecast = AciForecast {
            weights,
            action,
            level,
            quantile: base.quantile_clamped(level),
        };
        Ok((forecast, Certificate::exact(cert)))
    }
}

/// Root of `f` on `[lo, hi]` by bisection, assuming a sign change.
pub fn bisect_root(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> f64 {
    let flo = f(lo);
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Deterministic level for a direction known on a grid and extended by linear
/// interpolation: the left end if the direction is nonnegative there, the
/// right end if it is nonpositive there, otherwise a root of the interpolant
/// (to within 1e-10).
pub fn aci_deterministic(grid: &[f64], c: &[f64]) -> f64 {
    let m = grid.len() - 1;
    if c.iter().all(|v| *v >= 0.0) {
        return grid[0];
    }
    if c.iter().all(|v| *v <= 0.0) {
        return grid[m];
    }
    let interp = |a: f64| {
        let k = grid.partition_point(|g| *g <= a).clamp(1, m);
        let (g0, g1) = (grid[k - 1], grid[k]);
        let s = (a - g0) / (g1 - g0);
        c[k - 1] + s * (c[k] - c[k - 1])
    };
    for k in 0..m {
        if c[k] == 0.0 {
            return grid[k];
        }
        if c[k].signum() != c[k + 1].signum() && c[k + 1] != 0.0 {
            return bisect_root(interp, grid[k], grid[k + 1], 1e-10, 60);
        }
    }
    grid[m]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(m: usize, beta: f64, mode: AciMode) -> AciOracle {
        AciOracle::new(&AciPayoff::new(m, beta).unwrap(), mode)
    }

    #[test]
    fn one_signed_directions_play_the_ends() {
        let o = oracle(4, 0.9, AciMode::Exact);
        assert_eq!(o.mixture(&[0.0, 1.0, 0.0, 2.0, 0.0]), vec![(0, 1.0)]);
        assert_eq!(o.mixture(&[-1.0, 0.0, -3.0, 0.0, 0.0]), vec![(4, 1.0)]);
    }

    #[test]
    fn sign_change_weights_balance() {
        let o = oracle(4, 0.9, AciMode::Exact);
        let c = [-1.0, 2.0, 0.0, -0.5, -1.0];
        let p = o.mixture(&c);
        assert_eq!(p.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 3]);
        // 1/2 : 1/0.5 -> 0.2, 0.8.
        assert!((p[0].1 - 0.2).abs() < 1e-15 && (p[1].1 - 0.8).abs() < 1e-15);
        assert!(o.certificate(&c, &p) <= 1e-15);
    }

    #[test]
    fn monotone_pattern_has_positive_value() {
        // (-, -, +, +): every play leaves some outcome with a positive inner
        // product; the fallback picks the least bad one.
        let o = oracle(3, 0.9, AciMode::Exact);
        let c = [-1.0, -1.0, 1.0, 1.0];
        let p = o.mixture(&c);
        let best = o.certificate(&c, &p);
        assert!(best > 0.0);
        for a in 0..4 {
            assert!(best <= o.certificate(&c, &[(a, 1.0)]) + 1e-15);
        }
    }

    #[test]
    fn classic_rule_can_be_inexact() {
        let o = oracle(3, 0.5, AciMode::Classic);
        let c = [-1.0, 1.0, 1.0, 1.0];
        let p = o.mixture(&c);
        assert_eq!(p, vec![(0, 0.5), (1, 0.5)]);
        // Outcome between Q(a_0) and Q(a_1): only level 1 covers.
        assert!((o.certificate(&c, &p) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn payoff_uses_base_quantiles() {
        let pay = AciPayoff::new(2, 0.8).unwrap();
        let base = crate::core_types::PiecewiseDensity::uniform(0.0, 10.0, 10).unwrap();
        let x = Features::with_experts(vec![base]);
        let f = AciForecast {
            weights: vec![(1, 0.25), (2, 0.75)],
            action: 1,
            level: 0.5,
            quantile: 5.0,
        };
        let v = pay.evaluate(&x, &f, 7.0).unwrap();
        let want = [0.0, 0.25 * -0.8, 0.75 * 0.2];
        for (a, b) in v.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(!f.covers(7.0));
    }

    #[test]
    fn deterministic_root() {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let c: Vec<f64> = grid.iter().map(|a| a - 0.537).collect();
        assert!((aci_deterministic(&grid, &c) - 0.537).abs() < 1e-10);
        let c: Vec<f64> = grid.iter().map(|a| 0.3 - a).collect();
        assert!((aci_deterministic(&grid, &c) - 0.3).abs() < 1e-10);
        assert_eq!(aci_deterministic(&grid, &[1.0; 11]), 0.0);
        assert_eq!(aci_deterministic(&grid, &[-1.0; 11]), 1.0);
    }
}
