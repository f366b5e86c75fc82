//! Piecewise-constant forecast densities on a bounded outcome interval.
//!
//! The density is constant inside each bin, so the CDF is continuous and
//! piecewise linear. Every query (CDF, quantile, moments, CRPS, W1) is
//! computed in closed form per bin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sum::{csum, CompensatedSum};
use super::CoreError;

/// Tolerance on the total mass accepted by constructors before renormalizing.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDensity", into = "RawDensity")]
pub struct PiecewiseDensity {
    edges: Vec<f64>,
    masses: Vec<f64>,
    /// Cumulative mass at each edge; `cum[0] = 0`, `cum[B] = 1`.
    cum: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawDensity {
    edges: Vec<f64>,
    masses: Vec<f64>,
}

impl TryFrom<RawDensity> for PiecewiseDensity {
    type Error = CoreError;
    fn try_from(raw: RawDensity) -> Result<Self, CoreError> {
        PiecewiseDensity::new(raw.edges, raw.masses)
    }
}

impl From<PiecewiseDensity> for RawDensity {
    fn from(p: PiecewiseDensity) -> Self {
        RawDensity {
            edges: p.edges,
            masses: p.masses,
        }
    }
}

/// `bins + 1` evenly spaced edges with the endpoints pinned exactly.
pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut edges: Vec<f64> = (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect();
    edges[0] = lo;
    edges[bins] = hi;
    edges
}

impl PiecewiseDensity {
    /// Builds a density from edges and bin masses. Masses are renormalized
    /// after checking they sum to one within [`MASS_TOLERANCE`].
    pub fn new(edges: Vec<f64>, masses: Vec<f64>) -> Result<Self, CoreError> {
        if masses.is_empty() || edges.len() != masses.len() + 1 {
            return Err(CoreError::Shape {
                edges: edges.len(),
                masses: masses.len(),
            });
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Edges);
        }
        if let Some(i) = masses.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(CoreError::NegativeMass(i, masses[i]));
        }
        let total = csum(masses.iter().copied());
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(CoreError::MassSum(total));
        }
        let masses: Vec<f64> = masses.iter().map(|m| m / total).collect();
        Ok(Self::from_parts(edges, masses))
    }

    /// Builds a density from unnormalized nonnegative weights.
    pub fn from_weights(edges: Vec<f64>, weights: &[f64]) -> Result<Self, CoreError> {
        let total = csum(weights.iter().copied());
        if !(total.is_finite() && total > 0.0) {
            return Err(CoreError::MassSum(total));
        }
        Self::new(edges, weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self, CoreError> {
        let masses = vec![1.0 / bins as f64; bins];
        Self::new(uniform_edges(lo, hi, bins), masses)
    }

    fn from_parts(edges: Vec<f64>, masses: Vec<f64>) -> Self {
        let b = masses.len();
        let mut cum = Vec::with_capacity(b + 1);
        let mut acc = CompensatedSum::new();
        cum.push(0.0);
        for m in &masses {
            acc.add(*m);
            cum.push(acc.value().min(1.0));
        }
        // Pin the flat tail after the last positive bin to exactly one so the
        // quantile search never lands in a trailing zero-mass bin.
        let last = masses.iter().rposition(|m| *m > 0.0).unwrap_or(b - 1);
        for c in cum.iter_mut().skip(last + 1) {
            *c = 1.0;
        }
        Self { edges, masses, cum }
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn y_min(&self) -> f64 {
        self.edges[0]
    }

    pub fn y_max(&self) -> f64 {
        self.edges[self.masses.len()]
    }

    pub fn range(&self) -> f64 {
        self.y_max() - self.y_min()
    }

    /// Cumulative mass at each edge.
    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    pub fn same_support(&self, other: &Self) -> bool {
        self.y_min() == other.y_min() && self.y_max() == other.y_max()
    }

    fn check_domain(&self, y: f64) -> Result<(), CoreError> {
        if y.is_nan() || y < self.y_min() || y > self.y_max() {
            return Err(CoreError::Domain {
                y,
                lo: self.y_min(),
                hi: self.y_max(),
            });
        }
        Ok(())
    }

    /// Index of the bin containing `y`, with `y_max` assigned to the last bin.
    pub fn bin_of(&self, y: f64) -> usize {
        let b = self.edges.partition_point(|e| *e <= y);
        b.clamp(1, self.masses.len()) - 1
    }

    pub fn cdf(&self, y: f64) -> Result<f64, CoreError> {
        self.check_domain(y)?;
        Ok(self.cdf_clamped(y))
    }

    /// CDF with `y` clamped into the support; for hot loops with validated input.
    pub fn cdf_clamped(&self, y: f64) -> f64 {
        if y <= self.y_min() {
            return 0.0;
        }
        if y >= self.y_max() {
            return 1.0;
        }
        let b = self.bin_of(y);
        let (lo, hi) = (self.edges[b], self.edges[b + 1]);
        (self.cum[b] + self.masses[b] * (y - lo) / (hi - lo)).min(1.0)
    }

    /// Generalized inverse `inf{y : F(y) >= alpha}`. Over a zero-mass bin
    /// this is the left endpoint of the flat region.
    pub fn quantile(&self, alpha: f64) -> Result<f64, CoreError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(CoreError::Level(alpha));
        }
        Ok(self.quantile_clamped(alpha))
    }

    pub fn quantile_clamped(&self, alpha: f64) -> f64 {
        if alpha <= 0.0 {
            return self.y_min();
        }
        let b = self.cum[1..].partition_point(|c| *c < alpha).min(self.masses.len() - 1);
        let (lo, hi) = (self.edges[b], self.edges[b + 1]);
        let m = self.masses[b];
        if m <= 0.0 {
            return lo;
        }
        (lo + (alpha - self.cum[b]) / m * (hi - lo)).clamp(lo, hi)
    }

    /// `E[y^k]` in closed form.
    pub fn moment(&self, k: u32) -> f64 {
        moment_over(&self.edges, &self.masses, k)
    }

    pub fn mean(&self) -> f64 {
        csum(
            self.masses
                .iter()
                .enumerate()
                .map(|(b, m)| m * 0.5 * (self.edges[b] + self.edges[b + 1])),
        )
    }

    /// `E[u^k]` for the outcome rescaled to `u = (y - y_min) / range` in [0, 1].
    pub fn unit_moment(&self, k: u32) -> f64 {
        let (lo, r) = (self.y_min(), self.range());
        let unit: Vec<f64> = self.edges.iter().map(|e| (e - lo) / r).collect();
        moment_over(&unit, &self.masses, k)
    }

    /// Continuous ranked probability score `∫ (F(z) - 1{z >= y})² dz`.
    pub fn crps(&self, y: f64) -> Result<f64, CoreError> {
        self.check_domain(y)?;
        let mut acc = CompensatedSum::new();
        for b in 0..self.masses.len() {
            let (lo, hi) = (self.edges[b], self.edges[b + 1]);
            let f0 = self.cum[b];
            let slope = self.masses[b] / (hi - lo);
            if y <= lo {
                acc.add(sq_linear_integral(f0 - 1.0, self.cum[b + 1] - 1.0, hi - lo));
            } else if y >= hi {
                acc.add(sq_linear_integral(f0, self.cum[b + 1], hi - lo));
            } else {
                let fy = f0 + slope * (y - lo);
                acc.add(sq_linear_integral(f0, fy, y - lo));
                acc.add(sq_linear_integral(fy - 1.0, self.cum[b + 1] - 1.0, hi - y));
            }
        }
        Ok(acc.value().max(0.0))
    }

    /// CRPS and its gradient with respect to the bin masses (masses treated as
    /// free coordinates, so the gradient ignores the simplex constraint).
    pub fn crps_with_grad(&self, y: f64, grad: &mut [f64]) -> f64 {
        let nb = self.masses.len();
        debug_assert_eq!(grad.len(), nb);
        // d/dm_b of F(z) is 1 past bin b and the in-bin fraction inside it, so
        // ∂CRPS/∂m_b = 2[∫_bin (F-H)s dz + ∫_{z>e_b} (F-H) dz].
        let mut tail = 0.0;
        let mut value = 0.0;
        for b in (0..nb).rev() {
            let (lo, hi) = (self.edges[b], self.edges[b + 1]);
            let w = hi - lo;
            let c0 = self.cum[b];
            let m = self.masses[b];
            // s = (z - lo)/w in [0,1]; F = c0 + m s; H = 1{s >= sy}.
            let sy = ((y - lo) / w).clamp(0.0, 1.0);
            let int_f = w * (c0 + 0.5 * m);
            let int_fs = w * (0.5 * c0 + m / 3.0);
            let int_h = w * (1.0 - sy);
            let int_hs = w * 0.5 * (1.0 - sy * sy);
            grad[b] = 2.0 * ((int_fs - int_hs) + tail);
            tail += int_f - int_h;
            value += if sy <= 0.0 {
                sq_linear_integral(c0 - 1.0, c0 + m - 1.0, w)
            } else if sy >= 1.0 {
                sq_linear_integral(c0, c0 + m, w)
            } else {
                let fy = c0 + m * sy;
                sq_linear_integral(c0, fy, w * sy) + sq_linear_integral(fy - 1.0, c0 + m - 1.0, w * (1.0 - sy))
            };
        }
        value.max(0.0)
    }

    /// Inverse-CDF sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile_clamped(u)
    }

    /// Wasserstein-1 distance `∫ |F_p - F_q|` between densities on the same interval.
    pub fn wasserstein1(&self, other: &Self) -> Result<f64, CoreError> {
        if !self.same_support(other) {
            return Err(CoreError::Support);
        }
        let mut knots: Vec<f64> = self.edges.iter().chain(other.edges.iter()).copied().collect();
        knots.sort_by(|a, b| a.total_cmp(b));
        knots.dedup();
        let mut acc = CompensatedSum::new();
        for w in knots.windows(2) {
            let d0 = self.cdf_clamped(w[0]) - other.cdf_clamped(w[0]);
            let d1 = self.cdf_clamped(w[1]) - other.cdf_clamped(w[1]);
            acc.add(abs_linear_integral(d0, d1, w[1] - w[0]));
        }
        Ok(acc.value())
    }

    /// Same bins, new masses.
    pub fn with_masses(&self, masses: Vec<f64>) -> Result<Self, CoreError> {
        Self::new(self.edges.clone(), masses)
    }
}

fn moment_over(edges: &[f64], masses: &[f64], k: u32) -> f64 {
    let kp = k as i32 + 1;
    csum(masses.iter().enumerate().map(|(b, m)| {
        let (lo, hi) = (edges[b], edges[b + 1]);
        m * (hi.powi(kp) - lo.powi(kp)) / (kp as f64 * (hi - lo))
    }))
}

/// `∫_0^w g(s)² ds` for `g` linear from `a` to `b`.
fn sq_linear_integral(a: f64, b: f64, w: f64) -> f64 {
    w * (a * a + a * b + b * b) / 3.0
}

/// `∫_0^w |g(s)| ds` for `g` linear from `a` to `b`.
fn abs_linear_integral(a: f64, b: f64, w: f64) -> f64 {
    if (a >= 0.0) == (b >= 0.0) || a == 0.0 || b == 0.0 {
        0.5 * w * (a.abs() + b.abs())
    } else {
        0.5 * w * (a * a + b * b) / (a.abs() + b.abs())
    }
}
