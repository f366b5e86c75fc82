//! Binary calibration with triangular-kernel bins. The outcome is either end
//! of the forecast's support, read as 0 (`y_min`) or 1 (`y_max`), and the
//! forecast probability of a 1 is the mass above the midpoint.

use rand::RngCore;

use super::quantile::BinLoc;
use super::{check_dir, DensityPayoff, DirectionalObjective, PayoffError, PayoffSpec};
use crate::core_types::{csum, labels_from, Features, Labels, PayoffVector, PiecewiseDensity};

#[derive(Debug, Clone)]
pub struct BinaryPayoff {
    grid: Vec<f64>,
    bandwidth: f64,
    labels: Labels,
    bound: f64,
}

impl BinaryPayoff {
    pub fn new(grid: Vec<f64>, bandwidth: f64) -> Result<Self, PayoffError> {
        if grid.is_empty() || grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(PayoffError::Invalid(
                "binary grid must be a nonempty subset of [0, 1]".into(),
            ));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(PayoffError::Invalid(format!("bandwidth {bandwidth}")));
        }
        let labels = labels_from(grid.iter().map(|g| format!("b{g}")));
        let mut s = Self {
            grid,
            bandwidth,
            labels,
            bound: 0.0,
        };
        // Σ_g K(p, g)² is convex between kernel breakpoints, so its maximum
        // sits on one of them; |y - p| ≤ 1 does the rest.
        let mut breaks = vec![0.0, 1.0];
        for g in &s.grid {
            breaks.extend([*g, g - bandwidth, g + bandwidth]);
        }
        s.bound = breaks
            .iter()
            .filter(|p| (0.0..=1.0).contains(*p))
            .map(|p| csum(s.kernels(*p).iter().map(|k| k * k)))
            .fold(0.0, f64::max);
        Ok(s)
    }

    /// Evenly spaced grid of `n` points on [0, 1] with bandwidth equal to the spacing.
    pub fn uniform(n: usize) -> Result<Self, PayoffError> {
        if n < 2 {
            return Err(PayoffError::Invalid("need at least two grid points".into()));
        }
        let h = 1.0 / (n - 1) as f64;
        Self::new((0..n).map(|i| i as f64 * h).collect(), h)
    }

    pub fn kernels(&self, p: f64) -> Vec<f64> {
        self.grid
            .iter()
            .map(|g| (1.0 - (p - g).abs() / self.bandwidth).max(0.0))
            .collect()
    }

    /// `P(y = 1)` under the forecast.
    pub fn probability(p: &PiecewiseDensity) -> f64 {
        1.0 - p.cdf_clamped(0.5 * (p.y_min() + p.y_max()))
    }

    fn binary(p: &PiecewiseDensity, y: f64) -> Result<f64, PayoffError> {
        if y == p.y_min() {
            Ok(0.0)
        } else if y == p.y_max() {
            Ok(1.0)
        } else {
            Err(PayoffError::NonBinary(y))
        }
    }
}

impl PayoffSpec for BinaryPayoff {
    fn name(&self) -> &str {
        "binary"
    }

    fn labels(&self) -> &Labels {
        &self.labels
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn evaluate(&self, _x: &Features, p: &PiecewiseDensity, y: f64) -> Result<PayoffVector, PayoffError> {
        let y = Self::binary(p, y)?;
        let q = Self::probability(p);
        let values = self.kernels(q).iter().map(|k| k * (y - q)).collect();
        Ok(PayoffVector::new(self.labels.clone(), values, self.bound)?)
    }
}

impl DensityPayoff for BinaryPayoff {
    fn smoothable(&self) -> bool {
        true
    }

    fn objective<'a>(
        &'a self,
        _x: &'a Features,
        template: &PiecewiseDensity,
        ys: &[f64],
        dir: &[f64],
        _tau: f64,
    ) -> Result<Box<dyn DirectionalObjective + 'a>, PayoffError> {
        check_dir(self.grid.len(), dir)?;
        let ys = ys
            .iter()
            .map(|y| Self::binary(template, *y))
            .collect::<Result<_, _>>()?;
        let mid = 0.5 * (template.y_min() + template.y_max());
        Ok(Box::new(BinaryObjective {
            payoff: self,
            ys,
            mid: BinLoc::new(template, mid),
            dir: dir.to_vec(),
        }))
    }

    fn sample_outcome(&self, p: &PiecewiseDensity, rng: &mut dyn RngCore) -> f64 {
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        if u < Self::probability(p) {
            p.y_max()
        } else {
            p.y_min()
        }
    }

    fn arbitrary_outcome(&self, p: &PiecewiseDensity, rng: &mut dyn RngCore) -> f64 {
        if rng.next_u32() & 1 == 1 {
            p.y_max()
        } else {
            p.y_min()
        }
    }

    fn outcome_set(&self, p: &PiecewiseDensity) -> Option<Vec<f64>> {
        Some(vec![p.y_min(), p.y_max()])
    }
}

struct BinaryObjective<'a> {
    payoff: &'a BinaryPayoff,
    ys: Vec<f64>,
    mid: BinLoc,
    dir: Vec<f64>,
}

impl DirectionalObjective for BinaryObjective<'_> {
    fn outcomes(&self) -> usize {
        self.ys.len()
    }

    fn value(&self, p: &PiecewiseDensity, k: usize) -> f64 {
        let q = BinaryPayoff::probability(p);
        let y = self.ys[k];
        csum(
            self.payoff
                .kernels(q)
                .iter()
                .zip(&self.dir)
                .map(|(w, c)| c * w * (y - q)),
        )
    }

    fn smoothed(&self, p: &PiecewiseDensity, k: usize, grad: &mut [f64]) -> f64 {
        let q = BinaryPayoff::probability(p);
        let y = self.ys[k];
        let bw = self.payoff.bandwidth;
        let mut value = 0.0;
        let mut dq = 0.0;
        for (g, c) in self.payoff.grid.iter().zip(&self.dir) {
            let d = q - g;
            let w = 1.0 - d.abs() / bw;
            if w <= 0.0 {
                continue;
            }
            let dw = -d.signum() / bw;
            value += c * w * (y - q);
            dq += c * (dw * (y - q) - w);
        }
        // q = 1 - F(mid).
        self.mid.add_cdf_grad(-dq, grad);
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_from_kernel_weights() {
        let b = BinaryPayoff::new(vec![0.0, 0.5, 1.0], 0.5).unwrap();
        // Mass 0.25 above the midpoint.
        let p = PiecewiseDensity::new(vec![0.0, 0.5, 1.0], vec![0.75, 0.25]).unwrap();
        let v = b.evaluate(&Features::default(), &p, 0.0).unwrap();
        let want = [0.5 * -0.25, 0.5 * -0.25, 0.0];
        for (a, w) in v.values().iter().zip(want) {
            assert!((a - w).abs() < 1e-15);
        }
    }

    #[test]
    fn center_of_kernel() {
        let b = BinaryPayoff::uniform(11).unwrap();
        let p = PiecewiseDensity::uniform(0.0, 1.0, 2).unwrap();
        let v = b.evaluate(&Features::default(), &p, 1.0).unwrap();
        assert!((v.values()[5] - 0.5).abs() < 1e-15);
        assert!(v.values().iter().enumerate().all(|(i, x)| i == 5 || x.abs() < 1e-12));
    }

    #[test]
    fn rejects_interior_outcomes() {
        let b = BinaryPayoff::uniform(3).unwrap();
        let p = PiecewiseDensity::uniform(0.0, 1.0, 2).unwrap();
        assert_eq!(
            b.evaluate(&Features::default(), &p, 0.3).unwrap_err(),
            PayoffError::NonBinary(0.3)
        );
    }

    #[test]
    fn bound_covers_uniform_grid() {
        // Partition of unity: Σ K² peaks at 1 on the grid points.
        let b = BinaryPayoff::uniform(11).unwrap();
        assert!((b.bound() - 1.0).abs() < 1e-12);
    }
}
