//! Randomized checks of the three regularity conditions a payoff needs:
//! bounded norm, zero (or nonpositive) mean when the outcome follows the
//! forecast, and continuity in the forecast under the Wasserstein metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use super::{DensityPayoff, PayoffError};
use crate::core_types::{uniform_edges, Features, PiecewiseDensity};

#[derive(Debug, Clone)]
pub struct AuditConfig {
    pub y_min: f64,
    pub y_max: f64,
    pub bins: usize,
    pub bounded_samples: usize,
    pub forecasts: usize,
    pub consistency_samples: usize,
    /// z-score above which a coordinate mean counts as nonzero.
    pub z_limit: f64,
    pub continuity_samples: usize,
    /// Temperature used for the smoothed surrogate in the continuity check.
    pub tau: f64,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            y_min: 0.0,
            y_max: 1.0,
            bins: 20,
            bounded_samples: 10_000,
            forecasts: 200,
            consistency_samples: 100_000,
            z_limit: 4.0,
            continuity_samples: 500,
            tau: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundednessAudit {
    pub samples: usize,
    pub max_norm_sq: f64,
    pub bound: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyAudit {
    pub forecasts: usize,
    pub samples: usize,
    /// Largest z-score seen in the first pass (signed for semi-consistent
    /// coordinates, absolute otherwise).
    pub worst_z: f64,
    /// Forecasts flagged in the first pass and re-tested with ten times the samples.
    pub retested: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityAudit {
    pub samples: usize,
    pub smoothed: bool,
    /// Empirical Lipschitz constants (payoff change over W1 distance) at
    /// perturbation sizes 1e-3 and 1e-4.
    pub lipschitz_coarse: f64,
    pub lipschitz_fine: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub name: String,
    pub boundedness: BoundednessAudit,
    pub consistency: ConsistencyAudit,
    pub continuity: ContinuityAudit,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.boundedness.violations == 0 && self.consistency.failures == 0 && self.continuity.passed
    }
}

pub fn audit(spec: &dyn DensityPayoff, cfg: &AuditConfig) -> Result<AuditReport, PayoffError> {
    Ok(AuditReport {
        name: spec.name().to_string(),
        boundedness: boundedness(spec, cfg)?,
        consistency: consistency(spec, cfg)?,
        continuity: continuity(spec, cfg)?,
    })
}

/// A random forecast on `edges`: Dirichlet(1/2) masses, sometimes with empty
/// bins, sometimes nearly a point mass.
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, edges: &[f64]) -> PiecewiseDensity {
    let bins = edges.len() - 1;
    let gamma = Gamma::new(0.5, 1.0).expect("valid shape");
    let mut w: Vec<f64> = (0..bins).map(|_| gamma.sample(rng)).collect();
    match rng.random_range(0..4) {
        0 => {
            let keep = rng.random_range(0..bins);
            for (i, x) in w.iter_mut().enumerate() {
                if i != keep && rng.random_bool(0.5) {
                    *x = 0.0;
                }
            }
        }
        1 => {
            let hot = rng.random_range(0..bins);
            w[hot] += 1e3 * w.iter().sum::<f64>();
        }
        _ => {}
    }
    if w.iter().sum::<f64>() <= 0.0 {
        w[0] = 1.0;
    }
    PiecewiseDensity::from_weights(edges.to_vec(), &w).expect("positive weights")
}

fn random_features<R: Rng + ?Sized>(rng: &mut R, edges: &[f64], experts: usize) -> Features {
    Features::with_experts((0..experts).map(|_| random_density(rng, edges)).collect())
}

pub fn boundedness(spec: &dyn DensityPayoff, cfg: &AuditConfig) -> Result<BoundednessAudit, PayoffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let edges = uniform_edges(cfg.y_min, cfg.y_max, cfg.bins);
    let bound = spec.bound();
    let mut max_norm_sq: f64 = 0.0;
    let mut violations = 0;
    for i in 0..cfg.bounded_samples {
        let x = random_features(&mut rng, &edges, spec.experts_needed());
        let p = random_density(&mut rng, &edges);
        let y = match (spec.outcome_set(&p), i % 4) {
            (Some(_), _) => spec.arbitrary_outcome(&p, &mut rng),
            (None, 0) => cfg.y_min,
            (None, 1) => cfg.y_max,
            (None, _) => spec.arbitrary_outcome(&p, &mut rng),
        };
        let n = spec.evaluate(&x, &p, y)?.norm_sq();
        max_norm_sq = max_norm_sq.max(n);
        if n > bound * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    Ok(BoundednessAudit {
        samples: cfg.bounded_samples,
        max_norm_sq,
        bound,
        violations,
    })
}

/// Per-coordinate z-scores of the Monte Carlo mean payoff under `y ~ p`.
fn z_scores(
    spec: &dyn DensityPayoff,
    x: &Features,
    p: &PiecewiseDensity,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, PayoffError> {
    let m = spec.labels().len();
    let mut sum = vec![0.0; m];
    let mut sq = vec![0.0; m];
    for _ in 0..n {
        let y = spec.sample_outcome(p, rng);
        let v = spec.evaluate(x, p, y)?;
        for ((s, q), x) in sum.iter_mut().zip(sq.iter_mut()).zip(v.values()) {
            *s += x;
            *q += x * x;
        }
    }
    let nf = n as f64;
    Ok(sum
        .iter()
        .zip(&sq)
        .map(|(s, q)| {
            let mean = s / nf;
            let var = (q / nf - mean * mean).max(0.0);
            let se = (var / nf).sqrt();
            if se > 0.0 {
                mean / se
            } else if mean.abs() <= 1e-12 {
                0.0
            } else {
                mean.signum() * f64::INFINITY
            }
        })
        .collect())
}

fn worst(z: &[f64], mask: &[bool]) -> f64 {
    z.iter()
        .zip(mask)
        .map(|(z, semi)| if *semi { *z } else { z.abs() })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Monte Carlo check that `E_{y~p} π = 0` (or `≤ 0` on semi-consistent
/// coordinates). Hundreds of forecasts times dozens of coordinates make
/// occasional 4σ excursions likely by chance, so flagged forecasts are
/// re-tested with ten times the samples and only count as failures if the
/// excursion persists.
pub fn consistency(spec: &dyn DensityPayoff, cfg: &AuditConfig) -> Result<ConsistencyAudit, PayoffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let edges = uniform_edges(cfg.y_min, cfg.y_max, cfg.bins);
    let mask = spec.orthant_mask();
    let mut worst_z = f64::NEG_INFINITY;
    let mut retested = 0;
    let mut failures = 0;
    for _ in 0..cfg.forecasts {
        let x = random_features(&mut rng, &edges, spec.experts_needed());
        let p = random_density(&mut rng, &edges);
        let z = worst(&z_scores(spec, &x, &p, cfg.consistency_samples, &mut rng)?, &mask);
        worst_z = worst_z.max(z);
        if z > cfg.z_limit {
            retested += 1;
            let again = worst(&z_scores(spec, &x, &p, 10 * cfg.consistency_samples, &mut rng)?, &mask);
            if again > cfg.z_limit {
                failures += 1;
            }
        }
    }
    Ok(ConsistencyAudit {
        forecasts: cfg.forecasts,
        samples: cfg.consistency_samples,
        worst_z,
        retested,
        failures,
    })
}

/// Finite-difference Lipschitz estimate of `p ↦ π(x, p, y)` under W1, using
/// the smoothed surrogate when the payoff has one. A continuous payoff keeps
/// the estimate bounded as the perturbation shrinks.
pub fn continuity(spec: &dyn DensityPayoff, cfg: &AuditConfig) -> Result<ContinuityAudit, PayoffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0de);
    let edges = uniform_edges(cfg.y_min, cfg.y_max, cfg.bins);
    let smoothed = spec.smoothable();
    let eval = |x: &Features, p: &PiecewiseDensity, y: f64| {
        if smoothed {
            spec.evaluate_smoothed(x, p, y, cfg.tau)
        } else {
            spec.evaluate(x, p, y)
        }
    };
    let mut lip = [0.0f64; 2];
    for _ in 0..cfg.continuity_samples {
        let x = random_features(&mut rng, &edges, spec.experts_needed());
        // Interior masses so both perturbation sizes stay on the simplex.
        let base = random_density(&mut rng, &edges);
        let masses: Vec<f64> = base.masses().iter().map(|m| 0.9 * m + 0.1 / cfg.bins as f64).collect();
        let p = base.with_masses(masses)?;
        let mut dir: Vec<f64> = (0..cfg.bins).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = dir.iter().sum::<f64>() / cfg.bins as f64;
        dir.iter_mut().for_each(|d| *d -= mean);
        let scale = dir.iter().map(|d| d.abs()).fold(0.0, f64::max).max(1e-12);
        let y = spec.arbitrary_outcome(&p, &mut rng);
        let v0 = eval(&x, &p, y)?;
        for (slot, h) in [1e-3, 1e-4].iter().enumerate() {
            let m: Vec<f64> = p.masses().iter().zip(&dir).map(|(m, d)| m + h * d / scale).collect();
            let q = p.with_masses(m)?;
            let w = p.wasserstein1(&q)?;
            if w <= 0.0 {
                continue;
            }
            let v1 = eval(&x, &q, y)?;
            let change = v0
                .values()
                .iter()
                .zip(v1.values())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            lip[slot] = lip[slot].max(change / w);
        }
    }
    let passed = lip.iter().all(|l| l.is_finite()) && lip[1] <= 2.0 * lip[0] + 1e-6;
    Ok(ContinuityAudit {
        samples: cfg.continuity_samples,
        smoothed,
        lipschitz_coarse: lip[0],
        lipschitz_fine: lip[1],
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoffs::{MomentPayoff, PayoffSpec, QuantilePayoff};

    fn quick() -> AuditConfig {
        AuditConfig {
            bounded_samples: 2000,
            forecasts: 20,
            consistency_samples: 5000,
            continuity_samples: 100,
            ..AuditConfig::default()
        }
    }

    #[test]
    fn shipped_payoffs_pass_quick_audit() {
        for spec in [
            Box::new(QuantilePayoff::standard()) as Box<dyn DensityPayoff>,
            Box::new(MomentPayoff::new(vec![1, 2]).unwrap()),
        ] {
            let r = audit(spec.as_ref(), &quick()).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    /// A payoff with a nonzero mean must be caught.
    struct Biased;

    impl PayoffSpec for Biased {
        fn name(&self) -> &str {
            "biased"
        }
        fn labels(&self) -> &crate::core_types::Labels {
            static L: std::sync::OnceLock<crate::core_types::Labels> = std::sync::OnceLock::new();
            L.get_or_init(|| crate::core_types::labels_from(["b"]))
        }
        fn bound(&self) -> f64 {
            1.0
        }
        fn evaluate(
            &self,
            _x: &Features,
            p: &PiecewiseDensity,
            y: f64,
        ) -> Result<crate::core_types::PayoffVector, PayoffError> {
            let v = 0.5 - (y - p.y_min()) / p.range();
            Ok(crate::core_types::PayoffVector::new(
                self.labels().clone(),
                vec![v],
                1.0,
            )?)
        }
    }

    impl DensityPayoff for Biased {}

    #[test]
    fn detects_inconsistent_payoff() {
        let r = consistency(&Biased, &quick()).unwrap();
        assert!(r.failures > 0);
    }
}
