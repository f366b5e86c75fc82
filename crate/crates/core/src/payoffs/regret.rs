//! Excess loss against each expert forecast carried in the features.

use serde::{Deserialize, Serialize};

use super::{check_dir, unit, DensityPayoff, DirectionalObjective, PayoffError, PayoffSpec};
use crate::core_types::{csum, labels_from, CoreError, Features, Labels, PayoffVector, PiecewiseDensity};

/// Bounded proper scoring rules, both scaled into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// CRPS divided by the support width.
    Crps,
    /// Squared error of the forecast mean, outcome rescaled to [0, 1].
    Mse,
}

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::Crps => "crps",
            Loss::Mse => "mse",
        }
    }

    pub fn eval(self, p: &PiecewiseDensity, y: f64) -> Result<f64, CoreError> {
        match self {
            Loss::Crps => Ok(p.crps(y)? / p.range()),
            Loss::Mse => {
                p.cdf(y)?;
                Ok((unit_mean(p) - unit(p, y)).powi(2))
            }
        }
    }

    /// Loss and its gradient in the masses (written into `grad`).
    fn eval_with_grad(self, p: &PiecewiseDensity, y: f64, grad: &mut [f64]) -> f64 {
        match self {
            Loss::Crps => {
                let r = p.range();
                let v = p.crps_with_grad(y, grad);
                for g in grad.iter_mut() {
                    *g /= r;
                }
                v / r
            }
            Loss::Mse => {
                let d = unit_mean(p) - unit(p, y);
                for (g, c) in grad.iter_mut().zip(unit_centers(p)) {
                    *g = 2.0 * d * c;
                }
                d * d
            }
        }
    }
}

fn unit_centers(p: &PiecewiseDensity) -> impl Iterator<Item = f64> + '_ {
    let (lo, r) = (p.y_min(), p.range());
    p.edges().windows(2).map(move |w| (0.5 * (w[0] + w[1]) - lo) / r)
}

fn unit_mean(p: &PiecewiseDensity) -> f64 {
    csum(p.masses().iter().zip(unit_centers(p)).map(|(m, c)| m * c))
}

#[derive(Debug, Clone)]
pub struct RegretPayoff {
    experts: usize,
    loss: Loss,
    labels: Labels,
}

impl RegretPayoff {
    pub fn new(experts: usize, loss: Loss) -> Result<Self, PayoffError> {
        if experts == 0 {
            return Err(PayoffError::Invalid("regret needs at least one expert".into()));
        }
        let labels = labels_from((0..experts).map(|i| format!("{}_e{i}", loss.name())));
        Ok(Self { experts, loss, labels })
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    fn experts<'a>(&self, x: &'a Features, p: &PiecewiseDensity) -> Result<&'a [PiecewiseDensity], PayoffError> {
        if x.experts.len() < self.experts {
            return Err(PayoffError::MissingExperts {
                needed: self.experts,
                found: x.experts.len(),
            });
        }
        let experts = &x.experts[..self.experts];
        if experts.iter().any(|e| !e.same_support(p)) {
            return Err(CoreError::Support.into());
        }
        Ok(experts)
    }
}

impl PayoffSpec for RegretPayoff {
    fn name(&self) -> &str {
        self.loss.name()
    }

    fn labels(&self) -> &Labels {
        &self.labels
    }

    fn bound(&self) -> f64 {
        self.experts as f64
    }

    fn evaluate(&self, x: &Features, p: &PiecewiseDensity, y: f64) -> Result<PayoffVector, PayoffError> {
        let experts = self.experts(x, p)?;
        let own = self.loss.eval(p, y)?;
        let values = experts
            .iter()
            .map(|e| Ok(own - self.loss.eval(e, y)?))
            .collect::<Result<Vec<_>, CoreError>>()?;
        Ok(PayoffVector::new(self.labels.clone(), values, self.bound())?)
    }

    fn semi_consistent(&self) -> bool {
        true
    }
}

impl DensityPayoff for RegretPayoff {
    fn smoothable(&self) -> bool {
        true
    }

    fn objective<'a>(
        &'a self,
        x: &'a Features,
        template: &PiecewiseDensity,
        ys: &[f64],
        dir: &[f64],
        _tau: f64,
    ) -> Result<Box<dyn DirectionalObjective + 'a>, PayoffError> {
        check_dir(self.experts, dir)?;
        let experts = self.experts(x, template)?;
        let expert_terms = ys
            .iter()
            .map(|y| {
                let losses = experts
                    .iter()
                    .map(|e| self.loss.eval(e, *y))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(csum(losses.iter().zip(dir).map(|(l, c)| l * c)))
            })
            .collect::<Result<Vec<_>, CoreError>>()?;
        Ok(Box::new(RegretObjective {
            loss: self.loss,
            ys: ys.to_vec(),
            total: csum(dir.iter().copied()),
            expert_terms,
        }))
    }

    fn experts_needed(&self) -> usize {
        self.experts
    }
}

struct RegretObjective {
    loss: Loss,
    ys: Vec<f64>,
    total: f64,
    expert_terms: Vec<f64>,
}

impl DirectionalObjective for RegretObjective {
    fn outcomes(&self) -> usize {
        self.ys.len()
    }

    fn value(&self, p: &PiecewiseDensity, k: usize) -> f64 {
        let own = self.loss.eval(p, self.ys[k]).unwrap_or(f64::NAN);
        self.total * own - self.expert_terms[k]
    }

    fn smoothed(&self, p: &PiecewiseDensity, k: usize, grad: &mut [f64]) -> f64 {
        let mut local = vec![0.0; grad.len()];
        let own = self.loss.eval_with_grad(p, self.ys[k], &mut local);
        for (g, l) in grad.iter_mut().zip(&local) {
            *g += self.total * l;
        }
        self.total * own - self.expert_terms[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_mass_at_zero() -> PiecewiseDensity {
        let mut w = vec![0.0; 100];
        w[0] = 1.0;
        PiecewiseDensity::from_weights(crate::core_types::uniform_edges(0.0, 1.0, 100), &w).unwrap()
    }

    #[test]
    fn identical_forecasts_have_zero_regret() {
        let p = PiecewiseDensity::new(vec![0.0, 0.5, 1.0], vec![0.3, 0.7]).unwrap();
        let x = Features::with_experts(vec![p.clone(), p.clone()]);
        for loss in [Loss::Crps, Loss::Mse] {
            let r = RegretPayoff::new(2, loss).unwrap();
            let v = r.evaluate(&x, &p, 0.2).unwrap();
            assert_eq!(v.values(), &[0.0, 0.0]);
        }
    }

    #[test]
    fn uniform_against_point_mass_expert() {
        let p = PiecewiseDensity::uniform(0.0, 1.0, 100).unwrap();
        let x = Features::with_experts(vec![point_mass_at_zero()]);
        let r = RegretPayoff::new(1, Loss::Crps).unwrap();
        let v = r.evaluate(&x, &p, 0.0).unwrap().values()[0];
        // Expert CRPS is ∫_0^{0.01} (1 - 100z)^2 dz = 1/300.
        assert!((v - (1.0 / 3.0 - 1.0 / 300.0)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn missing_experts_rejected() {
        let p = PiecewiseDensity::uniform(0.0, 1.0, 4).unwrap();
        let r = RegretPayoff::new(2, Loss::Mse).unwrap();
        let x = Features::with_experts(vec![p.clone()]);
        assert_eq!(
            r.evaluate(&x, &p, 0.5).unwrap_err(),
            PayoffError::MissingExperts { needed: 2, found: 1 }
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = PiecewiseDensity::new(
            crate::core_types::uniform_edges(0.0, 2.0, 5),
            vec![0.1, 0.3, 0.2, 0.25, 0.15],
        )
        .unwrap();
        for loss in [Loss::Crps, Loss::Mse] {
            let mut grad = vec![0.0; 5];
            loss.eval_with_grad(&p, 0.7, &mut grad);
            // Tangent directions e_b - e_0 keep the masses on the simplex.
            for b in 1..5 {
                let h = 1e-6;
                let bump = |s: f64| {
                    let mut m = p.masses().to_vec();
                    m[b] += s;
                    m[0] -= s;
                    let q = p.with_masses(m).unwrap();
                    let mut g = vec![0.0; 5];
                    loss.eval_with_grad(&q, 0.7, &mut g)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = grad[b] - grad[0];
                assert!((fd - an).abs() < 1e-6, "{loss:?} bin {b}: {fd} vs {an}");
            }
        }
    }
}
