//! Moment matching on the outcome rescaled to [0, 1]: `E_p[u^k] - u^k`.

use super::{check_dir, unit, DensityPayoff, DirectionalObjective, PayoffError, PayoffSpec};
use crate::core_types::{csum, labels_from, Features, Labels, PayoffVector, PiecewiseDensity};

#[derive(Debug, Clone)]
pub struct MomentPayoff {
    orders: Vec<u32>,
    labels: Labels,
}

impl MomentPayoff {
    pub fn new(orders: Vec<u32>) -> Result<Self, PayoffError> {
        if orders.is_empty() || orders.contains(&0) {
            return Err(PayoffError::Invalid(
                "moment orders must be positive and nonempty".into(),
            ));
        }
        let labels = labels_from(orders.iter().map(|k| format!("m{k}")));
        Ok(Self { orders, labels })
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }
}

impl PayoffSpec for MomentPayoff {
    fn name(&self) -> &str {
        "moment"
    }

    fn labels(&self) -> &Labels {
        &self.labels
    }

    fn bound(&self) -> f64 {
        self.orders.len() as f64
    }

    fn evaluate(&self, _x: &Features, p: &PiecewiseDensity, y: f64) -> Result<PayoffVector, PayoffError> {
        p.cdf(y)?;
        let u = unit(p, y);
        let values = self
            .orders
            .iter()
            .map(|k| p.unit_moment(*k) - u.powi(*k as i32))
            .collect();
        Ok(PayoffVector::new(self.labels.clone(), values, self.bound())?)
    }
}

impl DensityPayoff for MomentPayoff {
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
        check_dir(self.orders.len(), dir)?;
        // The payoff is linear in the masses: Σ_k c_k E[u^k] = Σ_b m_b w_b.
        let (lo, r) = (template.y_min(), template.range());
        let e = template.edges();
        let weights = (0..template.bins())
            .map(|b| {
                let (a, z) = ((e[b] - lo) / r, (e[b + 1] - lo) / r);
                csum(self.orders.iter().zip(dir).map(|(k, c)| {
                    let kp = *k as i32 + 1;
                    c * (z.powi(kp) - a.powi(kp)) / (kp as f64 * (z - a))
                }))
            })
            .collect();
        let targets = ys
            .iter()
            .map(|y| {
                let u = unit(template, *y);
                csum(self.orders.iter().zip(dir).map(|(k, c)| c * u.powi(*k as i32)))
            })
            .collect();
        Ok(Box::new(LinearObjective { weights, targets }))
    }
}

/// `<w, m> - target_k`, exact and already smooth.
pub(crate) struct LinearObjective {
    pub weights: Vec<f64>,
    pub targets: Vec<f64>,
}

impl DirectionalObjective for LinearObjective {
    fn outcomes(&self) -> usize {
        self.targets.len()
    }

    fn value(&self, p: &PiecewiseDensity, k: usize) -> f64 {
        csum(p.masses().iter().zip(&self.weights).map(|(m, w)| m * w)) - self.targets[k]
    }

    fn smoothed(&self, p: &PiecewiseDensity, k: usize, grad: &mut [f64]) -> f64 {
        for (g, w) in grad.iter_mut().zip(&self.weights) {
            *g += w;
        }
        self.value(p, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::dot;

    #[test]
    fn examples() {
        let m = MomentPayoff::new(vec![1, 2]).unwrap();
        let p = PiecewiseDensity::uniform(0.0, 1.0, 10).unwrap();
        let x = Features::default();
        assert!(m.evaluate(&x, &p, 0.5).unwrap().values()[0].abs() < 1e-15);
        assert!((m.evaluate(&x, &p, 0.0).unwrap().values()[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(MomentPayoff::new(vec![]).is_err());
    }

    #[test]
    fn rescales_outcomes() {
        let m = MomentPayoff::new(vec![1]).unwrap();
        let p = PiecewiseDensity::uniform(10.0, 30.0, 4).unwrap();
        let v = m.evaluate(&Features::default(), &p, 25.0).unwrap();
        assert!((v.values()[0] - (0.5 - 0.75)).abs() < 1e-15);
    }

    #[test]
    fn objective_matches_direct_evaluation() {
        let m = MomentPayoff::new(vec![1, 2, 3]).unwrap();
        let p = PiecewiseDensity::new(vec![0.0, 1.0, 3.0, 4.0], vec![0.2, 0.5, 0.3]).unwrap();
        let x = Features::default();
        let dir = [0.3, -1.2, 0.7];
        let ys = [0.0, 0.5, 2.2, 4.0];
        let obj = m.objective(&x, &p, &ys, &dir, 0.01).unwrap();
        for (k, y) in ys.iter().enumerate() {
            let direct = dot(m.evaluate(&x, &p, *y).unwrap().values(), &dir);
            assert!((obj.value(&p, k) - direct).abs() < 1e-13);
        }
    }
}
