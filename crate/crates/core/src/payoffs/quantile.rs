//! Quantile calibration: one coordinate `1{F(y) <= α} - α` per level.

use serde::{Deserialize, Serialize};

use super::smooth::SmoothStep;
use super::{check_dir, DensityPayoff, DirectionalObjective, PayoffError, PayoffSpec};
use crate::core_types::{csum, labels_from, Features, Labels, PayoffVector, PiecewiseDensity};

/// Levels 0.01, 0.02, …, 0.99.
pub fn default_levels() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone)]
pub struct QuantilePayoff {
    levels: Vec<f64>,
    labels: Labels,
    bound: f64,
}

impl QuantilePayoff {
    pub fn new(levels: Vec<f64>) -> Result<Self, PayoffError> {
        if levels.is_empty() {
            return Err(PayoffError::Invalid("no quantile levels".into()));
        }
        if let Some(a) = levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(PayoffError::Invalid(format!("level {a} outside (0, 1)")));
        }
        let labels = labels_from(levels.iter().map(|a| format!("q{a}")));
        let bound = csum(levels.iter().map(|a| a.max(1.0 - a).powi(2)));
        Ok(Self { levels, labels, bound })
    }

    pub fn standard() -> Self {
        Self::new(default_levels()).expect("default levels are valid")
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// `Σ_α max(α, 1-α)²`, shared by the density and discrete forms.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    fn at_pit(&self, u: f64) -> Vec<f64> {
        self.levels.iter().map(|a| if u <= *a { 1.0 - a } else { -a }).collect()
    }
}

impl PayoffSpec for QuantilePayoff {
    fn name(&self) -> &str {
        "quantile"
    }

    fn labels(&self) -> &Labels {
        &self.labels
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn evaluate(&self, _x: &Features, p: &PiecewiseDensity, y: f64) -> Result<PayoffVector, PayoffError> {
        let u = p.cdf(y)?;
        Ok(PayoffVector::new(self.labels.clone(), self.at_pit(u), self.bound)?)
    }
}

impl DensityPayoff for QuantilePayoff {
    fn smoothable(&self) -> bool {
        true
    }

    fn objective<'a>(
        &'a self,
        _x: &'a Features,
        template: &PiecewiseDensity,
        ys: &[f64],
        dir: &[f64],
        tau: f64,
    ) -> Result<Box<dyn DirectionalObjective + 'a>, PayoffError> {
        check_dir(self.levels.len(), dir)?;
        let mut order: Vec<usize> = (0..self.levels.len()).collect();
        order.sort_by(|a, b| self.levels[*a].total_cmp(&self.levels[*b]));
        let sorted_levels: Vec<f64> = order.iter().map(|i| self.levels[*i]).collect();
        let mut suffix = vec![0.0; order.len() + 1];
        for j in (0..order.len()).rev() {
            suffix[j] = suffix[j + 1] + dir[order[j]];
        }
        let offset = csum(self.levels.iter().zip(dir).map(|(a, c)| a * c));
        let locs = ys.iter().map(|y| BinLoc::new(template, *y)).collect();
        Ok(Box::new(QuantileObjective {
            ys: ys.to_vec(),
            locs,
            sorted_levels,
            suffix,
            offset,
            dir: dir.to_vec(),
            step: SmoothStep::new(self.levels.clone(), tau),
        }))
    }

    fn evaluate_smoothed(
        &self,
        _x: &Features,
        p: &PiecewiseDensity,
        y: f64,
        tau: f64,
    ) -> Result<PayoffVector, PayoffError> {
        let u = p.cdf(y)?;
        let step = SmoothStep::new(self.levels.clone(), tau);
        let mut values = vec![0.0; self.levels.len()];
        step.for_each(u, |i, s, _| values[i] = s - self.levels[i]);
        Ok(PayoffVector::new(self.labels.clone(), values, self.bound)?)
    }
}

/// Where an outcome sits in a bin layout: `F(y) = cum[bin] + m[bin]·frac`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BinLoc {
    pub bin: usize,
    pub frac: f64,
}

impl BinLoc {
    pub fn new(p: &PiecewiseDensity, y: f64) -> Self {
        let bin = p.bin_of(y);
        let (lo, hi) = (p.edges()[bin], p.edges()[bin + 1]);
        Self {
            bin,
            frac: ((y - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    /// Adds `coef · ∂F(y)/∂m` into `grad`.
    pub fn add_cdf_grad(&self, coef: f64, grad: &mut [f64]) {
        for g in &mut grad[..self.bin] {
            *g += coef;
        }
        grad[self.bin] += coef * self.frac;
    }
}

struct QuantileObjective {
    ys: Vec<f64>,
    locs: Vec<BinLoc>,
    sorted_levels: Vec<f64>,
    suffix: Vec<f64>,
    offset: f64,
    dir: Vec<f64>,
    step: SmoothStep,
}

impl DirectionalObjective for QuantileObjective {
    fn outcomes(&self) -> usize {
        self.ys.len()
    }

    fn value(&self, p: &PiecewiseDensity, k: usize) -> f64 {
        let u = p.cdf_clamped(self.ys[k]);
        let first = self.sorted_levels.partition_point(|a| *a < u);
        self.suffix[first] - self.offset
    }

    fn smoothed(&self, p: &PiecewiseDensity, k: usize, grad: &mut [f64]) -> f64 {
        let u = p.cdf_clamped(self.ys[k]);
        let mut value = -self.offset;
        let mut du = 0.0;
        self.step.for_each(u, |i, s, ds| {
            value += self.dir[i] * s;
            du += self.dir[i] * ds;
        });
        self.locs[k].add_cdf_grad(du, grad);
        value
    }
}

/// A forecast with finitely many atoms; its CDF jumps, so the quantile
/// payoff needs the linearized form across gaps in the CDF's range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteForecast {
    atoms: Vec<f64>,
    probs: Vec<f64>,
    cum: Vec<f64>,
}

impl DiscreteForecast {
    pub fn new(atoms: Vec<f64>, probs: Vec<f64>) -> Result<Self, PayoffError> {
        if atoms.is_empty() || atoms.len() != probs.len() {
            return Err(PayoffError::Invalid("atoms and probabilities must pair up".into()));
        }
        if atoms.windows(2).any(|w| w[0] >= w[1]) || probs.iter().any(|p| !(*p > 0.0)) {
            return Err(PayoffError::Invalid(
                "atoms must increase and carry positive mass".into(),
            ));
        }
        let total = csum(probs.iter().copied());
        if (total - 1.0).abs() > 1e-9 {
            return Err(PayoffError::Invalid(format!("probabilities sum to {total}")));
        }
        let mut cum = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p / total;
            cum.push(acc.min(1.0));
        }
        *cum.last_mut().unwrap() = 1.0;
        Ok(Self { atoms, probs, cum })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let n = self.atoms.partition_point(|a| *a <= y);
        if n == 0 {
            0.0
        } else {
            self.cum[n - 1]
        }
    }

    /// Closest values of the CDF's range below and above `alpha`.
    pub fn bracket(&self, alpha: f64) -> (f64, f64) {
        let i = self.cum.partition_point(|c| *c < alpha);
        let upper = self.cum[i.min(self.cum.len() - 1)];
        let lower = if i == 0 { 0.0 } else { self.cum[i - 1] };
        if upper == alpha {
            (alpha, alpha)
        } else {
            (lower, upper)
        }
    }
}

impl PayoffSpec<DiscreteForecast> for QuantilePayoff {
    fn name(&self) -> &str {
        "quantile"
    }

    fn labels(&self) -> &Labels {
        &self.labels
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn evaluate(&self, _x: &Features, p: &DiscreteForecast, y: f64) -> Result<PayoffVector, PayoffError> {
        let u = p.cdf(y);
        let ind = |c: f64| if u <= c { 1.0 } else { 0.0 };
        let values = self
            .levels
            .iter()
            .map(|a| {
                let (lo, hi) = p.bracket(*a);
                if lo == hi {
                    ind(*a) - a
                } else {
                    let lambda = (hi - a) / (hi - lo);
                    lambda * ind(lo) + (1.0 - lambda) * ind(hi) - a
                }
            })
            .collect();
        Ok(PayoffVector::new(self.labels.clone(), values, self.bound)?)
    }
}
