//! Direct sums of payoffs, optionally with each block normalized by its bound.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{check_dir, Block, DensityPayoff, DirectionalObjective, PayoffError, PayoffSpec};
use crate::core_types::{labels_from, norm_sq, Features, Labels, PayoffVector, PiecewiseDensity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    /// Blocks as they are; the bound is `Σ B_i`.
    Concat,
    /// Block `i` scaled by `1/√B_i`, so each block's squared norm is at most
    /// one and the bound is the number of blocks.
    Normalized,
}

pub struct Combined {
    parts: Vec<Arc<dyn DensityPayoff>>,
    blocks: Vec<Block>,
    labels: Labels,
    mask: Vec<bool>,
    bound: f64,
    mode: CombineMode,
}

impl Combined {
    pub fn new(parts: Vec<Arc<dyn DensityPayoff>>, mode: CombineMode) -> Result<Self, PayoffError> {
        let named = parts.into_iter().map(|p| (p.name().to_string(), p)).collect();
        Self::with_names(named, mode)
    }

    /// Like [`Combined::new`] with explicit block names (needed when two
    /// blocks share a payoff type).
    pub fn with_names(parts: Vec<(String, Arc<dyn DensityPayoff>)>, mode: CombineMode) -> Result<Self, PayoffError> {
        if parts.is_empty() {
            return Err(PayoffError::Invalid("nothing to combine".into()));
        }
        let mut names: Vec<&str> = parts.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(PayoffError::Invalid(format!("duplicate block name `{}`", w[0])));
        }
        let mut blocks = Vec::with_capacity(parts.len());
        let mut labels = Vec::new();
        let mut mask = Vec::new();
        let mut start = 0;
        for (name, p) in &parts {
            let b = p.bound();
            if !(b > 0.0 && b.is_finite()) {
                return Err(PayoffError::Invalid(format!("block `{name}` has bound {b}")));
            }
            let len = p.labels().len();
            blocks.push(Block {
                name: name.clone(),
                start,
                len,
                bound: b,
                scale: match mode {
                    CombineMode::Concat => 1.0,
                    CombineMode::Normalized => 1.0 / b.sqrt(),
                },
            });
            labels.extend(p.labels().iter().map(|l| format!("{name}/{l}")));
            mask.extend(p.orthant_mask());
            start += len;
        }
        let bound = match mode {
            CombineMode::Concat => blocks.iter().map(|b| b.bound).sum(),
            CombineMode::Normalized => blocks.len() as f64,
        };
        Ok(Self {
            parts: parts.into_iter().map(|(_, p)| p).collect(),
            blocks,
            labels: labels_from(labels),
            mask,
            bound,
            mode,
        })
    }

    pub fn mode(&self) -> CombineMode {
        self.mode
    }

    pub fn parts(&self) -> &[Arc<dyn DensityPayoff>] {
        &self.parts
    }

    /// Squared norm of each block of a combined vector, with the block
    /// scaling undone (i.e. in the component payoff's own units).
    pub fn raw_block_norms_sq(&self, v: &[f64]) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| norm_sq(&v[b.range()]) / (b.scale * b.scale))
            .collect()
    }

    fn join(&self, pieces: Vec<PayoffVector>) -> Result<PayoffVector, PayoffError> {
        let mut values = Vec::with_capacity(self.labels.len());
        for (b, v) in self.blocks.iter().zip(pieces) {
            values.extend(v.values().iter().map(|x| x * b.scale));
        }
        Ok(PayoffVector::new(self.labels.clone(), values, self.bound)?)
    }
}

impl PayoffSpec for Combined {
    fn name(&self) -> &str {
        "combined"
    }

    fn labels(&self) -> &Labels {
        &self.labels
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn evaluate(&self, x: &Features, p: &PiecewiseDensity, y: f64) -> Result<PayoffVector, PayoffError> {
        let pieces = self
            .parts
            .iter()
            .map(|s| s.evaluate(x, p, y))
            .collect::<Result<Vec<_>, _>>()?;
        self.join(pieces)
    }

    fn semi_consistent(&self) -> bool {
        self.mask.iter().all(|m| *m)
    }

    fn orthant_mask(&self) -> Vec<bool> {
        self.mask.clone()
    }

    fn blocks(&self) -> Vec<Block> {
        self.blocks.clone()
    }
}

impl DensityPayoff for Combined {
    fn smoothable(&self) -> bool {
        self.parts.iter().all(|p| p.smoothable())
    }

    fn objective<'a>(
        &'a self,
        x: &'a Features,
        template: &PiecewiseDensity,
        ys: &[f64],
        dir: &[f64],
        tau: f64,
    ) -> Result<Box<dyn DirectionalObjective + 'a>, PayoffError> {
        check_dir(self.labels.len(), dir)?;
        let parts = self
            .parts
            .iter()
            .zip(&self.blocks)
            .map(|(p, b)| {
                let d: Vec<f64> = dir[b.range()].iter().map(|c| c * b.scale).collect();
                p.objective(x, template, ys, &d, tau)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Box::new(SumObjective { parts }))
    }

    fn evaluate_smoothed(
        &self,
        x: &Features,
        p: &PiecewiseDensity,
        y: f64,
        tau: f64,
    ) -> Result<PayoffVector, PayoffError> {
        let pieces = self
            .parts
            .iter()
            .map(|s| s.evaluate_smoothed(x, p, y, tau))
            .collect::<Result<Vec<_>, _>>()?;
        self.join(pieces)
    }

    fn sample_outcome(&self, p: &PiecewiseDensity, rng: &mut dyn RngCore) -> f64 {
        match self.parts.iter().find(|s| s.outcome_set(p).is_some()) {
            Some(s) => s.sample_outcome(p, rng),
            None => self.parts[0].sample_outcome(p, rng),
        }
    }

    fn arbitrary_outcome(&self, p: &PiecewiseDensity, rng: &mut dyn RngCore) -> f64 {
        match self.parts.iter().find(|s| s.outcome_set(p).is_some()) {
            Some(s) => s.arbitrary_outcome(p, rng),
            None => self.parts[0].arbitrary_outcome(p, rng),
        }
    }

    fn outcome_set(&self, p: &PiecewiseDensity) -> Option<Vec<f64>> {
        self.parts.iter().find_map(|s| s.outcome_set(p))
    }

    fn experts_needed(&self) -> usize {
        self.parts.iter().map(|p| p.experts_needed()).max().unwrap_or(0)
    }
}

struct SumObjective<'a> {
    parts: Vec<Box<dyn DirectionalObjective + 'a>>,
}

impl DirectionalObjective for SumObjective<'_> {
    fn outcomes(&self) -> usize {
        self.parts[0].outcomes()
    }

    fn value(&self, p: &PiecewiseDensity, k: usize) -> f64 {
        self.parts.iter().map(|o| o.value(p, k)).sum()
    }

    fn smoothed(&self, p: &PiecewiseDensity, k: usize, grad: &mut [f64]) -> f64 {
        self.parts.iter().map(|o| o.smoothed(p, k, grad)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::dot;
    use crate::payoffs::{MomentPayoff, QuantilePayoff};

    fn parts() -> Vec<Arc<dyn DensityPayoff>> {
        vec![
            Arc::new(QuantilePayoff::new(vec![0.25, 0.5, 0.75]).unwrap()),
            Arc::new(MomentPayoff::new(vec![1, 2, 3]).unwrap()),
        ]
    }

    #[test]
    fn concat_adds_bounds() {
        let c = Combined::new(parts(), CombineMode::Concat).unwrap();
        assert!((c.bound() - (0.5625 + 0.25 + 0.5625 + 3.0)).abs() < 1e-15);
        assert_eq!(c.labels().len(), 6);
        assert_eq!(c.labels()[3], "moment/m1");
    }

    #[test]
    fn singleton_concat_matches_component() {
        let q = QuantilePayoff::standard();
        let c = Combined::new(vec![Arc::new(q.clone())], CombineMode::Concat).unwrap();
        let p = PiecewiseDensity::new(vec![0.0, 0.3, 1.0], vec![0.6, 0.4]).unwrap();
        let x = Features::default();
        for y in [0.0, 0.2, 0.7, 1.0] {
            assert_eq!(
                c.evaluate(&x, &p, y).unwrap().values(),
                q.evaluate(&x, &p, y).unwrap().values()
            );
        }
        assert_eq!(c.bound(), q.bound());
    }

    #[test]
    fn normalized_blocks_scale_by_root_bound() {
        let c = Combined::new(parts(), CombineMode::Normalized).unwrap();
        assert_eq!(c.bound(), 2.0);
        let p = PiecewiseDensity::new(vec![0.0, 0.3, 1.0], vec![0.6, 0.4]).unwrap();
        let x = Features::default();
        let v = c.evaluate(&x, &p, 0.4).unwrap();
        let raw = c.raw_block_norms_sq(v.values());
        for (part, (b, r)) in c.parts().iter().zip(c.blocks().iter().zip(&raw)) {
            let direct = part.evaluate(&x, &p, 0.4).unwrap().norm_sq();
            assert!((r - direct).abs() < 1e-12);
            assert!((norm_sq(&v.values()[b.range()]) - direct / b.bound).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let q: Arc<dyn DensityPayoff> = Arc::new(QuantilePayoff::standard());
        assert!(Combined::new(vec![q.clone(), q], CombineMode::Concat).is_err());
    }

    #[test]
    fn combined_objective_matches_direct_evaluation() {
        let c = Combined::new(parts(), CombineMode::Normalized).unwrap();
        let p = PiecewiseDensity::new(vec![0.0, 0.3, 1.0], vec![0.6, 0.4]).unwrap();
        let x = Features::default();
        let dir = [0.5, -0.1, 0.3, 1.0, -2.0, 0.25];
        let ys = [0.0, 0.1, 0.5, 0.95];
        let obj = c.objective(&x, &p, &ys, &dir, 0.01).unwrap();
        for (k, y) in ys.iter().enumerate() {
            let direct = dot(c.evaluate(&x, &p, *y).unwrap().values(), &dir);
            assert!((obj.value(&p, k) - direct).abs() < 1e-12);
        }
    }
}
