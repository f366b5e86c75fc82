//! Distribution calibration over a finite set of reference forecasts: for
//! each reference cell and threshold `z`, the kernel weight of the forecast
//! times `F_p(z) - 1{y <= z}`.

use super::{DensityPayoff, PayoffError, PayoffSpec};
use crate::core_types::{labels_from, Features, Labels, PayoffVector, PiecewiseDensity};

#[derive(Debug, Clone)]
pub struct DistributionPayoff {
    cells: Vec<PiecewiseDensity>,
    thresholds: Vec<f64>,
    bandwidth: f64,
    labels: Labels,
    bound: f64,
}

impl DistributionPayoff {
    pub const MAX_GRID: usize = 50;

    /// `bandwidth = None` uses the median pairwise W1 distance of the cells.
    pub fn new(
        cells: Vec<PiecewiseDensity>,
        thresholds: Vec<f64>,
        bandwidth: Option<f64>,
    ) -> Result<Self, PayoffError> {
        if cells.is_empty() || thresholds.is_empty() {
            return Err(PayoffError::Invalid("distribution grids must be nonempty".into()));
        }
        if cells.len() > Self::MAX_GRID || thresholds.len() > Self::MAX_GRID {
            return Err(PayoffError::Invalid(format!(
                "grids of {} cells and {} thresholds exceed {}",
                cells.len(),
                thresholds.len(),
                Self::MAX_GRID
            )));
        }
        let n = cells.len();
        let mut dist = vec![vec![0.0; n]; n];
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let d = cells[i].wasserstein1(&cells[j])?;
                dist[i][j] = d;
                dist[j][i] = d;
                pairs.push(d);
            }
        }
        let bandwidth = match bandwidth {
            Some(b) => b,
            None if pairs.is_empty() => cells[0].range(),
            None => {
                pairs.sort_by(|a, b| a.total_cmp(b));
                pairs[pairs.len() / 2]
            }
        };
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(PayoffError::Invalid(format!("bandwidth {bandwidth}")));
        }
        // Cells with positive weight are all within `bandwidth` of the
        // forecast, hence within `2·bandwidth` of each other.
        let crowd = (0..n)
            .map(|i| dist[i].iter().filter(|d| **d < 2.0 * bandwidth).count())
            .max()
            .unwrap_or(1);
        let labels = labels_from((0..n).flat_map(|c| thresholds.iter().map(move |z| format!("d{c}@{z}"))));
        let bound = (crowd * thresholds.len()) as f64;
        Ok(Self {
            cells,
            thresholds,
            bandwidth,
            labels,
            bound,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn weights(&self, p: &PiecewiseDensity) -> Result<Vec<f64>, PayoffError> {
        self.cells
            .iter()
            .map(|c| Ok((1.0 - p.wasserstein1(c)? / self.bandwidth).max(0.0)))
            .collect()
    }
}

impl PayoffSpec for DistributionPayoff {
    fn name(&self) -> &str {
        "distribution"
    }

    fn labels(&self) -> &Labels {
        &self.labels
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn evaluate(&self, _x: &Features, p: &PiecewiseDensity, y: f64) -> Result<PayoffVector, PayoffError> {
        p.cdf(y)?;
        let weights = self.weights(p)?;
        let gaps: Vec<f64> = self
            .thresholds
            .iter()
            .map(|z| p.cdf_clamped(*z) - if y <= *z { 1.0 } else { 0.0 })
            .collect();
        let values = weights.iter().flat_map(|w| gaps.iter().map(move |g| w * g)).collect();
        Ok(PayoffVector::new(self.labels.clone(), values, self.bound)?)
    }
}

impl DensityPayoff for DistributionPayoff {}
