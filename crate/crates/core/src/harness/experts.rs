//! Built-in expert forecasters.

use serde::{Deserialize, Serialize};

use crate::core_types::PiecewiseDensity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertKind {
    /// Histogram of every past outcome, add-one smoothed.
    Marginal,
    /// Normal fitted to a trailing window.
    RollingGaussian,
    /// Normal bump at the last outcome.
    Persistence,
}

impl ExpertKind {
    pub fn name(self) -> &'static str {
        match self {
            ExpertKind::Marginal => "marginal",
            ExpertKind::RollingGaussian => "rolling_gaussian",
            ExpertKind::Persistence => "persistence",
        }
    }
}

/// Trailing window of the rolling Gaussian expert.
pub const WINDOW: usize = 24;

/// Forecast on `edges` from all outcomes observed so far.
pub fn expert_forecast(kind: ExpertKind, history: &[f64], edges: &[f64]) -> PiecewiseDensity {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let width = (hi - lo) / bins as f64;
    let weights = if history.is_empty() {
        vec![1.0; bins]
    } else {
        match kind {
            ExpertKind::Marginal => {
                let mut w = vec![1.0; bins];
                for y in history {
                    let k = edges.partition_point(|e| e <= y).clamp(1, bins) - 1;
                    w[k] += 1.0;
                }
                w
            }
            ExpertKind::RollingGaussian => {
                let win = &history[history.len().saturating_sub(WINDOW)..];
                let n = win.len() as f64;
                let mean = win.iter().sum::<f64>() / n;
                let var = win.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
                normal_masses(edges, mean, var.sqrt().max(width))
            }
            ExpertKind::Persistence => normal_masses(edges, history[history.len() - 1], 2.0 * width),
        }
    };
    PiecewiseDensity::from_weights(edges.to_vec(), &weights).expect("expert weights are positive")
}

/// Bin masses of a normal, floored so every bin stays positive.
fn normal_masses(edges: &[f64], mean: f64, sd: f64) -> Vec<f64> {
    let cdf = |x: f64| 0.5 * (1.0 + libm::erf((x - mean) / (sd * std::f64::consts::SQRT_2)));
    edges.windows(2).map(|w| (cdf(w[1]) - cdf(w[0])).max(1e-9)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::uniform_edges;

    #[test]
    fn empty_history_is_uniform() {
        let e = uniform_edges(0.0, 1.0, 4);
        for k in [
            ExpertKind::Marginal,
            ExpertKind::RollingGaussian,
            ExpertKind::Persistence,
        ] {
            assert_eq!(expert_forecast(k, &[], &e).masses(), &[0.25; 4]);
        }
    }

    #[test]
    fn marginal_counts_with_add_one() {
        let e = uniform_edges(0.0, 1.0, 4);
        let p = expert_forecast(ExpertKind::Marginal, &[0.1, 0.2, 0.15, 0.9], &e);
        // Counts (3, 0, 0, 1) + 1 over 8.
        let want = [4.0 / 8.0, 1.0 / 8.0, 1.0 / 8.0, 2.0 / 8.0];
        for (a, b) in p.masses().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_series_gives_a_bump() {
        let e = uniform_edges(0.0, 1.0, 10);
        let p = expert_forecast(ExpertKind::RollingGaussian, &[0.55; 30], &e);
        assert!((p.mean() - 0.55).abs() < 0.01);
        assert!(p.masses()[5] > 0.35);
    }
}
