//! Decision calibration: forecasted versus realized utility of each action,
//! optionally gated by the forecast's Bayes action (swap variant).

use std::sync::OnceLock;

use super::moment::LinearObjective;
use super::smooth::logistic;
use super::{check_dir, DensityPayoff, DirectionalObjective, PayoffError, PayoffSpec};
use crate::core_types::{csum, labels_from, Features, Labels, PayoffVector, PiecewiseDensity};

/// Utility of a finite set of actions.
pub trait Utility: Send + Sync {
    fn actions(&self) -> usize;
    fn utility(&self, a: usize, y: f64, x: &Features) -> f64;

    /// `max_y u - min_y u` for action `a` over `[lo, hi]`.
    fn span(&self, a: usize, lo: f64, hi: f64) -> f64;

    /// Average of `u(a, ·)` over `[lo, hi]`; Gauss–Legendre unless overridden.
    fn bin_average(&self, a: usize, lo: f64, hi: f64, x: &Features) -> f64 {
        static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
        let (nodes, weights) = RULE.get_or_init(|| gauss_legendre(32));
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        0.5 * csum(
            nodes
                .iter()
                .zip(weights)
                .map(|(z, w)| w * self.utility(a, mid + half * z, x)),
        )
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `u(a, y) = -(y - a)²` for point predictions `a`.
#[derive(Debug, Clone)]
pub struct SquaredErrorUtility {
    pub points: Vec<f64>,
}

impl Utility for SquaredErrorUtility {
    fn actions(&self) -> usize {
        self.points.len()
    }

    fn utility(&self, a: usize, y: f64, _x: &Features) -> f64 {
        -(y - self.points[a]).powi(2)
    }

    fn span(&self, a: usize, lo: f64, hi: f64) -> f64 {
        let c = self.points[a];
        let worst = (lo - c).powi(2).max((hi - c).powi(2));
        let best = if c < lo {
            (lo - c).powi(2)
        } else if c > hi {
            (hi - c).powi(2)
        } else {
            0.0
        };
        worst - best
    }

    fn bin_average(&self, a: usize, lo: f64, hi: f64, _x: &Features) -> f64 {
        let c = self.points[a];
        -((hi - c).powi(3) - (lo - c).powi(3)) / (3.0 * (hi - lo))
    }
}

/// Negated asymmetric pinball loss `(1+λ)(y-a)⁺ + (1-λ)(a-y)⁺` of committing `a`.
#[derive(Debug, Clone)]
pub struct PinballUtility {
    pub points: Vec<f64>,
    pub lambda: f64,
}

impl PinballUtility {
    fn loss(&self, a: usize, y: f64) -> f64 {
        let d = y - self.points[a];
        if d >= 0.0 {
            (1.0 + self.lambda) * d
        } else {
            -(1.0 - self.lambda) * d
        }
    }
}

impl Utility for PinballUtility {
    fn actions(&self) -> usize {
        self.points.len()
    }

    fn utility(&self, a: usize, y: f64, _x: &Features) -> f64 {
        -self.loss(a, y)
    }

    fn span(&self, a: usize, lo: f64, hi: f64) -> f64 {
        let c = self.points[a].clamp(lo, hi);
        self.loss(a, lo).max(self.loss(a, hi)) - self.loss(a, c)
    }

    fn bin_average(&self, a: usize, lo: f64, hi: f64, _x: &Features) -> f64 {
        let c = self.points[a];
        let (up, down) = (1.0 + self.lambda, 1.0 - self.lambda);
        // ∫ over [lo, hi] split at c; both pieces are linear.
        let below = |l: f64, h: f64| down * ((c - l).powi(2) - (c - h).powi(2)) / 2.0;
        let above = |l: f64, h: f64| up * ((h - c).powi(2) - (l - c).powi(2)) / 2.0;
        let total = if hi <= c {
            below(lo, hi)
        } else if lo >= c {
            above(lo, hi)
        } else {
            below(lo, c) + above(c, hi)
        };
        -total / (hi - lo)
    }
}

pub struct DecisionPayoff<U> {
    utility: U,
    swap: bool,
    y_min: f64,
    y_max: f64,
    labels: Labels,
    spans: Vec<f64>,
}

impl<U: Utility> DecisionPayoff<U> {
    /// Payoff for outcomes in `[y_min, y_max]`, which fixes the bound.
    pub fn new(utility: U, swap: bool, y_min: f64, y_max: f64) -> Result<Self, PayoffError> {
        let n = utility.actions();
        if n == 0 {
            return Err(PayoffError::Invalid("empty action set".into()));
        }
        if !(y_min < y_max) {
            return Err(PayoffError::Invalid("empty outcome interval".into()));
        }
        let labels = if swap {
            labels_from((0..n).flat_map(|a| (0..n).map(move |b| format!("u{a}|{b}"))))
        } else {
            labels_from((0..n).map(|a| format!("u{a}")))
        };
        let spans = (0..n).map(|a| utility.span(a, y_min, y_max)).collect();
        Ok(Self {
            utility,
            swap,
            y_min,
            y_max,
            labels,
            spans,
        })
    }

    pub fn utility(&self) -> &U {
        &self.utility
    }

    /// `E_p[u(a, ·)]` for every action, exact per bin.
    pub fn expected_utilities(&self, x: &Features, p: &PiecewiseDensity) -> Vec<f64> {
        let avg = self.bin_averages(x, p);
        avg.iter()
            .map(|row| csum(row.iter().zip(p.masses()).map(|(u, m)| u * m)))
            .collect()
    }

    /// Bayes action of the forecast, ties to the smallest index.
    pub fn bayes_action(&self, x: &Features, p: &PiecewiseDensity) -> usize {
        argmax(&self.expected_utilities(x, p))
    }

    fn bin_averages(&self, x: &Features, p: &PiecewiseDensity) -> Vec<Vec<f64>> {
        let e = p.edges();
        (0..self.utility.actions())
            .map(|a| {
                (0..p.bins())
                    .map(|b| self.utility.bin_average(a, e[b], e[b + 1], x))
                    .collect()
            })
            .collect()
    }

    fn gate_temperature(&self) -> f64 {
        self.spans.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE)
    }

    fn check_support(&self, p: &PiecewiseDensity) -> Result<(), PayoffError> {
        if p.y_min() < self.y_min - 1e-12 || p.y_max() > self.y_max + 1e-12 {
            return Err(PayoffError::Invalid(format!(
                "forecast support [{}, {}] exceeds the payoff's [{}, {}]",
                p.y_min(),
                p.y_max(),
                self.y_min,
                self.y_max
            )));
        }
        Ok(())
    }

    fn assemble(&self, gains: &[f64], gate: &[f64]) -> Vec<f64> {
        if !self.swap {
            return gains.to_vec();
        }
        let n = gains.len();
        let mut values = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                values[a * n + b] = gate[b] * gains[a];
            }
        }
        values
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax(v: &[f64], temp: f64) -> Vec<f64> {
    let top = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| ((x - top) / temp).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

impl<U: Utility> PayoffSpec for DecisionPayoff<U> {
    fn name(&self) -> &str {
        if self.swap {
            "swap_decision"
        } else {
            "decision"
        }
    }

    fn labels(&self) -> &Labels {
        &self.labels
    }

    fn bound(&self) -> f64 {
        csum(self.spans.iter().map(|s| s * s))
    }

    fn evaluate(&self, x: &Features, p: &PiecewiseDensity, y: f64) -> Result<PayoffVector, PayoffError> {
        self.check_support(p)?;
        p.cdf(y)?;
        let expected = self.expected_utilities(x, p);
        let gains: Vec<f64> = expected
            .iter()
            .enumerate()
            .map(|(a, e)| e - self.utility.utility(a, y, x))
            .collect();
        let mut gate = vec![0.0; gains.len()];
        gate[argmax(&expected)] = 1.0;
        Ok(PayoffVector::new(
            self.labels.clone(),
            self.assemble(&gains, &gate),
            self.bound(),
        )?)
    }
}

impl<U: Utility> DensityPayoff for DecisionPayoff<U> {
    fn smoothable(&self) -> bool {
        true
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
        self.check_support(template)?;
        let n = self.utility.actions();
        let avg = self.bin_averages(x, template);
        let realized: Vec<Vec<f64>> = ys
            .iter()
            .map(|y| (0..n).map(|a| self.utility.utility(a, *y, x)).collect())
            .collect();
        if !self.swap {
            let weights = (0..template.bins())
                .map(|b| csum((0..n).map(|a| dir[a] * avg[a][b])))
                .collect();
            let targets = realized
                .iter()
                .map(|u| csum(u.iter().zip(dir).map(|(u, c)| u * c)))
                .collect();
            return Ok(Box::new(LinearObjective { weights, targets }));
        }
        Ok(Box::new(SwapObjective {
            n,
            avg,
            realized,
            dir: dir.to_vec(),
            temp: tau * self.gate_temperature(),
        }))
    }

    fn evaluate_smoothed(
        &self,
        x: &Features,
        p: &PiecewiseDensity,
        y: f64,
        tau: f64,
    ) -> Result<PayoffVector, PayoffError> {
        self.check_support(p)?;
        p.cdf(y)?;
        let expected = self.expected_utilities(x, p);
        let gains: Vec<f64> = expected
            .iter()
            .enumerate()
            .map(|(a, e)| e - self.utility.utility(a, y, x))
            .collect();
        let gate = softmax(&expected, tau * self.gate_temperature());
        Ok(PayoffVector::new(
            self.labels.clone(),
            self.assemble(&gains, &gate),
            self.bound(),
        )?)
    }
}

struct SwapObjective {
    n: usize,
    /// Bin averages of each action's utility.
    avg: Vec<Vec<f64>>,
    realized: Vec<Vec<f64>>,
    dir: Vec<f64>,
    temp: f64,
}

impl SwapObjective {
    fn expected(&self, p: &PiecewiseDensity) -> Vec<f64> {
        self.avg
            .iter()
            .map(|row| csum(row.iter().zip(p.masses()).map(|(u, m)| u * m)))
            .collect()
    }

    /// `h_b = Σ_a c_{a,b} (E u_a - u_a(y_k))` for every gate action `b`.
    fn rows(&self, expected: &[f64], k: usize) -> Vec<f64> {
        (0..self.n)
            .map(|b| csum((0..self.n).map(|a| self.dir[a * self.n + b] * (expected[a] - self.realized[k][a]))))
            .collect()
    }
}

impl DirectionalObjective for SwapObjective {
    fn outcomes(&self) -> usize {
        self.realized.len()
    }

    fn value(&self, p: &PiecewiseDensity, k: usize) -> f64 {
        let e = self.expected(p);
        self.rows(&e, k)[argmax(&e)]
    }

    fn smoothed(&self, p: &PiecewiseDensity, k: usize, grad: &mut [f64]) -> f64 {
        let e = self.expected(p);
        let h = self.rows(&e, k);
        let gate = if self.n == 2 {
            let g = logistic((e[1] - e[0]) / self.temp);
            vec![1.0 - g, g]
        } else {
            softmax(&e, self.temp)
        };
        let value = csum(gate.iter().zip(&h).map(|(g, h)| g * h));
        // d/dE_a: Σ_b g_b c_{a,b} from the rows, plus g_a (h_a - value)/temp from the gate.
        for a in 0..self.n {
            let through_rows = csum((0..self.n).map(|b| gate[b] * self.dir[a * self.n + b]));
            let through_gate = gate[a] * (h[a] - value) / self.temp;
            let coef = through_rows + through_gate;
            for (g, u) in grad.iter_mut().zip(&self.avg[a]) {
                *g += coef * u;
            }
        }
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::dot;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (z, w) = gauss_legendre(32);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        for k in 0..20 {
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            let got: f64 = z.iter().zip(&w).map(|(z, w)| w * z.powi(k)).sum();
            assert!((got - exact).abs() < 1e-13, "k={k}");
        }
        let (z3, w3) = gauss_legendre(3);
        assert!((z3[2] - (0.6f64).sqrt()).abs() < 1e-15);
        assert!((w3[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn squared_error_example() {
        let u = SquaredErrorUtility { points: vec![0.5] };
        let d = DecisionPayoff::new(u, false, 0.0, 1.0).unwrap();
        let p = PiecewiseDensity::uniform(0.0, 1.0, 10).unwrap();
        let v = d.evaluate(&Features::default(), &p, 0.5).unwrap();
        assert!((v.values()[0] + 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn exact_bin_averages_match_quadrature() {
        let x = Features::default();
        let sq = SquaredErrorUtility { points: vec![0.2, 0.9] };
        let pb = PinballUtility {
            points: vec![0.3, 0.75],
            lambda: 0.5,
        };
        for (lo, hi) in [(0.0, 0.1), (0.25, 0.5), (0.7, 1.0)] {
            for a in 0..2 {
                struct Quad<'a, U>(&'a U);
                impl<U: Utility> Utility for Quad<'_, U> {
                    fn actions(&self) -> usize {
                        self.0.actions()
                    }
                    fn utility(&self, a: usize, y: f64, x: &Features) -> f64 {
                        self.0.utility(a, y, x)
                    }
                    fn span(&self, a: usize, lo: f64, hi: f64) -> f64 {
                        self.0.span(a, lo, hi)
                    }
                }
                let q = Quad(&sq).bin_average(a, lo, hi, &x);
                assert!((q - sq.bin_average(a, lo, hi, &x)).abs() < 1e-14);
                // Pinball has a kink, so only bins without the kink integrate exactly.
                let q = Quad(&pb).bin_average(a, lo, hi, &x);
                let exact = pb.bin_average(a, lo, hi, &x);
                let kinked = pb.points[a] > lo && pb.points[a] < hi;
                assert!((q - exact).abs() < if kinked { 1e-3 } else { 1e-14 });
            }
        }
    }

    #[test]
    fn swap_gating_selects_bayes_row() {
        let u = SquaredErrorUtility { points: vec![0.1, 0.9] };
        let d = DecisionPayoff::new(u, true, 0.0, 1.0).unwrap();
        let mut w = vec![0.0; 10];
        w[9] = 1.0;
        let p = PiecewiseDensity::from_weights(crate::core_types::uniform_edges(0.0, 1.0, 10), &w).unwrap();
        let x = Features::default();
        assert_eq!(d.bayes_action(&x, &p), 1);
        let v = d.evaluate(&x, &p, 0.95).unwrap();
        // Coordinates are ordered (a, b) with b the gate action.
        assert_eq!(v.values()[0], 0.0);
        assert_eq!(v.values()[2], 0.0);
        assert!(v.values()[1] != 0.0 && v.values()[3] != 0.0);
    }

    #[test]
    fn objectives_match_direct_evaluation() {
        let x = Features::default();
        let p = PiecewiseDensity::new(crate::core_types::uniform_edges(0.0, 1.0, 4), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let ys = [0.0, 0.33, 0.9];
        for swap in [false, true] {
            let u = PinballUtility {
                points: vec![0.25, 0.5, 0.8],
                lambda: 0.5,
            };
            let d = DecisionPayoff::new(u, swap, 0.0, 1.0).unwrap();
            let dir: Vec<f64> = (0..d.labels().len()).map(|i| (i as f64 * 0.77).sin()).collect();
            let obj = d.objective(&x, &p, &ys, &dir, 0.01).unwrap();
            for (k, y) in ys.iter().enumerate() {
                let direct = dot(d.evaluate(&x, &p, *y).unwrap().values(), &dir);
                assert!((obj.value(&p, k) - direct).abs() < 1e-12);
            }
        }
    }
}
