//! Gradient-based approximate half-space oracle with worst-case certificates.
//!
//! The forecast is a softmax-parameterized histogram `p_θ`. Nature is
//! restricted to a finite family of point outcomes, so the inner
//! maximization over mixtures is attained at a single outcome and the
//! certificate is an exact maximum over that family. The outer minimization
//! runs Adam on a smoothed surrogate: indicator-type payoff terms use
//! logistic steps and the maximum over outcomes is a log-sum-exp, both at
//! temperature `τ`. The returned forecast is the iterate with the smallest
//! unsmoothed worst case.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::blackwell::{Oracle, OracleError, Query};
use crate::core_types::{dot, norm_sq, uniform_edges, Certificate, Features, PiecewiseDensity};
use crate::payoffs::{DensityPayoff, DirectionalObjective, PayoffError, PayoffSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrcaConfig {
    /// Forecast bins.
    pub bins: usize,
    /// Cells of the outcome grid; Nature picks among their interior edges.
    pub adversary_grid: usize,
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
    /// Stop once the true worst case drops below this.
    pub early_stop: f64,
}

impl Default for OrcaConfig {
    fn default() -> Self {
        Self {
            bins: 50,
            adversary_grid: 50,
            steps: 400,
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            tau: 0.01,
            early_stop: -1e-6,
        }
    }
}

impl OrcaConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: String| Err(OracleError::Payoff(PayoffError::Invalid(m)));
        if self.bins == 0 || self.adversary_grid < 2 {
            return bad("bins must be positive and adversary_grid at least 2".into());
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.tau > 0.0) || !(self.lr > 0.0) {
            return bad(format!("tau {} and lr {} must be positive", self.tau, self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment decays must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Point outcomes Nature may choose from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Adversary {
    pub points: Vec<f64>,
    /// Diameter of each component's support (zero for point outcomes).
    pub diameter: f64,
    /// Every outcome in the support lies within this distance of a point.
    pub radius: f64,
}

impl Adversary {
    /// Centers of `k` equal cells of `[y_min, y_max]`.
    pub fn grid(y_min: f64, y_max: f64, k: usize) -> Self {
        let h = (y_max - y_min) / k as f64;
        Self {
            points: (0..k).map(|i| y_min + (i as f64 + 0.5) * h).collect(),
            diameter: 0.0,
            radius: 0.5 * h,
        }
    }

    /// The `k - 1` interior edges of `k` equal cells of `[y_min, y_max]`.
    pub fn edges(y_min: f64, y_max: f64, k: usize) -> Self {
        let h = (y_max - y_min) / k as f64;
        Self {
            points: (1..k).map(|i| y_min + i as f64 * h).collect(),
            diameter: 0.0,
            radius: h,
        }
    }

    /// A finite outcome space covered exactly.
    pub fn finite(points: Vec<f64>) -> Self {
        Self {
            points,
            diameter: 0.0,
            radius: 0.0,
        }
    }
}

pub fn softmax(theta: &[f64]) -> Vec<f64> {
    let m = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = theta.iter().map(|t| (t - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Worst inner product of the forecast's payoff with `dir` over `ys`, and the
/// first outcome attaining it.
pub fn inner_max<F>(
    spec: &dyn PayoffSpec<F>,
    x: &Features,
    forecast: &F,
    dir: &[f64],
    ys: &[f64],
) -> Result<(f64, usize), PayoffError> {
    let mut best = (f64::NEG_INFINITY, 0);
    for (k, y) in ys.iter().enumerate() {
        let v = dot(dir, spec.evaluate(x, forecast, *y)?.values());
        if v > best.0 {
            best = (v, k);
        }
    }
    Ok(best)
}

/// The smoothed outer objective as a function of the logits.
pub struct Surrogate<'a> {
    objective: Box<dyn DirectionalObjective + 'a>,
    template: PiecewiseDensity,
    scale: f64,
    tau: f64,
    scratch: Vec<Vec<f64>>,
}

impl<'a> Surrogate<'a> {
    pub fn new(
        spec: &'a dyn DensityPayoff,
        x: &'a Features,
        template: &PiecewiseDensity,
        dir: &[f64],
        ys: &[f64],
        tau: f64,
    ) -> Result<Self, PayoffError> {
        let objective = spec.objective(x, template, ys, dir, tau)?;
        let norm = norm_sq(dir).sqrt();
        Ok(Self {
            objective,
            template: template.clone(),
            scale: if norm > 0.0 { 1.0 / norm } else { 1.0 },
            tau,
            scratch: vec![vec![0.0; template.bins()]; ys.len()],
        })
    }

    pub fn forecast(&self, theta: &[f64]) -> PiecewiseDensity {
        self.template
            .with_masses(softmax(theta))
            .expect("softmax masses are valid")
    }

    /// Unsmoothed worst case of `p_θ` over the outcomes.
    pub fn true_max(&self, p: &PiecewiseDensity) -> f64 {
        (0..self.objective.outcomes())
            .map(|k| self.objective.value(p, k))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `τ log Σ_k exp(s_k / τ)` with `s_k` the smoothed inner products scaled
    /// by `1/‖dir‖`; writes the gradient with respect to `θ` into `grad`.
    pub fn value_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let m = softmax(theta);
        let p = self.template.with_masses(m.clone()).expect("softmax masses are valid");
        let n = self.objective.outcomes();
        let mut s = Vec::with_capacity(n);
        for k in 0..n {
            let g = &mut self.scratch[k];
            g.iter_mut().for_each(|v| *v = 0.0);
            s.push(self.scale * self.objective.smoothed(&p, k, g));
        }
        let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = s.iter().map(|v| ((v - top) / self.tau).exp()).collect();
        let z: f64 = w.iter().sum();
        let value = top + self.tau * z.ln();
        // Gradient with respect to the masses, then through the softmax.
        let mut gm = vec![0.0; m.len()];
        for (k, wk) in w.iter().enumerate() {
            let a = wk / z * self.scale;
            for (gi, si) in gm.iter_mut().zip(&self.scratch[k]) {
                *gi += a * si;
            }
        }
        let mean = dot(&gm, &m);
        for ((gi, mi), gmi) in grad.iter_mut().zip(&m).zip(&gm) {
            *gi = mi * (gmi - mean);
        }
        value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrcaTrace {
    pub iterations: usize,
    pub initial_bound: f64,
    pub best_bound: f64,
    pub lr_halvings: usize,
    pub early_stopped: bool,
}

pub struct Solution {
    pub theta: Vec<f64>,
    pub forecast: PiecewiseDensity,
    pub certificate: Certificate,
    pub trace: OrcaTrace,
}

/// Minimizes the worst inner product with `dir` over forecasts on `edges`,
/// starting from logits `theta0`.
pub fn orca_solve(
    spec: &dyn DensityPayoff,
    x: &Features,
    dir: &[f64],
    edges: &[f64],
    adversary: &Adversary,
    config: &OrcaConfig,
    theta0: &[f64],
) -> Result<Solution, OracleError> {
    config.validate()?;
    let bins = edges.len() - 1;
    if theta0.len() != bins {
        return Err(PayoffError::Invalid(format!("{} logits for {bins} bins", theta0.len())).into());
    }
    let template = PiecewiseDensity::new(edges.to_vec(), vec![1.0 / bins as f64; bins])?;
    let mut theta = theta0.to_vec();
    let certify = |p: &PiecewiseDensity| inner_max(spec, x, p, dir, &adversary.points).map(|v| v.0);
    if norm_sq(dir) == 0.0 {
        let p = template.with_masses(softmax(&theta))?;
        let b = certify(&p)?;
        return Ok(Solution {
            theta,
            forecast: p,
            certificate: Certificate::approximate(b),
            trace: OrcaTrace {
                iterations: 0,
                initial_bound: b,
                best_bound: b,
                lr_halvings: 0,
                early_stopped: true,
            },
        });
    }
    let mut sur = Surrogate::new(spec, x, &template, dir, &adversary.points, config.tau)?;
    let initial = sur.true_max(&sur.forecast(&theta));
    let mut best = (initial, theta.clone());
    let mut trace = OrcaTrace {
        iterations: 0,
        initial_bound: initial,
        best_bound: initial,
        lr_halvings: 0,
        early_stopped: initial < config.early_stop,
    };
    let mut lr = config.lr;
    let mut m1 = vec![0.0; bins];
    let mut m2 = vec![0.0; bins];
    let mut grad = vec![0.0; bins];
    let mut adam_t = 0;
    while !trace.early_stopped && trace.iterations < config.steps {
        trace.iterations += 1;
        sur.value_grad(&theta, &mut grad);
        if grad.iter().any(|g| !g.is_finite()) {
            if trace.lr_halvings == 5 {
                break;
            }
            trace.lr_halvings += 1;
            lr *= 0.5;
            theta.clone_from(&best.1);
            m1.iter_mut().for_each(|v| *v = 0.0);
            m2.iter_mut().for_each(|v| *v = 0.0);
            adam_t = 0;
            continue;
        }
        adam_t += 1;
        let c1 = 1.0 - config.beta1.powi(adam_t);
        let c2 = 1.0 - config.beta2.powi(adam_t);
        for i in 0..bins {
            m1[i] = config.beta1 * m1[i] + (1.0 - config.beta1) * grad[i];
            m2[i] = config.beta2 * m2[i] + (1.0 - config.beta2) * grad[i] * grad[i];
            theta[i] -= lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + 1e-12);
        }
        let v = sur.true_max(&sur.forecast(&theta));
        if v < best.0 {
            best = (v, theta.clone());
        }
        trace.early_stopped = best.0 < config.early_stop;
    }
    let forecast = sur.forecast(&best.1);
    let bound = certify(&forecast)?;
    trace.best_bound = bound;
    Ok(Solution {
        theta: best.1,
        forecast,
        certificate: Certificate::approximate(bound),
        trace,
    })
}

/// Where each solve starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmStart {
    /// The previous step's forecast.
    Previous,
    /// The first expert forecast in the features (previous forecast if the
    /// expert lives on other bins).
    Expert,
}

/// ORCA as an oracle for any smoothable density payoff.
pub struct Orca {
    spec: Arc<dyn DensityPayoff>,
    config: OrcaConfig,
    edges: Vec<f64>,
    adversary: Adversary,
    warm: WarmStart,
    theta: Vec<f64>,
    last: Option<OrcaTrace>,
}

impl Orca {
    pub fn new(spec: Arc<dyn DensityPayoff>, y_min: f64, y_max: f64, config: OrcaConfig) -> Result<Self, OracleError> {
        config.validate()?;
        if !spec.smoothable() {
            return Err(PayoffError::NotSmoothable(spec.name().to_string()).into());
        }
        let edges = uniform_edges(y_min, y_max, config.bins);
        let probe = PiecewiseDensity::uniform(y_min, y_max, config.bins)?;
        let adversary = match spec.outcome_set(&probe) {
            Some(points) => Adversary::finite(points),
            None => Adversary::edges(y_min, y_max, config.adversary_grid),
        };
        Ok(Self {
            theta: vec![0.0; config.bins],
            spec,
            config,
            edges,
            adversary,
            warm: WarmStart::Previous,
            last: None,
        })
    }

    pub fn with_warm_start(mut self, warm: WarmStart) -> Self {
        self.warm = warm;
        self
    }

    pub fn adversary(&self) -> &Adversary {
        &self.adversary
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn last_trace(&self) -> Option<&OrcaTrace> {
        self.last.as_ref()
    }
}

fn logits(p: &PiecewiseDensity) -> Vec<f64> {
    p.masses().iter().map(|m| m.max(1e-12).ln()).collect()
}

impl Oracle<PiecewiseDensity> for Orca {
    fn name(&self) -> &str {
        "orca"
    }

    fn respond(
        &mut self,
        query: &Query<'_>,
        _rng: &mut dyn RngCore,
    ) -> Result<(PiecewiseDensity, Certificate), OracleError> {
        if self.warm == WarmStart::Expert {
            if let Some(e) = query.features.experts.first() {
                if e.edges() == self.edges.as_slice() {
                    self.theta = logits(e);
                }
            }
        }
        let sol = orca_solve(
            self.spec.as_ref(),
            query.features,
            query.direction,
            &self.edges,
            &self.adversary,
            &self.config,
            &self.theta,
        )?;
        self.theta = sol.theta;
        self.last = Some(sol.trace);
        Ok((sol.forecast, sol.certificate))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapAudit {
    /// Worst case over the dense grid together with the adversary points.
    pub a_star: f64,
    /// Worst case over the adversary points.
    pub a_star_q: f64,
    pub lipschitz: f64,
    /// `(d + ε) L̂ ‖dir‖`.
    pub bound: f64,
}

impl GapAudit {
    pub fn holds(&self, slack: f64) -> bool {
        let gap = self.a_star - self.a_star_q;
        gap >= 0.0 && gap <= self.bound + slack
    }
}

/// Compares the worst case over the adversary family with the worst case
/// over a dense outcome grid, using the smoothed payoff throughout.
pub fn approximation_gap_audit(
    spec: &dyn DensityPayoff,
    x: &Features,
    p: &PiecewiseDensity,
    dir: &[f64],
    adversary: &Adversary,
    dense: usize,
    tau: f64,
) -> Result<GapAudit, PayoffError> {
    let (lo, hi) = (p.y_min(), p.y_max());
    let mut ys: Vec<f64> = (0..=dense).map(|i| lo + (hi - lo) * i as f64 / dense as f64).collect();
    ys.extend(&adversary.points);
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut prev: Option<(f64, Vec<f64>)> = None;
    let mut a_star = f64::NEG_INFINITY;
    let mut lipschitz = 0.0f64;
    for y in &ys {
        let v = spec.evaluate_smoothed(x, p, *y, tau)?;
        a_star = a_star.max(dot(dir, v.values()));
        if let Some((py, pv)) = &prev {
            let d: Vec<f64> = v.values().iter().zip(pv).map(|(a, b)| a - b).collect();
            lipschitz = lipschitz.max(norm_sq(&d).sqrt() / (y - py));
        }
        prev = Some((*y, v.values().to_vec()));
    }
    let mut a_star_q = f64::NEG_INFINITY;
    for y in &adversary.points {
        a_star_q = a_star_q.max(dot(dir, spec.evaluate_smoothed(x, p, *y, tau)?.values()));
    }
    Ok(GapAudit {
        a_star,
        a_star_q,
        lipschitz,
        bound: (adversary.diameter + adversary.radius) * lipschitz * norm_sq(dir).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoffs::QuantilePayoff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inner_max_picks_first_largest() {
        let q = QuantilePayoff::new(vec![0.5]).unwrap();
        let p = PiecewiseDensity::uniform(0.0, 1.0, 4).unwrap();
        let x = Features::default();
        // Coordinate is 0.5 below the median, -0.5 above.
        let (v, k) = inner_max(&q, &x, &p, &[1.0], &[0.9, 0.1, 0.2]).unwrap();
        assert_eq!((v, k), (0.5, 1));
    }

    #[test]
    fn zero_direction_stops_immediately() {
        let q = QuantilePayoff::standard();
        let cfg = OrcaConfig::default();
        let edges = uniform_edges(0.0, 1.0, cfg.bins);
        let adv = Adversary::grid(0.0, 1.0, cfg.adversary_grid);
        let sol = orca_solve(&q, &Features::default(), &[0.0; 99], &edges, &adv, &cfg, &[0.0; 50]).unwrap();
        assert_eq!(sol.certificate.bound, 0.0);
        assert_eq!(sol.trace.iterations, 0);
    }

    fn small() -> (OrcaConfig, Vec<f64>, Adversary) {
        let cfg = OrcaConfig {
            bins: 10,
            adversary_grid: 10,
            ..OrcaConfig::default()
        };
        (cfg, uniform_edges(0.0, 1.0, 10), Adversary::grid(0.0, 1.0, 10))
    }

    #[test]
    fn positive_quantile_average_shifts_mass_down() {
        // Outcomes fell below the 0.3-quantile too often: the fix is a forecast
        // with more than 0.3 of its mass below every grid outcome.
        let q = QuantilePayoff::new(vec![0.3, 0.5, 0.7]).unwrap();
        let (cfg, edges, adv) = small();
        let sol = orca_solve(
            &q,
            &Features::default(),
            &[0.1, 0.0, 0.0],
            &edges,
            &adv,
            &cfg,
            &[0.0; 10],
        )
        .unwrap();
        assert!(sol.certificate.bound <= 0.0);
        assert!(sol.certificate.bound <= sol.trace.initial_bound);
        assert!(sol.forecast.mean() < 0.5);
    }

    #[test]
    fn matches_exhaustive_bump_search() {
        let q = QuantilePayoff::new(vec![0.25, 0.5, 0.75]).unwrap();
        let (cfg, edges, adv) = small();
        let x = Features::default();
        let dir = [0.1, 0.1, 0.1];
        let sol = orca_solve(&q, &x, &dir, &edges, &adv, &cfg, &[0.0; 10]).unwrap();
        let mut best = f64::INFINITY;
        for c in 0..100 {
            for w in 1..=10 {
                let (mu, sd) = (c as f64 / 99.0, w as f64 / 40.0);
                let wts: Vec<f64> = (0..10)
                    .map(|i| (-(((i as f64 + 0.5) / 10.0 - mu) / sd).powi(2) / 2.0).exp() + 1e-300)
                    .collect();
                let p = PiecewiseDensity::from_weights(edges.clone(), &wts).unwrap();
                best = best.min(inner_max(&q, &x, &p, &dir, &adv.points).unwrap().0);
            }
        }
        // The lowest outcome sees F ≤ 1/2 under any forecast, so 0.05 is optimal.
        assert!((best - 0.05).abs() < 1e-12);
        assert!(sol.certificate.bound <= best + 1e-12);
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let q = QuantilePayoff::new(vec![0.1, 0.4, 0.6, 0.9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let template = PiecewiseDensity::uniform(0.0, 1.0, 8).unwrap();
        let adv = Adversary::grid(0.0, 1.0, 8);
        let x = Features::default();
        for _ in 0..20 {
            let dir: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            let theta: Vec<f64> = (0..8).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut s = Surrogate::new(&q, &x, &template, &dir, &adv.points, 0.05).unwrap();
            let mut g = vec![0.0; 8];
            s.value_grad(&theta, &mut g);
            let mut fd = vec![0.0; 8];
            let mut tmp = vec![0.0; 8];
            for i in 0..8 {
                let mut tp = theta.clone();
                tp[i] += 1e-5;
                let up = s.value_grad(&tp, &mut tmp);
                tp[i] -= 2e-5;
                let dn = s.value_grad(&tp, &mut tmp);
                fd[i] = (up - dn) / 2e-5;
            }
            let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = norm_sq(&g).sqrt().max(norm_sq(&fd).sqrt()).max(1e-8);
            assert!(err / scale < 1e-4, "relative error {}", err / scale);
        }
    }

    #[test]
    fn dense_adversary_has_no_gap() {
        let q = QuantilePayoff::new(vec![0.3, 0.7]).unwrap();
        let p = PiecewiseDensity::from_weights(uniform_edges(0.0, 1.0, 5), &[1.0, 2.0, 3.0, 2.0, 1.0]).unwrap();
        let x = Features::default();
        let pts: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let adv = Adversary::finite(pts);
        let a = approximation_gap_audit(&q, &x, &p, &[1.0, -0.5], &adv, 100, 0.01).unwrap();
        assert_eq!(a.a_star, a.a_star_q);
        assert!(a.holds(0.0));
    }
}
