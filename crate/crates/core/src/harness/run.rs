//! Experiment orchestration and output files.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::RngCore;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Mode, NatureKind, OracleKind};
use super::data::{generate, load_series, outcome_range};
use super::experts::{expert_forecast, ExpertKind};
use super::nature::{CoverageNature, GreedyNature, QceNature};
use super::HarnessError;
use crate::blackwell::{Game, GameError, Nature, Oracle, OracleError, Query};
use crate::core_types::{uniform_edges, Certificate, Features, PiecewiseDensity, StepRecord};
use crate::metrics::{
    decision_loss, markov_coverage_pairs, optimal_commitment, qce_from_pits, smape, MarkovCoverage, RunReport, TableRow,
};
use crate::oracles::{
    AciForecast, AciMode, AciOracle, AciPayoff, GridForecast, GridKind, GridOracle, GridPayoff, QuantileStepOracle,
    Triangulation,
};
use crate::orca::{inner_max, Adversary, Orca};
use crate::payoffs::{default_levels, PayoffSpec, QuantilePayoff};
use crate::recalibration::{regret_report, Recalibrator, RegretReport};

/// Schema tag written into every output file.
pub const SCHEMA: &str = "cal-report/1";

/// Absolute slack on the per-step `B/t` check.
pub const BUDGET_TOL: f64 = 1e-12;

/// One line of `steps.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRow {
    pub t: usize,
    pub outcome: f64,
    pub forecast_mean: f64,
    pub payoff_norm_sq: f64,
    pub certificate: f64,
    /// Empty for forecasts without a PIT.
    pub qce_so_far: Option<f64>,
}

/// Approachability bookkeeping of the played game.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameSummary {
    pub forecaster: String,
    pub payoff: String,
    pub steps: usize,
    pub bound: f64,
    pub final_norm_sq: f64,
    /// Steps where the squared norm exceeded `B/t`.
    pub budget_violations: usize,
    /// Steps where the realized directed inner product exceeded the certificate.
    pub certificate_violations: usize,
    pub max_certificate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionSummary {
    pub lambda: f64,
    pub days: usize,
    pub expert_daily_loss: Vec<f64>,
    pub recalibrated_daily_loss: Vec<f64>,
    pub expert_mean: f64,
    pub recalibrated_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema: String,
    pub config: ExperimentConfig,
    pub outcome_range: (f64, f64),
    pub game: GameSummary,
    /// Forecaster comparison with the QCE and SMAPE columns.
    pub table: Vec<TableRow>,
    pub run: Option<RunReport>,
    pub regret: Vec<RegretReport>,
    pub markov: Vec<MarkovCoverage>,
    /// Empirical coverage of ACI upper bounds.
    pub coverage: Option<f64>,
    pub decision: Option<DecisionSummary>,
}

pub struct RunOutput {
    pub report: Report,
    pub steps: Vec<StepRow>,
}

impl RunOutput {
    pub fn steps_csv(&self) -> Result<String, HarnessError> {
        let mut out = format!("# schema: {SCHEMA}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            for r in &self.steps {
                w.serialize(r).map_err(|e| HarnessError::Data(e.to_string()))?;
            }
            w.flush()?;
        }
        Ok(String::from_utf8(out).expect("csv output is utf-8"))
    }

    pub fn report_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.report).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `report.json`, `steps.csv` and, when there is a table,
    /// `table.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.report_json())?;
        std::fs::write(dir.join("steps.csv"), self.steps_csv()?)?;
        if !self.report.table.is_empty() {
            let mut buf = format!("# schema: {SCHEMA}\n").into_bytes();
            crate::metrics::write_table(&self.report.table, &mut buf).map_err(|e| HarnessError::Data(e.to_string()))?;
            std::fs::write(dir.join("table.csv"), buf)?;
        }
        Ok(())
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    match cfg.mode {
        Mode::Adversarial => run_adversarial(cfg),
        Mode::Recalibrate | Mode::Decision => run_series(cfg),
    }
}

/// Short hex digest of an average payoff, attached to step failures.
pub fn state_digest(avg: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in avg {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize()[..8].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn step_error<F: Clone>(game: &Game<F>, e: GameError) -> HarnessError {
    HarnessError::Step {
        t: game.t() + 1,
        digest: state_digest(game.state().avg().values()),
        source: e,
    }
}

/// Running QCE of a PIT stream.
struct RunningQce {
    levels: Vec<f64>,
    counts: Vec<usize>,
    t: usize,
}

impl RunningQce {
    fn new() -> Self {
        let levels = default_levels();
        Self {
            counts: vec![0; levels.len()],
            levels,
            t: 0,
        }
    }

    fn push(&mut self, u: f64) -> f64 {
        self.t += 1;
        let t = self.t as f64;
        let mut s = 0.0;
        for (c, q) in self.counts.iter_mut().zip(&self.levels) {
            if u <= *q {
                *c += 1;
            }
            let f = *c as f64 / t;
            s += (f - q) * (f - q);
        }
        s
    }
}

/// Plays an expert's forecast as is; the certificate is the worst inner
/// product over the adversary grid.
pub struct ExpertOracle {
    spec: Arc<dyn PayoffSpec>,
    points: Vec<f64>,
}

impl ExpertOracle {
    pub fn new(spec: Arc<dyn PayoffSpec>, points: Vec<f64>) -> Self {
        Self { spec, points }
    }
}

impl Oracle<PiecewiseDensity> for ExpertOracle {
    fn name(&self) -> &str {
        "expert"
    }

    fn respond(
        &mut self,
        q: &Query<'_>,
        _rng: &mut dyn RngCore,
    ) -> Result<(PiecewiseDensity, Certificate), OracleError> {
        let p = q
            .features
            .experts
            .first()
            .cloned()
            .ok_or_else(|| OracleError::Contract("no expert forecast in the features".into()))?;
        let (b, _) = inner_max(self.spec.as_ref(), q.features, &p, q.direction, &self.points)?;
        Ok((p, Certificate::approximate(b)))
    }
}

type MeanHook<F> = Box<dyn Fn(&F, &Features) -> f64>;
type PitHook<F> = Box<dyn Fn(&F, &Features, f64) -> Option<f64>>;

/// Per-forecast hooks for the step log.
struct Hooks<F> {
    mean: MeanHook<F>,
    pit: PitHook<F>,
}

struct Played<F> {
    game: Game<F>,
    steps: Vec<StepRow>,
    summary: GameSummary,
}

#[allow(clippy::too_many_arguments)]
fn play<F: Clone>(
    cfg: &ExperimentConfig,
    spec: Arc<dyn PayoffSpec<F>>,
    oracle: &mut dyn Oracle<F>,
    nature: &mut dyn Nature<F>,
    edges: &[f64],
    hooks: Hooks<F>,
) -> Result<Played<F>, HarnessError> {
    let mut game = Game::new(spec.clone(), cfg.seed);
    let expert = cfg.experts[0];
    let mut outcomes: Vec<f64> = Vec::with_capacity(cfg.horizon);
    let mut steps = Vec::with_capacity(cfg.horizon);
    let mut qce = RunningQce::new();
    let mut violations = (0usize, 0usize);
    let mut max_cert = f64::NEG_INFINITY;
    for _ in 0..cfg.horizon {
        let lags = outcomes[outcomes.len().saturating_sub(cfg.lags)..].to_vec();
        let x = Features {
            lags,
            experts: vec![expert_forecast(expert, &outcomes, edges)],
        };
        let bound = spec.bound();
        let rec = match game.play_against(x, oracle, nature) {
            Ok(r) => r.clone(),
            Err(e) => return Err(step_error(&game, e)),
        };
        let t = rec.t;
        let n = *game.trajectory().last().expect("one step played");
        if n > bound / t as f64 + BUDGET_TOL {
            violations.0 += 1;
        }
        if rec.directed_inner > rec.certificate.bound + 1e-9 {
            violations.1 += 1;
        }
        max_cert = max_cert.max(rec.certificate.bound);
        outcomes.push(rec.outcome);
        steps.push(StepRow {
            t,
            outcome: rec.outcome,
            forecast_mean: (hooks.mean)(&rec.forecast, &rec.features),
            payoff_norm_sq: rec.payoff.norm_sq(),
            certificate: rec.certificate.bound,
            qce_so_far: (hooks.pit)(&rec.forecast, &rec.features, rec.outcome).map(|u| qce.push(u)),
        });
    }
    let summary = GameSummary {
        forecaster: oracle.name().to_string(),
        payoff: spec.name().to_string(),
        steps: game.t(),
        bound: spec.bound(),
        final_norm_sq: game.trajectory().last().copied().unwrap_or(0.0),
        budget_violations: violations.0,
        certificate_violations: violations.1,
        max_certificate: max_cert,
    };
    Ok(Played { game, steps, summary })
}

fn density_hooks() -> Hooks<PiecewiseDensity> {
    Hooks {
        mean: Box::new(|p, _| p.mean()),
        pit: Box::new(|p, _, y| Some(p.cdf_clamped(y))),
    }
}

fn empty_report(cfg: &ExperimentConfig, range: (f64, f64), game: GameSummary) -> Report {
    Report {
        schema: SCHEMA.into(),
        config: cfg.clone(),
        outcome_range: range,
        game,
        table: Vec::new(),
        run: None,
        regret: Vec::new(),
        markov: Vec::new(),
        coverage: None,
        decision: None,
    }
}

fn markov_rows(pairs: &[(&PiecewiseDensity, f64)], y_min: f64) -> Result<Vec<MarkovCoverage>, HarnessError> {
    let v = move |y: f64| (y - y_min).max(0.0);
    [2.0, 4.0]
        .into_iter()
        .map(|r| markov_coverage_pairs(pairs, &v, r).map_err(HarnessError::from))
        .collect()
}

fn run_adversarial(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let (lo, hi) = (cfg.y_min, cfg.y_max);
    let edges = uniform_edges(lo, hi, cfg.bins);
    let k = if cfg.dense_nature {
        10 * cfg.adversary_grid
    } else {
        cfg.adversary_grid
    };
    let grid = Adversary::edges(lo, hi, k).points;
    let adversary = Adversary::edges(lo, hi, cfg.adversary_grid).points;
    let config_err = |e: String| HarnessError::Config(e);
    match cfg.oracle {
        OracleKind::Quantile | OracleKind::Orca | OracleKind::Expert => {
            let payoff = Arc::new(QuantilePayoff::standard());
            let spec: Arc<dyn PayoffSpec> = payoff.clone();
            let mut oracle: Box<dyn Oracle<PiecewiseDensity>> = match cfg.oracle {
                OracleKind::Quantile => Box::new(
                    QuantileStepOracle::new(&[(payoff.levels().to_vec(), 1.0)], lo, hi)
                        .map_err(|e| config_err(e.to_string()))?,
                ),
                OracleKind::Orca => {
                    Box::new(Orca::new(payoff.clone(), lo, hi, cfg.orca()).map_err(|e| config_err(e.to_string()))?)
                }
                _ => Box::new(ExpertOracle::new(spec.clone(), adversary)),
            };
            let mut nature: Box<dyn Nature<PiecewiseDensity>> = match cfg.nature {
                NatureKind::Greedy => Box::new(GreedyNature::new(spec.clone(), grid)),
                _ => Box::new(QceNature::new(grid, default_levels())),
            };
            let played = play(cfg, spec, oracle.as_mut(), nature.as_mut(), &edges, density_hooks())?;
            let history = played.game.history();
            let mask = played.game.spec().orthant_mask();
            let mut report = empty_report(cfg, (lo, hi), played.summary);
            report.run = Some(RunReport::from_history(history, payoff.levels(), &mask, &[], None)?);
            let pairs: Vec<_> = history.iter().map(|h| (&h.forecast, h.outcome)).collect();
            report.markov = markov_rows(&pairs, lo)?;
            Ok(RunOutput {
                report,
                steps: played.steps,
            })
        }
        OracleKind::Aci | OracleKind::AciClassic => {
            let payoff = AciPayoff::new(cfg.aci_grid, cfg.beta).map_err(|e| config_err(e.to_string()))?;
            let mode = if cfg.oracle == OracleKind::Aci {
                AciMode::Exact
            } else {
                AciMode::Classic
            };
            let mut oracle = AciOracle::new(&payoff, mode);
            let levels = payoff.grid().to_vec();
            let spec: Arc<dyn PayoffSpec<AciForecast>> = Arc::new(payoff);
            let mut nature: Box<dyn Nature<AciForecast>> = match cfg.nature {
                NatureKind::Qce => Box::new(QceNature::new(grid, default_levels())),
                NatureKind::Greedy => Box::new(GreedyNature::new(spec.clone(), grid)),
                NatureKind::Coverage => Box::new(CoverageNature::new(cfg.beta, levels, grid)),
            };
            let hooks = Hooks {
                mean: Box::new(|f: &AciForecast, _: &Features| f.quantile),
                pit: Box::new(|_: &AciForecast, x: &Features, y| x.experts.first().map(|b| b.cdf_clamped(y))),
            };
            let played = play(cfg, spec, &mut oracle, nature.as_mut(), &edges, hooks)?;
            let history = played.game.history();
            let covered = history.iter().filter(|h| h.forecast.covers(h.outcome)).count();
            let mut report = empty_report(cfg, (lo, hi), played.summary);
            report.coverage = Some(covered as f64 / history.len() as f64);
            let pairs: Vec<_> = history.iter().map(|h| (&h.features.experts[0], h.outcome)).collect();
            report.markov = markov_rows(&pairs, lo)?;
            Ok(RunOutput {
                report,
                steps: played.steps,
            })
        }
        OracleKind::MomentGrid | OracleKind::HistogramGrid => {
            let tri = if cfg.oracle == OracleKind::MomentGrid {
                Triangulation::moments(cfg.grid_ticks, lo, hi)
            } else {
                Triangulation::histogram(cfg.histogram_bins, cfg.grid_ticks, lo, hi)
            }
            .map_err(|e| config_err(e.to_string()))?;
            let tri = Arc::new(tri);
            let kind = tri.kind();
            let mut oracle = GridOracle::deterministic(tri.clone());
            let spec: Arc<dyn PayoffSpec<GridForecast>> = Arc::new(GridPayoff::new(tri));
            let mut nature = GreedyNature::new(spec.clone(), grid);
            let hooks = Hooks {
                mean: Box::new(move |f: &GridForecast, _: &Features| grid_mean(kind, &f.point)),
                pit: Box::new(|_: &GridForecast, _: &Features, _| None),
            };
            let played = play(cfg, spec, &mut oracle, &mut nature, &edges, hooks)?;
            Ok(RunOutput {
                report: empty_report(cfg, (lo, hi), played.summary),
                steps: played.steps,
            })
        }
    }
}

/// Forecast mean on the outcome scale implied by a grid point.
pub fn grid_mean(kind: GridKind, point: &[f64]) -> f64 {
    match kind {
        GridKind::Moments { y_min, y_max } => y_min + (y_max - y_min) * point[0],
        GridKind::Histogram { y_min, y_max, bins } => {
            let w = (y_max - y_min) / bins as f64;
            point
                .iter()
                .enumerate()
                .map(|(b, m)| m * (y_min + w * (b as f64 + 0.5)))
                .sum()
        }
    }
}

/// The outcome series of a recalibration or decision run, long enough for
/// `lags + horizon` steps.
pub fn series_for(cfg: &ExperimentConfig) -> Result<Vec<f64>, HarnessError> {
    let need = cfg.lags + cfg.horizon;
    let series = match &cfg.data {
        Some(path) => load_series(path)?,
        None => generate(cfg.generator(), need, cfg.seed)?,
    };
    if series.len() < need {
        return Err(HarnessError::Data(format!(
            "series has {} values; {} lags and horizon {} need {need}",
            series.len(),
            cfg.lags,
            cfg.horizon
        )));
    }
    Ok(series[..need].to_vec())
}

/// Step `t` (from 1) forecasts `y[L + t - 1]` from lags `y[t - 1 .. L + t - 1]`.
pub fn features_at(series: &[f64], lags: usize, t: usize, experts: &[ExpertKind], edges: &[f64]) -> Features {
    let past = &series[..lags + t - 1];
    Features {
        lags: series[t - 1..lags + t - 1].to_vec(),
        experts: experts.iter().map(|k| expert_forecast(*k, past, edges)).collect(),
    }
}

fn run_series(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let series = series_for(cfg)?;
    let (lo, hi) = outcome_range(&series);
    let edges = uniform_edges(lo, hi, cfg.bins);
    let n = cfg.experts.len();
    let mut rc = Recalibrator::new(n, lo, hi, cfg.orca(), cfg.seed)?;
    let adversary = Adversary::edges(lo, hi, cfg.adversary_grid).points;
    let mut steps = Vec::with_capacity(cfg.horizon);
    let mut qce = RunningQce::new();
    let mut expert_pits = vec![Vec::with_capacity(cfg.horizon); n];
    let mut expert_pairs = vec![Vec::with_capacity(cfg.horizon); n];
    let mut violations = (0usize, 0usize);
    let mut max_cert = f64::NEG_INFINITY;
    let bound = rc.payoff().bound();
    for t in 1..=cfg.horizon {
        let x = features_at(&series, cfg.lags, t, &cfg.experts, &edges);
        let y = series[cfg.lags + t - 1];
        for (j, e) in x.experts.iter().enumerate() {
            expert_pits[j].push(e.cdf_clamped(y));
            expert_pairs[j].push((y, e.mean()));
        }
        let rec = match rc.step(x, y) {
            Ok(r) => r.clone(),
            Err(e) => return Err(step_error(rc.game(), e)),
        };
        let norm = *rc.game().trajectory().last().expect("one step played");
        if norm > bound / t as f64 + BUDGET_TOL {
            violations.0 += 1;
        }
        // Certificates cover the adversary grid only.
        if adversary.contains(&y) && rec.directed_inner > rec.certificate.bound + 1e-9 {
            violations.1 += 1;
        }
        max_cert = max_cert.max(rec.certificate.bound);
        steps.push(StepRow {
            t,
            outcome: y,
            forecast_mean: rec.forecast.mean(),
            payoff_norm_sq: rec.payoff.norm_sq(),
            certificate: rec.certificate.bound,
            qce_so_far: Some(qce.push(rec.forecast.cdf_clamped(y))),
        });
    }
    let game = rc.game();
    let history = game.history();
    let levels = default_levels();
    let mask = game.spec().orthant_mask();
    let regret_coords: Vec<usize> = (0..mask.len()).filter(|i| mask[*i]).collect();
    let summary = GameSummary {
        forecaster: format!("orca({})", cfg.experts[0].name()),
        payoff: rc.payoff().name().to_string(),
        steps: game.t(),
        bound,
        final_norm_sq: game.trajectory().last().copied().unwrap_or(0.0),
        budget_violations: violations.0,
        certificate_violations: violations.1,
        max_certificate: max_cert,
    };
    let mut report = empty_report(cfg, (lo, hi), summary);
    let mut table = Vec::with_capacity(n + 1);
    for (j, k) in cfg.experts.iter().enumerate() {
        table.push(TableRow {
            forecaster: k.name().to_string(),
            qce: qce_from_pits(&expert_pits[j], &levels)?,
            smape: smape(&expert_pairs[j])?,
        });
    }
    let decision = (cfg.mode == Mode::Decision)
        .then(|| decision_summary(history, cfg))
        .transpose()?;
    let losses: Option<Vec<f64>> = decision.as_ref().map(|_| {
        let a = (1.0 + cfg.lambda) / 2.0;
        history
            .iter()
            .map(|h| decision_loss(&[h.forecast.quantile_clamped(a)], &[h.outcome], cfg.lambda).unwrap_or(f64::NAN))
            .collect()
    });
    let run = RunReport::from_history(history, &levels, &mask, &regret_coords, losses.as_deref())?;
    table.push(TableRow {
        forecaster: report.game.forecaster.clone(),
        qce: run.qce,
        smape: run.smape,
    });
    let ledger = rc.ledger(n);
    report.regret = vec![
        regret_report(&ledger.crps, history.len()),
        regret_report(&ledger.mse, history.len()),
    ];
    let pairs: Vec<_> = history.iter().map(|h| (&h.forecast, h.outcome)).collect();
    report.markov = markov_rows(&pairs, lo)?;
    report.table = table;
    report.run = Some(run);
    report.decision = decision;
    Ok(RunOutput { report, steps })
}

/// Hourly commitments grouped into days of 24 steps; trailing partial days
/// are dropped.
fn decision_summary(
    history: &[StepRecord<PiecewiseDensity>],
    cfg: &ExperimentConfig,
) -> Result<DecisionSummary, HarnessError> {
    let mut expert = Vec::new();
    let mut recal = Vec::new();
    for day in history.chunks_exact(24) {
        let y: Vec<f64> = day.iter().map(|h| h.outcome).collect();
        let pe: Vec<PiecewiseDensity> = day.iter().map(|h| h.features.experts[0].clone()).collect();
        let pr: Vec<PiecewiseDensity> = day.iter().map(|h| h.forecast.clone()).collect();
        expert.push(decision_loss(&optimal_commitment(&pe, cfg.lambda)?, &y, cfg.lambda)?);
        recal.push(decision_loss(&optimal_commitment(&pr, cfg.lambda)?, &y, cfg.lambda)?);
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(DecisionSummary {
        lambda: cfg.lambda,
        days: expert.len(),
        expert_mean: mean(&expert),
        recalibrated_mean: mean(&recal),
        expert_daily_loss: expert,
        recalibrated_daily_loss: recal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lag_alignment() {
        let series: Vec<f64> = (0..40).map(f64::from).collect();
        let edges = uniform_edges(-1.0, 41.0, 6);
        let x = features_at(&series, 24, 1, &[ExpertKind::Persistence], &edges);
        assert_eq!(x.lags, (0..24).map(f64::from).collect::<Vec<_>>());
        let x = features_at(&series, 24, 5, &[ExpertKind::Persistence], &edges);
        assert_eq!(x.lags.first(), Some(&4.0));
        assert_eq!(x.lags.last(), Some(&27.0));
        // The outcome of step 5 is y[28], right after the last lag.
        assert_eq!(series[24 + 5 - 1], 28.0);
    }

    #[test]
    fn running_qce_matches_batch() {
        let pits: Vec<f64> = (0..37).map(|i| ((i * 17) % 37) as f64 / 37.0).collect();
        let mut r = RunningQce::new();
        let last = pits.iter().map(|u| r.push(*u)).last().unwrap();
        let batch = qce_from_pits(&pits, &default_levels()).unwrap();
        assert!((last - batch).abs() < 1e-12);
    }

    #[test]
    fn short_series_is_rejected() {
        let cfg = ExperimentConfig {
            mode: Mode::Recalibrate,
            horizon: 10,
            lags: 5,
            ..Default::default()
        };
        assert_eq!(series_for(&cfg).unwrap().len(), 15);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "value\n1\n2\n3\n").unwrap();
        let cfg = ExperimentConfig {
            data: Some(path),
            ..cfg
        };
        assert!(series_for(&cfg).unwrap_err().to_string().contains("need 15"));
    }
}
