use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use calib::harness::{run_experiment, ExperimentConfig, ExpertKind, Mode, NatureKind, OracleKind, RunOutput};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cal", version, about = "Calibrated online forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Recalibrate an expert on a series with ORCA.
    Recalibrate {
        #[command(flatten)]
        series: Series,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[command(flatten)]
        out: Out,
    },
    /// Play a forecaster against an adversarial Nature.
    Adversarial {
        #[arg(long, value_enum, default_value_t = OracleArg::Quantile)]
        oracle: OracleArg,
        /// Number of steps.
        #[arg(long = "T", default_value_t = 5000)]
        horizon: usize,
        #[arg(long, value_enum)]
        nature: Option<NatureArg>,
        /// Scan a 10x finer outcome grid than the adversary grid.
        #[arg(long)]
        dense_nature: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: Out,
    },
    /// Compare newsvendor commitments of an expert and its recalibration.
    Decision {
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[command(flatten)]
        series: Series,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Args)]
struct Series {
    /// CSV file with a `value` column; a synthetic series is used otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic generator (ar1, seasonal).
    #[arg(long)]
    generator: Option<String>,
    #[arg(long, value_enum, default_value_t = ExpertArg::Marginal)]
    expert: ExpertArg,
    /// Number of forecast steps.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// ORCA iteration budget per step.
    #[arg(long, default_value_t = 400)]
    orca_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Out {
    /// Directory for report.json and steps.csv.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Quantile,
    Orca,
    Aci,
    AciClassic,
    MomentGrid,
    HistogramGrid,
    Expert,
}

#[derive(Clone, Copy, ValueEnum)]
enum NatureArg {
    Qce,
    Greedy,
    Coverage,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExpertArg {
    Marginal,
    RollingGaussian,
    Persistence,
}

impl From<ExpertArg> for ExpertKind {
    fn from(e: ExpertArg) -> Self {
        match e {
            ExpertArg::Marginal => ExpertKind::Marginal,
            ExpertArg::RollingGaussian => ExpertKind::RollingGaussian,
            ExpertArg::Persistence => ExpertKind::Persistence,
        }
    }
}

impl From<OracleArg> for OracleKind {
    fn from(o: OracleArg) -> Self {
        match o {
            OracleArg::Quantile => OracleKind::Quantile,
            OracleArg::Orca => OracleKind::Orca,
            OracleArg::Aci => OracleKind::Aci,
            OracleArg::AciClassic => OracleKind::AciClassic,
            OracleArg::MomentGrid => OracleKind::MomentGrid,
            OracleArg::HistogramGrid => OracleKind::HistogramGrid,
            OracleArg::Expert => OracleKind::Expert,
        }
    }
}

impl From<NatureArg> for NatureKind {
    fn from(n: NatureArg) -> Self {
        match n {
            NatureArg::Qce => NatureKind::Qce,
            NatureArg::Greedy => NatureKind::Greedy,
            NatureArg::Coverage => NatureKind::Coverage,
        }
    }
}

fn series_config(mode: Mode, s: Series) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        data: s.data,
        generator: s.generator,
        experts: vec![s.expert.into()],
        horizon: s.steps,
        steps: s.orca_steps,
        seed: s.seed,
        ..Default::default()
    }
}

fn config_of(command: Command) -> Result<(ExperimentConfig, PathBuf), String> {
    Ok(match command {
        Command::Run { config, out } => (ExperimentConfig::load(&config).map_err(|e| e.to_string())?, out.out),
        Command::Recalibrate { series, bins, out } => (
            ExperimentConfig {
                bins,
                ..series_config(Mode::Recalibrate, series)
            },
            out.out,
        ),
        Command::Decision { lambda, series, out } => (
            ExperimentConfig {
                lambda,
                ..series_config(Mode::Decision, series)
            },
            out.out,
        ),
        Command::Adversarial {
            oracle,
            horizon,
            nature,
            dense_nature,
            seed,
            out,
        } => {
            let oracle: OracleKind = oracle.into();
            let nature = nature.map(NatureKind::from).unwrap_or(match oracle {
                OracleKind::MomentGrid | OracleKind::HistogramGrid => NatureKind::Greedy,
                _ => NatureKind::Qce,
            });
            (
                ExperimentConfig {
                    mode: Mode::Adversarial,
                    oracle,
                    nature,
                    horizon,
                    dense_nature,
                    seed,
                    ..Default::default()
                },
                out.out,
            )
        }
    })
}

fn summarize(out: &RunOutput) {
    let r = &out.report;
    let g = &r.game;
    println!(
        "{} on {}: {} steps, final ‖avg‖² {:.3e} (B/T {:.3e}), budget violations {}, certificate violations {}",
        g.forecaster,
        g.payoff,
        g.steps,
        g.final_norm_sq,
        g.bound / g.steps.max(1) as f64,
        g.budget_violations,
        g.certificate_violations
    );
    for row in &r.table {
        println!("  {:<24} QCE {:.4}  SMAPE {:.4}", row.forecaster, row.qce, row.smape);
    }
    if let Some(c) = r.coverage {
        println!("  coverage {c:.4}");
    }
    if let Some(d) = &r.decision {
        println!(
            "  daily decision loss: expert {:.4}, recalibrated {:.4} over {} days",
            d.expert_mean, d.recalibrated_mean, d.days
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config_of(cli.command).and_then(|(cfg, dir)| {
        let start = Instant::now();
        let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
        out.write(&dir).map_err(|e| e.to_string())?;
        summarize(&out);
        eprintln!("wrote {} in {:.1}s", dir.display(), start.elapsed().as_secs_f64());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
