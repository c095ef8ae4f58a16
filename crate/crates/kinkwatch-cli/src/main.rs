use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use kinkwatch_core::harness::experiments::{
    write_curve_csv, write_spectra_csv, write_trajectory_csv,
};
use kinkwatch_core::harness::{
    experiment_comparison, experiment_shift, experiment_spectra, experiment_trajectory,
    monte_carlo, run_trial_detailed, stand_in_dataset, EarlyStopConfig, HMode, Optimizer,
    TrajectoryConfig, TrialConfig, Variant,
};
use kinkwatch_core::{check_assumptions, Dataset, Error, FiniteDistribution};

#[derive(Parser)]
#[command(
    name = "kinkwatch",
    version,
    about = "Kink-crossing experiments for two-layer ReLU networks trained by GD"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a single trial and print its result.
    Trial(Common),
    /// Estimate the crossing probability over many trials.
    Montecarlo(Common),
    /// Crossing probability per width for one optimization strategy.
    Comparison {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "gd")]
        variant: String,
        /// Comma-separated widths.
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        m_list: Vec<usize>,
    },
    /// Crossing probability per width with targets shifted by --delta-shift.
    Shift {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
        m_list: Vec<usize>,
    },
    /// Record loss, v̄ and kink positions along one GD run.
    Trajectory {
        #[command(flatten)]
        common: Common,
        /// Training data CSV (x,y). Defaults to a synthetic stand-in set.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Log-schedule levels; the run ends at ⌊1.1^levels⌋ − 1.
        #[arg(long, default_value_t = 120)]
        levels: u32,
    },
    /// Eigenvalues of the symmetrized reference operator over seeds.
    Spectra(Common),
    /// Check the data assumptions for a finite distribution.
    CheckDist(Common),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 16)]
    m: usize,
    /// Training set size (default m²).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "gd")]
    optimizer: String,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// auto, a fixed value, or c/m:<c>.
    #[arg(long, default_value = "auto")]
    h: String,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    delta_shift: f64,
    /// Distribution CSV with columns x,y,p (default: uniform six-point example).
    #[arg(long)]
    dist: Option<PathBuf>,
    #[arg(long)]
    early_stop: bool,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    x_target: f64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Common {
    fn distribution(&self) -> Result<FiniteDistribution> {
        match &self.dist {
            Some(path) => {
                let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                Ok(FiniteDistribution::read_csv(f, self.delta_shift)?)
            }
            None => Ok(FiniteDistribution::example(self.delta_shift)),
        }
    }

    fn config(&self) -> Result<TrialConfig> {
        let mut cfg = TrialConfig::new(self.m, self.seed);
        cfg.n = self.n;
        cfg.optimizer = self.optimizer.parse::<Optimizer>()?;
        cfg.batch_size = self.batch_size;
        cfg.h_mode = self.h.parse::<HMode>()?;
        cfg.alpha = self.alpha;
        cfg.distribution = self.distribution()?;
        cfg.early_stop = self.early_stop.then(EarlyStopConfig::default);
        cfg.max_steps = self.max_steps;
        cfg.x_target = self.x_target;
        cfg.validate()?;
        Ok(cfg)
    }

    fn sink(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => Box::new(io::stdout().lock()),
        })
    }

    fn format(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }
}

fn emit_json<T: Serialize>(value: &T, mut out: Box<dyn Write>) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Writes a single record as a header line plus one row.
fn emit_flat_csv(pairs: &[(&str, String)], mut out: Box<dyn Write>) -> Result<()> {
    let header: Vec<&str> = pairs.iter().map(|p| p.0).collect();
    let row: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
    writeln!(out, "{}", header.join(","))?;
    writeln!(out, "{}", row.join(","))?;
    out.flush()?;
    Ok(())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Trial(c) => {
            let r = run_trial_detailed(&c.config()?, 0)?.result;
            match c.format(Format::Json) {
                Format::Json => emit_json(&r, c.sink()?),
                Format::Csv => emit_flat_csv(
                    &[
                        ("outcome", r.outcome.label().to_string()),
                        ("steps_run", r.steps_run.to_string()),
                        ("first_crossing_step", opt(r.first_crossing_step)),
                        ("certified_at", opt(r.certified_at)),
                        ("final_loss", r.final_loss.to_string()),
                        ("kappa_u_final", r.kappa_u_final.to_string()),
                        ("h", r.h.to_string()),
                        ("wall_time", r.wall_time.to_string()),
                    ],
                    c.sink()?,
                ),
            }
        }
        Cmd::Montecarlo(c) => {
            let cfg = c.config()?;
            let r = monte_carlo(&cfg, c.trials, c.threads)?;
            match c.format(Format::Json) {
                Format::Json => emit_json(&r, c.sink()?),
                Format::Csv => {
                    let mut pairs = vec![
                        ("m", cfg.m.to_string()),
                        ("n", cfg.n().to_string()),
                        ("trials", r.trials.to_string()),
                        ("crossings", r.crossings.to_string()),
                        ("p_hat", r.p_hat.to_string()),
                        ("ci_lo", r.wilson_ci_95.0.to_string()),
                        ("ci_hi", r.wilson_ci_95.1.to_string()),
                    ];
                    pairs.extend(r.outcomes.iter().map(|(k, v)| (k.as_str(), v.to_string())));
                    emit_flat_csv(&pairs, c.sink()?)
                }
            }
        }
        Cmd::Comparison {
            common: c,
            variant,
            m_list,
        } => {
            let variant = variant.parse::<Variant>()?;
            let rows = experiment_comparison(&c.config()?, variant, &m_list, c.trials, c.threads)?;
            match c.format(Format::Csv) {
                Format::Csv => Ok(write_curve_csv(&rows, c.sink()?)?),
                Format::Json => emit_json(&rows, c.sink()?),
            }
        }
        Cmd::Shift { common: c, m_list } => {
            let rows = experiment_shift(&c.config()?, c.delta_shift, &m_list, c.trials, c.threads)?;
            match c.format(Format::Csv) {
                Format::Csv => Ok(write_curve_csv(&rows, c.sink()?)?),
                Format::Json => emit_json(&rows, c.sink()?),
            }
        }
        Cmd::Trajectory {
            common: c,
            data,
            levels,
        } => {
            let h = match c.h.parse::<HMode>()? {
                HMode::Fixed(h) => h,
                HMode::Scaled(k) => k / c.m as f64,
                HMode::Auto => TrajectoryConfig::default().h,
            };
            let data = match data {
                Some(p) => Dataset::read_csv(
                    File::open(&p).with_context(|| format!("opening {}", p.display()))?,
                )?,
                None => stand_in_dataset(300, c.seed)?,
            };
            let cfg = TrajectoryConfig {
                m: c.m,
                h,
                alpha: c.alpha,
                seed: c.seed,
                levels,
            };
            let rows = experiment_trajectory(&cfg, &data)?;
            match c.format(Format::Csv) {
                Format::Csv => Ok(write_trajectory_csv(&rows, c.sink()?)?),
                Format::Json => emit_json(&rows, c.sink()?),
            }
        }
        Cmd::Spectra(c) => {
            let rows = experiment_spectra(&c.config()?, c.trials)?;
            match c.format(Format::Csv) {
                Format::Csv => Ok(write_spectra_csv(&rows, c.sink()?)?),
                Format::Json => emit_json(&rows, c.sink()?),
            }
        }
        Cmd::CheckDist(c) => {
            let report = check_assumptions(&c.distribution()?)?;
            match c.format(Format::Json) {
                Format::Json => emit_json(&report, c.sink()?),
                Format::Csv => emit_flat_csv(
                    &[
                        ("p1_pos", report.p1_invertible[0].to_string()),
                        ("p1_neg", report.p1_invertible[1].to_string()),
                        ("p2_gap", report.p2_gap.to_string()),
                        ("p3_psi_q_zero", report.p3_psi_q_zero.to_string()),
                        ("psi_q", report.psi_q.to_string()),
                        ("p4_excess", report.p4_excess.to_string()),
                    ],
                    c.sink()?,
                ),
            }
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => 3,
        Some(Error::Internal(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
