use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sofdma_harness::config::{ConfigError, ExperimentConfig, Mode};
use sofdma_harness::grouping::{require_grouping, run_grouping_experiment};
use sofdma_harness::oracle;
use sofdma_harness::plan::plan;
use sofdma_harness::sweep::{run_points, run_sweep, write_csv, write_svg, RunError, SweepRow};
use sofdma_harness::trial::{Arrangement, Point};

#[derive(Debug, Parser)]
#[command(name = "sofdma", about = "Sparse OFDMA massive-access simulator")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when no configuration file is given (fig1, fig2, custom).
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print derived parameters and codelengths.
    Plan,
    /// Run the trials of the first grid point and print per-trial records.
    Simulate,
    /// Error rate against lowest SNR for every dynamic range.
    Sweep {
        /// Also write an SVG plot.
        #[arg(long)]
        plot: bool,
    },
    /// Undivided versus time-division grouping.
    Grouping,
    /// Run the brute-force cross-checks.
    OracleCheck,
}

enum Failure {
    Config(ConfigError),
    Run(RunError),
    Oracle,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Self::Run(e)
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match (&cli.config, &cli.mode) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(m)) => ExperimentConfig::for_mode(
            m.parse::<Mode>().map_err(|msg| ConfigError::Value { key: "mode".into(), msg })?,
        ),
        (None, None) => ExperimentConfig::for_mode(Mode::Fig1),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.trials {
        cfg.trials = t;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_rows(rows: &[SweepRow]) {
    println!(
        "{:>7} {:>7} {:>10} {:>7} {:>7} {:>9} {:>18} {:>9} {:>8}",
        "snr_db", "dyn_db", "arrangement", "trials", "errors", "rate", "wilson95", "delay_err", "length"
    );
    for r in rows {
        println!(
            "{:>7} {:>7} {:>10} {:>7} {:>7} {:>9.4} [{:.4}, {:.4}] {:>9.2e} {:>8}",
            r.snr_db,
            r.dyn_db,
            r.arrangement.name(),
            r.trials,
            r.frame_errors,
            r.error_rate,
            r.wilson_lo,
            r.wilson_hi,
            r.mean_delay_err,
            r.codelength
        );
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load(cli)?;
    let out = cfg.out.clone();
    match &cli.cmd {
        Command::Plan => {
            let p = plan(&cfg)?;
            print!("{}", p.render());
            std::fs::create_dir_all(&out).map_err(|source| RunError::Io { path: out.clone(), source })?;
            let path = out.join("plan.csv");
            std::fs::write(&path, p.csv()).map_err(|source| RunError::Io { path, source })?;
        }
        Command::Simulate => {
            let point = Point { snr_db: cfg.snr_grid[0], dyn_idx: 0, arrangement: Arrangement::Undivided };
            let records = run_points(&cfg, &[point])?.remove(0);
            println!("trial,k_active,frame_error,misses,false_alarms,delay_failures,mean_delay_err,wall_ms");
            for r in &records {
                println!(
                    "{},{},{},{},{},{},{},{:.3}",
                    r.trial,
                    r.k_active,
                    r.frame_error,
                    r.miss_count,
                    r.false_count,
                    r.delay_failures,
                    r.mean_delay_err().unwrap_or(f64::NAN),
                    r.wall_time.as_secs_f64() * 1e3
                );
            }
        }
        Command::Sweep { plot } => {
            let rows = run_sweep(&cfg)?;
            print_rows(&rows);
            write_csv(&out.join("sweep.csv"), &rows)?;
            if *plot || cfg.plot {
                write_svg(&out.join("sweep.svg"), &rows)?;
            }
        }
        Command::Grouping => {
            require_grouping(&cfg)?;
            let rows = run_grouping_experiment(&cfg)?;
            let flat: Vec<SweepRow> = rows.iter().flat_map(|r| [r.undivided.clone(), r.divided.clone()]).collect();
            print_rows(&flat);
            for r in &rows {
                println!(
                    "snr {} dB: divided-only errors {}, undivided-only errors {}, one-sided p = {:.4}",
                    r.undivided.snr_db, r.test.a_only, r.test.b_only, r.test.p_value
                );
            }
            write_csv(&out.join("grouping.csv"), &flat)?;
            if cfg.plot {
                write_svg(&out.join("grouping.svg"), &flat)?;
            }
        }
        Command::OracleCheck => {
            let results = oracle::run_all(cfg.seed).map_err(RunError::from)?;
            let mut ok = true;
            for r in &results {
                println!(
                    "{} {:<50} error {:.3e} (tolerance {:.1e}) {}",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.name,
                    r.error,
                    r.tolerance,
                    r.detail
                );
                ok &= r.pass;
            }
            if !ok {
                return Err(Failure::Oracle);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Run(RunError::Model(e))) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Oracle) => {
            eprintln!("oracle check failed");
            ExitCode::from(2)
        }
    }
}
