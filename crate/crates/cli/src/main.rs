use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hopguard::analytics::AnalyticParams;
use hopguard::harness::{
    analyze_table, parse_range, run_experiment, selftest, single_round, write_analytic_csv, write_grid_csv, CellKey,
    Execution, ExperimentConfig, FULL_TRIALS,
};
use hopguard::protocol::{write_trace_csv, ModePolicy};

#[derive(Parser)]
#[command(name = "uwb-hopguard", version, about = "UWB DS-TWR Ghost Peak attack and time-hopping defense simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Simulate(SimulateArgs),
    /// Run a SIR × T_sy grid given on the command line.
    Sweep(SweepArgs),
    /// One verbose round with a per-message trace.
    Range(RangeArgs),
    /// Closed-form attack probabilities as CSV.
    Analyze(AnalyzeArgs),
    /// Fast invariant checks across all modules.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Classic,
    Hop,
    Auto,
}

impl From<Mode> for ModePolicy {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Classic => ModePolicy::Classic,
            Mode::Hop => ModePolicy::Hop,
            Mode::Auto => ModePolicy::Auto,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    /// 20 000 trials per cell.
    #[arg(long, conflicts_with = "trials")]
    full: bool,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<f64>,
    /// Grid CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-round records file; an existing one from the same config is resumed.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Omit the timestamp line so identical runs produce identical bytes.
    #[arg(long)]
    deterministic: bool,
    /// Run trials on the calling thread only.
    #[arg(long, conflicts_with = "threads")]
    serial: bool,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// SIR grid in dB, start:stop:step inclusive.
    #[arg(long, allow_hyphen_values = true, default_value = "-20:-30:2")]
    sir: String,
    /// T_sy grid in µs, start:stop:step inclusive.
    #[arg(long, allow_hyphen_values = true, default_value = "-2.5:2.5:0.5")]
    tsy: String,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct RangeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, allow_hyphen_values = true, default_value_t = -26.0)]
    sir: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = -1.0)]
    tsy: f64,
    #[arg(long)]
    no_attack: bool,
    #[arg(long, default_value_t = 0)]
    trial: u64,
    /// Trace CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write each message's STS correlation trace as CSV.
    #[arg(long)]
    debug_cir: bool,
    #[arg(long, default_value = ".")]
    cir_dir: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// STS length.
    #[arg(long, default_value_t = 4096)]
    n: u64,
    /// θ/x_t values, start:stop:step inclusive.
    #[arg(long, allow_hyphen_values = true, default_value = "0:64:4")]
    theta_over_x: String,
    /// Maximum ranging distance; bounds the time-of-flight support.
    #[arg(long, default_value_t = 15.0)]
    max_range_m: f64,
    #[arg(long, default_value_t = 15.0)]
    hop_min_us: f64,
    #[arg(long, default_value_t = 20.0)]
    hop_max_us: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn base_config(path: Option<&Path>) -> Result<ExperimentConfig, hopguard::Error> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), ExperimentConfig::load)
}

fn run_grid(mut cfg: ExperimentConfig, run: &RunArgs) -> CliResult {
    if let Some(s) = run.seed {
        cfg.master_seed = s;
    }
    if let Some(t) = run.trials {
        cfg.trial_count = t;
    }
    if run.full {
        cfg.trial_count = FULL_TRIALS;
        eprintln!("note: --full runs {FULL_TRIALS} trials per grid cell (per-cell reading of the 20 000-simulation count)");
    }
    if let Some(m) = run.mode {
        cfg.mode = m.into();
    }
    if let Some(snr) = run.snr {
        cfg.snr_db = snr;
    }
    cfg.validate()?;
    let exec = if run.serial { Execution::Serial } else { Execution::Parallel(run.threads) };
    let result = run_experiment(&cfg, exec, run.records.as_deref())?;
    if result.resumed > 0 {
        log::info!("resumed {} cells from records", result.resumed);
    }
    let mut out = output(run.out.as_deref())?;
    write_grid_csv(&mut out, &result.cells, run.deterministic)?;
    out.flush()?;
    Ok(())
}

fn range(args: &RangeArgs) -> CliResult {
    let mut cfg = base_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(m) = args.mode {
        cfg.mode = m.into();
    }
    cfg.validate()?;
    let cell = (!args.no_attack).then_some(CellKey {
        sir_db: args.sir,
        tsy_us: args.tsy,
    });
    let outcome = single_round(&cfg, cell, args.trial, args.debug_cir)?;
    let mut out = output(args.out.as_deref())?;
    write_trace_csv(&mut out, &outcome.trace)?;
    out.flush()?;
    let r = &outcome.record;
    eprintln!(
        "mode {:?} distance {} failure {} attack_success {} detection {} hop_delay_us {}",
        r.mode,
        r.distance_m.map_or("-".into(), |d| format!("{d:.3} m")),
        r.failure.map_or("-".into(), |f| f.code()),
        r.attack_success,
        r.detection.map_or("-".into(), |s| s.to_string()),
        r.hop_delay_s.map_or("-".into(), |h| format!("{:.3}", h * 1e6)),
    );
    if args.debug_cir {
        std::fs::create_dir_all(&args.cir_dir)?;
        for (message, cir, nominal) in &outcome.cirs {
            let path = args.cir_dir.join(format!("cir_{}.csv", message.name()));
            let mut f = BufWriter::new(File::create(&path)?);
            cir.write_csv(&mut f, *nominal as i64)?;
            f.flush()?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> CliResult {
    let mut base = AnalyticParams::with_range(args.n, 0.0, 1.0, args.max_range_m);
    base.t_min_hop = args.hop_min_us * 1e-6;
    base.t_max_hop = args.hop_max_us * 1e-6;
    let rows = analyze_table(&base, &parse_range(&args.theta_over_x)?)?;
    let mut out = output(args.out.as_deref())?;
    write_analytic_csv(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Simulate(a) => {
            let path = a.run.config.as_deref().ok_or("simulate requires --config")?;
            run_grid(ExperimentConfig::load(path)?, &a.run)
        }
        Command::Sweep(a) => {
            let mut cfg = base_config(a.run.config.as_deref())?;
            cfg.sir_db = parse_range(&a.sir)?;
            cfg.tsy_us = parse_range(&a.tsy)?;
            run_grid(cfg, &a.run)
        }
        Command::Range(a) => range(&a),
        Command::Analyze(a) => analyze(&a),
        Command::Selftest => {
            let checks = selftest();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().all(|c| c.passed) {
                Ok(())
            } else {
                Err("selftest failed".into())
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
