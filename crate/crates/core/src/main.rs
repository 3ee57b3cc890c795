use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use termstats::config::PipelineConfig;
use termstats::ingest::{write_quotes, Dataset};
use termstats::pipeline::{run_pipeline, run_stage, Stage};
use termstats::synth::{dataset_to_quotes, gen_samuelson_dataset, ReturnDistribution, SynthSpec, TailMu};
use termstats::{Error, Result};

/// Term-structure statistics for futures markets.
///
/// Exit codes: 0 success, 2 configuration or usage error, 3 input error,
/// 4 insufficient data.
#[derive(Debug, Parser)]
#[command(name = "termstats", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides `out_dir`; default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Master seed (overrides `seed`).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    jobs: usize,

    /// Quote CSV files (override `input.paths`).
    #[arg(long, global = true, value_name = "PATH")]
    input: Vec<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse quotes and build aligned constant-maturity series.
    Ingest,
    /// Daily log-returns with the gap rule.
    Returns,
    /// Moment term structures and contango indices.
    Moments,
    /// Power-law scaling of volatility with maturity.
    Scaling,
    /// Tail exponents per market, maturity and tail.
    Tails,
    /// Cross-market exponent curve, regime fits and the final report.
    Aggregate,
    /// Every stage in order.
    Run,
    /// Write a synthetic quote file with known ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Dist {
    Gaussian,
    StudentT,
    Pareto,
}

#[derive(Debug, clap::Args)]
struct SynthArgs {
    /// Market names, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "SYN")]
    markets: Vec<String>,

    /// Price records per series.
    #[arg(long, default_value_t = 2500)]
    records: usize,

    /// Number of maturity ranks, 1..=K.
    #[arg(long, value_name = "K", default_value_t = 15)]
    maturities: u32,

    /// Return scale decays as M^-beta.
    #[arg(long, default_value_t = 0.175)]
    beta: f64,

    /// Return scale at M = 1.
    #[arg(long, default_value_t = 0.02)]
    scale: f64,

    #[arg(long, value_enum, default_value_t = Dist::Gaussian)]
    dist: Dist,

    /// Degrees of freedom for `student-t`.
    #[arg(long, default_value_t = 3.0)]
    nu: f64,

    /// Tail exponent for `pareto`.
    #[arg(long, default_value_t = 3.0)]
    mu: f64,

    /// First calendar date (weekends are skipped).
    #[arg(long, default_value = "2000-01-03")]
    start: NaiveDate,

    /// Destination CSV file.
    #[arg(long, short)]
    output: PathBuf,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if !cli.input.is_empty() {
        cfg.input.paths = cli.input.clone();
        cfg.base_dir = PathBuf::new();
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &PipelineConfig) -> PathBuf {
    match (&cli.out, &cfg.out_dir) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) if dir.is_relative() => cfg.base_dir.join(dir),
        (None, Some(dir)) => dir.clone(),
        (None, None) => PathBuf::from("out"),
    }
}

fn synth(args: &SynthArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.ok_or_else(|| Error::Config("synth needs a seed (--seed or `seed` in the config)".into()))?;
    let distribution = match args.dist {
        Dist::Gaussian => ReturnDistribution::Gaussian,
        Dist::StudentT => ReturnDistribution::StudentT { nu: args.nu },
        Dist::Pareto => ReturnDistribution::ParetoSymmetric,
    };
    if args.maturities == 0 {
        return Err(Error::Config("--maturities must be at least 1".into()));
    }
    let datasets = args
        .markets
        .iter()
        .map(|market| {
            gen_samuelson_dataset(&SynthSpec {
                market: market.clone(),
                seed,
                records: args.records,
                maturities: (1..=args.maturities).collect(),
                tail_mu: TailMu::Single(args.mu),
                scale_alpha: args.beta,
                base_scale: args.scale,
                distribution,
                start: args.start,
            })
            .map_err(|e| Error::Config(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset::merge(datasets).ok_or_else(|| Error::Config("no markets given".into()))?;
    let quotes = dataset_to_quotes(&dataset);
    if let Some(dir) = args.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("cannot create {}", dir.display()), e))?;
    }
    let file = std::fs::File::create(&args.output)
        .map_err(|e| Error::io(format!("cannot create {}", args.output.display()), e))?;
    write_quotes(&quotes, std::io::BufWriter::new(file))?;
    eprintln!("termstats: wrote {} quotes to {}", quotes.len(), args.output.display());
    Ok(())
}

fn report(what: &str, count: usize, dir: &Path) {
    eprintln!("termstats: {what} wrote {count} file(s) to {}", dir.display());
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let stage = match &cli.command {
        Command::Synth(args) => return synth(args, cfg.seed),
        Command::Run => {
            let dir = out_dir(cli, &cfg);
            let written = run_pipeline(&cfg, &dir, cli.jobs)?;
            report("run", written.len(), &dir);
            return Ok(());
        }
        Command::Ingest => Stage::Ingest,
        Command::Returns => Stage::Returns,
        Command::Moments => Stage::Moments,
        Command::Scaling => Stage::Scaling,
        Command::Tails => Stage::Tails,
        Command::Aggregate => Stage::Aggregate,
    };
    let dir = out_dir(cli, &cfg);
    let written = run_stage(stage, &cfg, &dir, cli.jobs)?;
    report(stage.name(), written.len(), &dir);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let unknown = e.kind() == ErrorKind::InvalidSubcommand;
            let _ = e.print();
            if unknown {
                let stages: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                eprintln!("valid commands: {}, run, synth", stages.join(", "));
            }
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("termstats: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
