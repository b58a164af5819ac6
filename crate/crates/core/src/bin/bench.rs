use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dmafusion::bench::{
    format_table, run_experiment, run_table, table_rows, write_experiment, write_runs_csv, write_summary_csv,
    write_table_csv, Algorithm, ExperimentConfig, PriorMode, RmseMode,
};
use dmafusion::{Config, Result};

/// Monte Carlo comparison of PF, TS, SMA and DMA on the tracking scenarios.
#[derive(Parser, Debug)]
#[command(name = "bench", args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    single: SingleArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Every algorithm on scenarios 1-4.
    Table1(CommonArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    #[arg(long, default_value_t = 1000)]
    particles: usize,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PriorMode::Accurate)]
    prior: PriorMode,
    #[arg(long, value_enum, default_value_t = RmseMode::Full)]
    rmse: RmseMode,
    /// TOML file overriding model, simulation or scenario settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SingleArgs {
    #[arg(long, value_enum)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    scenario: Option<u32>,
    #[command(flatten)]
    common: Option<CommonArgs>,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn run_single(algorithm: Algorithm, scenario: u32, args: &CommonArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let exp = ExperimentConfig {
        algorithm,
        scenario: config.scenario(scenario)?,
        particles: args.particles,
        runs: args.runs,
        master_seed: args.seed,
        prior: args.prior,
        rmse_mode: args.rmse,
        config,
    };
    let result = run_experiment(&exp)?;
    write_experiment(&args.out, &exp, &result)?;
    let s = &result.summary;
    println!(
        "{} scenario {}: rmse {:.4} (var {:.4}), time {:.4}s (var {:.3e})",
        s.algorithm, s.scenario, s.mean_rmse, s.var_rmse, s.mean_time, s.var_time
    );
    Ok(())
}

fn run_table1(args: &CommonArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let scenarios = (1..=4).map(|k| config.scenario(k)).collect::<Result<Vec<_>>>()?;
    let experiments = run_table(&scenarios, args.particles, args.runs, args.seed, args.prior, args.rmse, &config)?;
    std::fs::create_dir_all(&args.out)?;
    let summaries: Vec<_> = experiments.iter().map(|e| e.summary.clone()).collect();
    write_summary_csv(BufWriter::new(File::create(args.out.join("summary.csv"))?), &summaries)?;
    let runs: Vec<_> = experiments.iter().flat_map(|e| e.runs.iter().cloned()).collect();
    write_runs_csv(BufWriter::new(File::create(args.out.join("runs.csv"))?), &runs)?;
    let rows = table_rows(&experiments);
    write_table_csv(BufWriter::new(File::create(args.out.join("table1.csv"))?), &rows)?;
    print!("{}", format_table(&rows));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match (&cli.command, &cli.single) {
        (Some(Command::Table1(args)), _) => run_table1(args),
        (
            None,
            SingleArgs {
                algorithm: Some(a),
                scenario: Some(s),
                common: Some(args),
            },
        ) => run_single(*a, *s, args),
        _ => {
            eprintln!("error: --algorithm, --scenario and --out are required (or use the table1 subcommand)");
            return ExitCode::from(2);
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
