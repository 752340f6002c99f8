use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spde_lab_cli::{emit_plot_data, parse_config, resolve_seed, run, CliError, Experiment, RunConfig, SEED_ENV};

#[derive(Parser)]
#[command(name = "spde-lab", version, about = "Monte Carlo checks of Girsanov law transfer for stochastic heat equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Empirical variance of the Brownian sheet at (T, L).
    NoiseSelftest(RunArgs),
    /// Weak-form residuals under grid refinement.
    ResidualCheck(RunArgs),
    /// One-dimensional Gaussian tilt oracle.
    SdeOracle(RunArgs),
    /// Direct ensemble of the drifted equation.
    Simulate(RunArgs),
    /// Direct versus reweighted ensembles.
    CompareLaws(RunArgs),
    /// Tidy CSV series from summary files.
    PlotData {
        /// summary.json files
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the environment and the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-path CSVs.
    #[arg(long)]
    export_paths: bool,
}

fn load_config(args: &RunArgs, experiment: Experiment) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    config.experiment = experiment;
    let env = std::env::var(SEED_ENV).ok();
    config.master_seed = resolve_seed(config.master_seed, args.seed, env.as_deref())?;
    if let Some(out) = &args.out {
        config.output_dir = out.to_string_lossy().into_owned();
    }
    config.export_paths |= args.export_paths;
    config.validate()?;
    Ok(config)
}

fn execute(args: RunArgs, experiment: Experiment) -> Result<(), CliError> {
    let config = load_config(&args, experiment)?;
    let outcome = match args.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config {
                    key: "--threads".into(),
                    message: e.to_string(),
                })?;
            pool.install(|| run(&config))?
        }
        None => run(&config)?,
    };
    println!("{}", outcome.out_dir.join("summary.json").display());
    Ok(())
}

fn plot_data(summaries: &[PathBuf], out: &PathBuf) -> Result<(), CliError> {
    let values = summaries
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for path in emit_plot_data(&values, out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::NoiseSelftest(a) => execute(a, Experiment::NoiseSelftest),
        Command::ResidualCheck(a) => execute(a, Experiment::ResidualCheck),
        Command::SdeOracle(a) => execute(a, Experiment::SdeOracle),
        Command::Simulate(a) => execute(a, Experiment::Simulate),
        Command::CompareLaws(a) => execute(a, Experiment::CompareLaws),
        Command::PlotData { summaries, out } => plot_data(&summaries, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
