use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use endow_cli::config::DumpKind;
use endow_cli::{outputs, parse_config, pipeline, CliError};

#[derive(Parser)]
#[command(
    name = "price",
    about = "Exponential-utility indifference pricing of pure endowments under partial information"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline for a scenario config.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the path count.
        #[arg(long)]
        paths: Option<usize>,
        /// Override the seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated extra dumps: paths,filter,bsde,surface,plot.
        #[arg(long, value_delimiter = ',')]
        dump: Vec<String>,
        /// Worker thread count (defaults to the rayon default).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and validate a scenario config without running it.
    Validate { config: PathBuf },
    /// Run only the deterministic ODE oracles for a reducible scenario.
    Oracle {
        config: PathBuf,
        /// Write the oracle series CSV here (defaults to stdout summary only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dump_kind(name: &str) -> Result<DumpKind, CliError> {
    match name {
        "paths" => Ok(DumpKind::Paths),
        "filter" => Ok(DumpKind::Filter),
        "bsde" => Ok(DumpKind::Bsde),
        "surface" => Ok(DumpKind::Surface),
        "plot" => Ok(DumpKind::Plot),
        other => Err(CliError::Schema {
            path: "--dump".into(),
            message: format!("unknown dump kind `{other}`"),
        }),
    }
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            paths,
            seed,
            dump,
            threads,
        } => {
            let text = fs::read_to_string(&config)?;
            let mut scenario = parse_config(&text)?;
            if let Some(p) = paths {
                scenario.numerics.n_paths = p as i64;
            }
            if let Some(s) = seed {
                scenario.numerics.seed = s;
            }
            for d in &dump {
                let kind = dump_kind(d)?;
                if !scenario.outputs.dumps.contains(&kind) {
                    scenario.outputs.dumps.push(kind);
                }
            }
            let out_dir = out.unwrap_or_else(|| PathBuf::from(&scenario.outputs.directory));
            let manifest = match threads {
                Some(n) => {
                    let pool = rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build()
                        .map_err(|e| CliError::Numerical(e.to_string()))?;
                    pool.install(|| pipeline::run_scenario(&scenario, &out_dir))?
                }
                None => pipeline::run_scenario(&scenario, &out_dir)?,
            };
            println!(
                "p_alpha_0 = {}\nU0_0 = {}\nUhat_0 = {}\nactuarial = {}\noutputs: {}",
                manifest.headline.p_alpha_0,
                manifest.headline.u0_0,
                manifest.headline.u_hat_0,
                manifest.headline.actuarial_reference,
                out_dir.display()
            );
            Ok(())
        }
        Command::Validate { config } => {
            let text = fs::read_to_string(&config)?;
            let scenario = parse_config(&text)?;
            let grid = endow_core::model::TimeGrid::new(
                scenario.numerics.n_steps as usize,
                scenario.model.horizon,
            )?;
            let report = endow_core::model::validate_model(&scenario.model, &grid);
            for check in &report.checks {
                println!(
                    "{} {} ({})",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                );
            }
            for warning in &report.warnings {
                println!("WARN {warning}");
            }
            report.into_result()?;
            Ok(())
        }
        Command::Oracle { config, out } => {
            let text = fs::read_to_string(&config)?;
            let scenario = parse_config(&text)?;
            let oracle = pipeline::run_oracle(&scenario)?;
            println!(
                "U0_0 = {}\nUhat_0 = {}\np_alpha_0 = {}",
                oracle.u0[0],
                oracle.u_hat[0],
                oracle.price0()
            );
            if let Some(path) = out {
                outputs::write_oracle_csv(&path, &oracle)?;
                println!("series: {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
