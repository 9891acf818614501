use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wcc_cli::{compare_solvers, run_experiment, stationarity_at, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "wcc", version, about = "Run weakly-convex-concave min-max experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.csv, summary.toml and x_out.txt.
    Run { config: PathBuf },
    /// Run several experiments on the same data and write compare.csv.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// Report the Moreau-envelope stationarity of a stored iterate.
    Stationarity {
        config: PathBuf,
        /// File with one coordinate per line (e.g. x_out.txt).
        #[arg(long)]
        at: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = run_experiment(&cfg)?;
            let r = &out.summary.result;
            println!(
                "{}: T={} passes={:.3} psi={:.6e} -> {}",
                r.label,
                r.iterations,
                r.data_passes,
                r.final_psi,
                out.output_dir.display()
            );
        }
        Command::Compare { configs } => {
            let cfgs = configs
                .iter()
                .map(|p| ExperimentConfig::load(p))
                .collect::<Result<Vec<_>, _>>()?;
            let dir = cfgs[0].output_dir();
            let outs = compare_solvers(&cfgs, &dir)?;
            for o in &outs {
                let r = &o.summary.result;
                println!("{}: passes={:.3} psi={:.6e}", r.label, r.data_passes, r.final_psi);
            }
            println!("wrote {}", dir.join(wcc_cli::runner::COMPARE_FILE).display());
        }
        Command::Stationarity { config, at } => {
            let cfg = ExperimentConfig::load(&config)?;
            let s = stationarity_at(&cfg, &at)?;
            print!("{}", toml::to_string(&s).map_err(|e| CliError::Io(e.to_string()))?);
        }
    }
    Ok(())
}
