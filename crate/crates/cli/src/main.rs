use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use critexp_cli::config::{ExperimentConfig, Task};
use critexp_cli::report::{write_rows, Format};
use critexp_cli::tasks::{run, sweep, write_output, RunOutput};

#[derive(Parser)]
#[command(name = "critexp", version, about = "Ground states and threshold constants for variable-exponent problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory for reports, field snapshots and the g-curve.
    #[arg(long, global = true, default_value = "critexp-out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run the task named in the config.
    Run { config: PathBuf },
    /// Run the config once per value of a parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Check the hypotheses on the exponent field of a config.
    Validate { config: PathBuf },
}

fn execute(cli: &Cli) -> Result<Vec<String>> {
    let outputs: Vec<(PathBuf, RunOutput)> = match &cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(config)?;
            vec![(cli.out.clone(), run(&cfg)?)]
        }
        Command::Validate { config } => {
            let mut cfg = ExperimentConfig::load(config)?;
            cfg.task = Task::Validate;
            cfg.check()?;
            vec![(cli.out.clone(), run(&cfg)?)]
        }
        Command::Sweep { config, param, values } => {
            let cfg = ExperimentConfig::load(config)?;
            let outs = sweep(&cfg, param, values)?;
            values
                .iter()
                .zip(outs)
                .map(|(v, o)| (cli.out.join(format!("{param}={v}")), o))
                .collect()
        }
    };
    let mut failures = Vec::new();
    let mut all_rows = Vec::new();
    for (dir, out) in &outputs {
        write_output(out, dir, cli.format)?;
        failures.extend(out.failures());
        all_rows.extend(out.rows.iter().cloned());
    }
    if outputs.len() > 1 {
        std::fs::create_dir_all(&cli.out)?;
        let path = cli.out.join(format!("sweep.{}", cli.format.extension()));
        write_rows(&all_rows, cli.format, std::fs::File::create(path)?)?;
    }
    write_rows(&all_rows, cli.format, std::io::stdout().lock())?;
    Ok(failures)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in failures {
                eprintln!("failed: {f}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
