use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use massdirac::experiment::{exit_code, run, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "massdirac", version, about = "Mass endomorphism experiments on perturbed flat tori")]
struct Cli {
    /// JSON configuration; defaults are used when absent.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration entry, e.g. `--set family.m=16`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Output stem; replaces `output_path`.
    #[arg(long, short, global = true)]
    output: Option<String>,

    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Lowest eigenvalues at `family.t`.
    Spectrum,
    /// Mass endomorphism at `family.t`.
    Mass,
    /// Mass endomorphism along `t_schedule`.
    Sweep,
    /// Mass differences under a small metric perturbation.
    Continuity,
    /// Rational fit of a sweep column against `t`.
    Polefit,
    /// KO groups of a point.
    Ko,
    /// Print the resolved configuration.
    Config,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut overrides = cli.overrides.clone();
    if let Some(out) = &cli.output {
        overrides.push(format!("output_path={}", serde_json::Value::String(out.clone())));
    }
    let cfg = match ExperimentConfig::load(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let command = match cli.verb {
        Verb::Spectrum => Command::Spectrum,
        Verb::Mass => Command::Mass,
        Verb::Sweep => Command::Sweep,
        Verb::Continuity => Command::Continuity,
        Verb::Polefit => Command::Polefit,
        Verb::Ko => Command::Ko,
        Verb::Config => {
            println!("{}", cfg.to_json());
            return ExitCode::SUCCESS;
        }
    };
    let result = run(command, &cfg).and_then(|a| a.write(&cfg.output_path));
    match result {
        Ok((csv, json)) => {
            println!("{}\n{}", csv.display(), json.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
