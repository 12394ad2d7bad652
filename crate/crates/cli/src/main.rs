use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use jumpkit_cli::{load, run_config, CliError};

#[derive(Parser)]
#[command(name = "jumpkit", version, about = "Run quantum-jump experiments from flat key = value configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV tables and manifest.
    Run {
        config: PathBuf,
        /// Zeno measurement times: `uniform:N` or `file:path`.
        #[arg(long)]
        dissection: Option<String>,
    },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, dissection } => load(&config).and_then(|mut cfg| {
            if let Some(d) = dissection {
                cfg.set("dissection", &d)?;
            }
            let files = run_config(&cfg)?;
            for f in files {
                println!("{}", cfg.output_dir.join(f).display());
            }
            Ok(())
        }),
        Command::Validate { config } => load(&config).map(|cfg| println!("ok: {}", cfg.experiment.name())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("jumpkit: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
