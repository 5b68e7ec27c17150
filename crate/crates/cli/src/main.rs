use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mabesov_cli::{configure_threads, run, CliError, Command, ExperimentConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Constants,
    AiCheck,
    Reproduce,
    Besov,
    Sio,
}

#[derive(Debug, Parser)]
#[command(name = "mabesov", about = "Monge-Ampere Besov and singular integral experiments")]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// key=value configuration file
    #[arg(long)]
    config: PathBuf,
    /// overrides `seed` from the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// overrides `output_dir` from the configuration
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&args) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mabesov: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &Args) -> Result<Vec<PathBuf>, CliError> {
    configure_threads()?;
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(s) = args.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &args.out {
        cfg = cfg.with_output_dir(o.clone());
    }
    let cmd = match args.command {
        Cmd::Constants => Command::Constants,
        Cmd::AiCheck => Command::AiCheck,
        Cmd::Reproduce => Command::Reproduce,
        Cmd::Besov => Command::Besov,
        Cmd::Sio => Command::Sio,
    };
    run(cmd, &cfg)
}
