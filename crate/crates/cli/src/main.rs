use std::process::ExitCode;

use clap::Parser;

use quadcurl_cli::config::{Cli, Command, ExperimentConfig};
use quadcurl_cli::run::run;
use quadcurl_cli::solve::run_solve;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(Command::Solve(args)) = &cli.command {
        return match run_solve(args) {
            Ok(s) => {
                println!("n = {}, iterations = {}, relative residual = {:.3e}", s.n, s.iterations, s.relative_residual);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        };
    }
    let cfg = match ExperimentConfig::from_cli(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(out) => {
            for f in out.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
