mod cli;
mod commands;

use std::io::{self, BufWriter};
use std::process::ExitCode;

use clap::Parser;

use crate::cli::{Cli, Command};
use crate::commands::Status;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let result = match &cli.command {
        Command::Audit(a) => commands::audit(a, &mut out),
        Command::Policy(a) => commands::policy(a, &mut out),
        Command::Simulate(a) => commands::simulate_cmd(a, &mut out),
        Command::Bench(a) => commands::bench(a, &mut out),
        Command::Generate(a) => commands::generate(a, &mut out),
    };
    drop(out);
    match result {
        Ok(Status::Clean) => ExitCode::SUCCESS,
        Ok(Status::Flagged) => ExitCode::from(1),
        Err(e) => {
            eprintln!("rng-sentinel: {e}");
            ExitCode::from(2)
        }
    }
}
