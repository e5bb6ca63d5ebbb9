use std::io::Write;
use std::process::ExitCode;

use anyhow::Context;
use clap::{CommandFactory, Parser};
use fishdet::cli::{Cli, Command};
use fishdet::commands;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match (cli.config, cli.command) {
        (Some(path), _) => match std::fs::read_to_string(&path)
            .with_context(|| path.display().to_string())
            .and_then(|t| serde_json::from_str::<Command>(&t).with_context(|| format!("{}: bad config", path.display())))
        {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::FAILURE;
            }
        },
        (None, Some(c)) => c,
        (None, None) => {
            let _ = Cli::command().print_help();
            return ExitCode::from(2);
        }
    };
    eprintln!("config: {}", cmd.echo());
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match commands::run(&cmd, &mut out).and_then(|()| Ok(out.flush()?)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
