mod args;
mod commands;
mod failure;
mod ingest;

use clap::error::ErrorKind as ClapErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::failure::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Weights(a) => commands::weights(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Bound(a) => commands::bound(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Rank(a) => commands::rank(a),
        Command::Export(a) => commands::export(a),
        Command::Scenarios => commands::scenarios(),
    }
}

fn fail(err: &CliError) -> ! {
    eprintln!("{}", err.to_json());
    std::process::exit(err.exit_code());
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SHIFTWEIGH_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion) => e.exit(),
        Err(e) => fail(&CliError::usage(e.to_string().trim_end())),
    };
    std::panic::set_hook(Box::new(|_| {}));
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => {}
        Ok(Err(e)) => fail(&e),
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(&CliError::internal(format!("internal error: {msg}")))
        }
    }
}
