use clap::Parser;

use casematch_cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Err(err) = run(cli) {
        // Core errors already spell out their causes.
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
