use clap::Parser;
use signalroot_cli::{run, Cli, ERROR_EXIT};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ERROR_EXIT } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(&cli) {
        Ok(outcome) => std::process::exit(outcome.code()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(ERROR_EXIT);
        }
    }
}
