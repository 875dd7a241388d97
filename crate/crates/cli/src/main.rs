use clap::Parser;
use femlab_cli::args::Cli;
use femlab_cli::commands::dispatch;
use femlab_cli::failure::{exit_code, EXIT_OK, EXIT_USAGE};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    if let Err(err) = dispatch(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
