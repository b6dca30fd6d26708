use clap::Parser;
use scatter_breakdown::cli_io::{self, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { cli_io::EXIT_FAILURE } else { cli_io::EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(cli_io::run(&cli));
}
