use clap::Parser;
use csalign_cli::error::exit;

fn main() {
    let cli = match csalign_cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::PARSE } else { exit::OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(csalign_cli::run(cli));
}
