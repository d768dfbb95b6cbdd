use clap::Parser;

fn main() {
    let cli = xidpo::cli::Cli::parse();
    if let Err(err) = xidpo::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(xidpo::cli::exit_code(&err));
    }
}
