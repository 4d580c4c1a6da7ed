use clap::Parser;

fn main() {
    let cli = ehreg::cli::Cli::parse();
    if let Err(err) = ehreg::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(ehreg::cli::exit_code(&err));
    }
}
