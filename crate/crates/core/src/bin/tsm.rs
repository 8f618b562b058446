use clap::Parser;

fn main() {
    let cli = tsm::cli::Cli::parse();
    if let Err(e) = tsm::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
