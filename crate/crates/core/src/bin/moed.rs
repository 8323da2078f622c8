use clap::Parser;

fn main() {
    if let Err(e) = moed::cli::run(moed::cli::Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
