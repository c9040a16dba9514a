use clap::Parser;

fn main() {
    std::process::exit(mwi_cli::run(mwi_cli::Cli::parse()));
}
