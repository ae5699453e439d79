use clap::Parser;

fn main() {
    let cli = bpire_core::cli::Cli::parse();
    std::process::exit(bpire_core::cli::dispatch(cli));
}
