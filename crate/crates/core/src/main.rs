use clap::Parser;
use pad_core::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
