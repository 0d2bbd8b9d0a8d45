use clap::Parser;
use evpano::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
