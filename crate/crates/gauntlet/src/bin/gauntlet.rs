use clap::Parser;
use gauntlet::cli;

fn main() {
    let args = cli::Cli::parse();
    std::process::exit(cli::run(&args));
}
