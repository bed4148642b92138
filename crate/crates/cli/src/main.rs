use clap::Parser;

use copula_hmc_cli::config::Cli;

fn main() {
    if let Err(err) = copula_hmc_cli::run(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
