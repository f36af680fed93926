use clap::Parser;

fn main() -> anyhow::Result<()> {
    fwmw_cli::run(fwmw_cli::Cli::parse())
}
