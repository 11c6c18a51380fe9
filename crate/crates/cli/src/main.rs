use clap::Parser;

fn main() {
    let cli = rlstage_cli::Cli::parse();
    if let Err(e) = rlstage_cli::run_command(cli.command) {
        eprintln!("error: {:#}", e);
        std::process::exit(1);
    }
}
