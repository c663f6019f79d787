use clap::Parser;

fn main() {
    let cli = emlreg_cli::Cli::parse();
    if let Err(e) = emlreg_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
