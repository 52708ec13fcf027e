use clap::Parser;

fn main() {
    let cli = owfkit_cli::Cli::parse();
    std::process::exit(owfkit_cli::run(cli));
}
