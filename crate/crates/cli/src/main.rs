use clap::Parser;

fn main() {
    let cli = certrelu_cli::Cli::parse();
    std::process::exit(certrelu_cli::run(&cli));
}
