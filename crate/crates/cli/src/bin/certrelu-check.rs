//! Standalone proof checker: `certrelu-check NET PROP PROOF`.

use clap::Parser;

#[derive(Parser)]
#[command(name = "certrelu-check", version, about = "Check a .certproof file")]
struct Args {
    #[command(flatten)]
    check: certrelu_cli::CheckArgs,
}

fn main() {
    let args = Args::parse();
    let code = match certrelu_cli::cmd_check(&args.check) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    std::process::exit(code);
}
