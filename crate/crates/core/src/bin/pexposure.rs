use clap::Parser;
use pexposure::cli::{run, Cli};

fn main() {
    let out = run(Cli::parse());
    match out {
        Ok(o) => {
            for w in &o.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", o.stdout);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
