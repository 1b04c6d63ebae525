use clap::Parser;
use qratchet_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("qratchet: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
