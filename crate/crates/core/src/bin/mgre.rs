use clap::Parser;

fn main() {
    let cli = mgre::cli::Cli::parse();
    if let Err(e) = mgre::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
