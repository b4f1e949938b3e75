use clap::Parser;

fn main() {
    wisynth_cli::configure_threads();
    let cli = wisynth_cli::Cli::parse();
    match wisynth_cli::run(&cli.command) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(2);
        }
    }
}
