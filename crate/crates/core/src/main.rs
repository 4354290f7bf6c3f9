use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = desplat::cli::Cli::parse();
    match desplat::cli::run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
