use clap::Parser;

fn main() {
    let cli = ldpwave::cli::Cli::parse();
    match ldpwave::cli::run(cli) {
        Ok(dir) => println!("{}", dir.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
