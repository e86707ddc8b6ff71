use clap::Parser;

fn main() {
    let cli = monokp_cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let code = match monokp_cli::run(cli, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            monokp_cli::exit_code(&e)
        }
    };
    drop(stdout);
    std::process::exit(code);
}
