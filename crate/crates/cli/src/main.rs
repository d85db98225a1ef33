use clap::Parser;

fn main() {
    let cli = match raybundle_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = raybundle_cli::run(cli) {
        eprintln!("raybundle: {e}");
        std::process::exit(e.exit_code());
    }
}
