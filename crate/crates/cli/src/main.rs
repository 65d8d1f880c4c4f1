use clap::Parser;

fn main() {
    let cli = tplscan::Cli::parse();
    let code = match tplscan::run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            tplscan::exit_code_for(&err)
        }
    };
    std::process::exit(code);
}
