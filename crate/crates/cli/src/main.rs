use clap::Parser;
use levylab::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let (experiment, args) = cli.command.parts();
    let code = match run(experiment, args) {
        Ok((code, summary)) => {
            print!("{summary}");
            code
        }
        Err(e) => {
            eprintln!("levylab: {e}");
            1
        }
    };
    std::process::exit(code);
}
