use std::process::ExitCode;

use clap::Parser;

use hcpi_cli::args::Cli;
use hcpi_cli::{exit_code, run};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let outcome = cli.into_config().and_then(|(cfg, threads)| {
        if let Some(t) = threads {
            rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
        }
        run(&cfg)
    });
    match outcome {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
