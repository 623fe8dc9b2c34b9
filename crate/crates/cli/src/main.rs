mod compare;
mod config;
mod run;

use std::process::ExitCode;

use clap::Parser;

use config::{Cli, RunConfig};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match RunConfig::from_cli(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error [config]: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run::run(&cfg) {
        Ok((m, dir)) => {
            if let Some(f) = &m.failure {
                eprintln!("error [{}]: {}", f.stage, f.message);
            }
            for (k, v) in &m.verdicts {
                let pass = v.get("pass").and_then(|p| p.as_bool());
                match pass {
                    Some(p) => println!("{k}: {}", if p { "pass" } else { "FAIL" }),
                    None => println!("{k}: {v}"),
                }
            }
            println!("{}", dir.join("manifest.json").display());
            if m.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error [output]: {e:#}");
            ExitCode::FAILURE
        }
    }
}
