use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nelson_lab::{config, EXPERIMENTS};

#[derive(Parser)]
#[command(name = "nelson-lab", version, about = "Stochastic-mechanics experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Check a config file without running anything.
    Validate { config: PathBuf },
    /// Print the registered experiment names.
    ListExperiments,
}

fn read(path: &PathBuf) -> Result<String, ExitCode> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("cannot read {}: {e}", path.display());
        ExitCode::from(2)
    })
}

fn threads() -> Result<Option<usize>, String> {
    match std::env::var("NELSON_LAB_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("NELSON_LAB_THREADS must be a positive integer, got `{s}`")),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListExperiments => {
            for name in EXPERIMENTS {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config: path } => {
            let text = match read(&path) {
                Ok(t) => t,
                Err(code) => return code,
            };
            let violations = config::validate_text(&text);
            if violations.is_empty() {
                println!("ok");
                ExitCode::SUCCESS
            } else {
                for v in &violations {
                    println!("{v}");
                }
                ExitCode::from(2)
            }
        }
        Command::Run { config: path } => {
            let text = match read(&path) {
                Ok(t) => t,
                Err(code) => return code,
            };
            let violations = config::validate_text(&text);
            if !violations.is_empty() {
                for v in &violations {
                    eprintln!("{v}");
                }
                return ExitCode::from(2);
            }
            let cfg = config::parse(&text).expect("validated").config;
            let result = match threads() {
                Err(msg) => {
                    eprintln!("{msg}");
                    return ExitCode::from(2);
                }
                Ok(Some(n)) => nelson_lab::run_with_threads(&cfg, n),
                Ok(None) => nelson_lab::run(&cfg),
            };
            match result {
                Ok(report) => {
                    for m in &report.metrics {
                        println!("{}", m.line());
                    }
                    println!(
                        "{} {} in {:.1} s, output in {}",
                        if report.passed { "PASSED" } else { "FAILED" },
                        report.experiment,
                        report.duration_s,
                        report.config.output_dir.as_ref().map_or(String::new(), |d| d.display().to_string())
                    );
                    ExitCode::from(if report.passed { 0 } else { 1 })
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
