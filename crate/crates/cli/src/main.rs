//! `kgl` — batch runner for the geodesic-line laboratory.
//!
//! `kgl run <config>` executes an experiment (a shipped name or a file path),
//! `kgl list` enumerates the shipped experiments, `kgl plot <dir>` re-renders
//! the SVG plots of an artifact directory from its CSV tables.

mod config;
mod experiments;
mod plot;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;
use experiments::{run_experiment, shipped, SHIPPED};

#[derive(Parser)]
#[command(name = "kgl", version, about = "weak geodesic line laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a shipped name or a config file path.
    Run {
        config: String,
        /// Root directory for artifacts (default: ./runs).
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// List the shipped experiments.
    List {
        /// Emit the listing as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Render SVG plots for every CSV artifact in a directory.
    Plot { dir: PathBuf },
}

fn load_config(spec: &str) -> Result<Config, String> {
    let text = if let Some(c) = shipped(spec) {
        c.text.to_string()
    } else {
        fs::read_to_string(spec)
            .map_err(|e| format!("`{spec}` is neither a shipped experiment nor a readable file: {e}"))?
    };
    Config::parse(&text).map_err(|e| e.to_string())
}

fn description(text: &str) -> String {
    Config::parse(text)
        .ok()
        .and_then(|c| c.get("experiment", "description").map(str::to_string))
        .unwrap_or_default()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => {
            let cfg = match load_config(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match run_experiment(&cfg, &out) {
                Ok(outcome) => {
                    for (name, pass) in &outcome.reports {
                        println!("{name}: {}", if *pass { "pass" } else { "fail" });
                    }
                    let expectation = if outcome.expect_pass { "pass" } else { "fail" };
                    println!(
                        "{}: {} (expected {expectation}) -> {}",
                        outcome.name,
                        if outcome.all_pass { "pass" } else { "fail" },
                        outcome.artifact_dir.display()
                    );
                    if outcome.success() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::List { json } => {
            if json {
                let rows: Vec<_> = SHIPPED
                    .iter()
                    .map(|c| {
                        serde_json::json!({
                            "name": c.name,
                            "description": description(c.text),
                        })
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&rows).unwrap());
            } else {
                for c in SHIPPED {
                    println!("{:<22} {}", c.name, description(c.text));
                }
            }
            ExitCode::SUCCESS
        }
        Command::Plot { dir } => match plot::render_directory(&dir) {
            Ok(count) => {
                println!("rendered {count} plots in {}", dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
