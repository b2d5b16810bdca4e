//! `exemplar`: run explainability experiments from a config file.
//!
//! Exit status: 0 on success, 1 for configuration errors, 2 when a pipeline
//! stage fails.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use exemplar_core::pipeline::{self, RunConfig};
use exemplar_core::{Error, Method};

#[derive(Parser)]
#[command(name = "exemplar", version, about = "Evaluate example-based explainers")]
struct Cli {
    /// Worker threads for parallel stages; results do not depend on it.
    #[arg(long, global = true, env = "EXEMPLAR_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and print it with every default filled in.
    Validate { config: PathBuf },
    /// Execute a config and write reports.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write popularity and popularity-vs-loss CSVs for a run directory.
    ExportPlots {
        dir: PathBuf,
        /// Number of most popular examples to list per explainer.
        #[arg(long, default_value_t = 2)]
        top_k: usize,
        /// Restrict to these explanation sizes.
        #[arg(long = "n", value_delimiter = ',')]
        sizes: Vec<usize>,
    },
    /// Score externally produced explanations.
    ExplainFile {
        explanations: PathBuf,
        dataset: PathBuf,
        config: PathBuf,
        /// Method name recorded in the report.
        #[arg(long)]
        method: Option<Method>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const CONFIG_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

fn config_failure(e: Error) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(CONFIG_ERROR)
}

fn runtime_failure(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(RUNTIME_ERROR)
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let mut out = io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if e.kind() != io::ErrorKind::BrokenPipe {
            eprintln!("error: stdout: {e}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("--workers must be at least 1");
            return ExitCode::from(CONFIG_ERROR);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return runtime_failure(e);
        }
    }

    match cli.command {
        Command::Validate { config } => match RunConfig::load(&config) {
            Ok(cfg) => {
                emit(&cfg.to_toml());
                ExitCode::SUCCESS
            }
            Err(e) => config_failure(e),
        },
        Command::Run { config, out } => {
            let mut cfg = match RunConfig::load(&config) {
                Ok(cfg) => cfg,
                Err(e) => return config_failure(e),
            };
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            match pipeline::run(&cfg) {
                Ok(outcome) => {
                    for w in &outcome.summary.warnings {
                        eprintln!("warning: {w}");
                    }
                    let mut text = outcome.summary.to_table();
                    for (k, r) in outcome.summary.rules.iter().enumerate() {
                        let v = &r.verification;
                        text.push_str(&format!(
                            "rule {}: acc {:.3}  LL_i {:.3} -> {:.3}  LL_u {:.3} -> {:.3}  Ps_i {:.1}%  Ps_u {:.1}%\n",
                            k + 1,
                            v.accuracy_on_rule,
                            v.ll_intervened_before,
                            v.ll_intervened_after,
                            v.ll_untouched_before,
                            v.ll_untouched_after,
                            v.ps_intervened,
                            v.ps_untouched
                        ));
                    }
                    text.push_str(&format!("wrote {}\n", outcome.dir.display()));
                    emit(&text);
                    ExitCode::SUCCESS
                }
                Err(e) => runtime_failure(e),
            }
        }
        Command::ExportPlots { dir, top_k, sizes } => {
            if top_k == 0 {
                eprintln!("--top-k must be at least 1");
                return ExitCode::from(CONFIG_ERROR);
            }
            let sizes = (!sizes.is_empty()).then_some(sizes.as_slice());
            match pipeline::export_plots(&dir, top_k, sizes) {
                Ok(files) => {
                    let listing: String = files.iter().map(|f| format!("{}\n", f.display())).collect();
                    emit(&listing);
                    ExitCode::SUCCESS
                }
                Err(e) => runtime_failure(e),
            }
        }
        Command::ExplainFile {
            explanations,
            dataset,
            config,
            method,
            out,
        } => {
            let cfg = match RunConfig::load(&config) {
                Ok(cfg) => cfg,
                Err(e) => return config_failure(e),
            };
            let report = match pipeline::explain_file(&explanations, &dataset, &cfg, method) {
                Ok(r) => r,
                Err(e) => return runtime_failure(e),
            };
            let mut text = match serde_json::to_string_pretty(&report) {
                Ok(t) => t,
                Err(e) => return runtime_failure(e),
            };
            text.push('\n');
            match out {
                Some(path) => match fs::write(&path, text) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => runtime_failure(format!("{}: {e}", path.display())),
                },
                None => {
                    emit(&text);
                    ExitCode::SUCCESS
                }
            }
        }
    }
}
