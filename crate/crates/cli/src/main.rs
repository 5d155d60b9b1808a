use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use microcrowd_core::bundle::{Bundle, LocalService};
use microcrowd_core::model::HttpMethod;
use microcrowd_core::Value;
use microcrowd_service::{ApiConfig, HttpServer, Service};
use microcrowd_sim::{compare_runs, run_scenario, Comparison, Outcome, RunOptions, Scenario, Wire};

#[derive(Parser, Debug)]
#[command(name = "microcrowd", version, about = "Behavior-driven microtask programming service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the HTTP service
    Serve {
        /// Service config file (canonical JSON)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured listen address
        #[arg(long)]
        listen: Option<String>,
    },
    /// Simulated crowd runs
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Inspect and serve project bundles
    Bundle {
        #[command(subcommand)]
        command: BundleCommand,
    },
}

#[derive(Subcommand, Debug)]
enum SimCommand {
    /// Run a scenario; exits 0 only when the project completes
    Run {
        /// Scenario file, or the name of a built-in scenario
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for events.log, report.json and bundle.json
        #[arg(long)]
        out: Option<PathBuf>,
        /// Sets every worker model's accuracy
        #[arg(long)]
        accuracy: Option<f64>,
        /// Call the router in process instead of over HTTP
        #[arg(long)]
        direct: bool,
    },
    /// Compare two event logs; exits 0 only when identical
    Compare { a: PathBuf, b: PathBuf },
    /// List the built-in scenarios
    List,
}

#[derive(Subcommand, Debug)]
enum BundleCommand {
    /// Recompute a bundle's content hash
    Verify { file: PathBuf },
    /// Run every shipped assertion against the bundle
    Check { file: PathBuf },
    /// Call one endpoint of the bundle
    Call {
        file: PathBuf,
        method: String,
        path: String,
        /// JSON list of positional args or object of named args
        #[arg(long, default_value = "[]")]
        args: String,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Serve { config, listen } => serve(config, listen),
        Command::Sim { command } => sim(command),
        Command::Bundle { command } => bundle(command),
    }
}

fn serve(config: Option<PathBuf>, listen: Option<String>) -> Result<ExitCode> {
    let mut config = match config {
        Some(path) => ApiConfig::load(&path).with_context(|| format!("loading {}", path.display()))?,
        None => ApiConfig::default(),
    };
    if let Some(addr) = listen {
        config.listen_address = addr;
    }
    let addr = config.listen_address.clone();
    let threads = config.http_threads;
    let service = Arc::new(Service::new(config).context("opening the service")?);
    let server = HttpServer::start(service, &addr, threads).with_context(|| format!("binding {addr}"))?;
    println!("listening on {}", server.base_url());
    server.join();
    Ok(ExitCode::SUCCESS)
}

fn sim(command: SimCommand) -> Result<ExitCode> {
    match command {
        SimCommand::Run { scenario, seed, out, accuracy, direct } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(p) = accuracy {
                s = s.with_accuracy(p);
            }
            let options = RunOptions { wire: if direct { Wire::Direct } else { Wire::Http }, out_dir: out, seed };
            let run = run_scenario(&s, &options)?;
            println!("{}", run.report.to_canonical());
            Ok(if run.report.outcome == Outcome::Completed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        SimCommand::Compare { a, b } => match compare_runs(&a, &b)? {
            Comparison::Identical => {
                println!("identical");
                Ok(ExitCode::SUCCESS)
            }
            Comparison::Diverges { seq } => {
                println!("diverges at seq {seq}");
                Ok(ExitCode::FAILURE)
            }
        },
        SimCommand::List => {
            for name in microcrowd_sim::scenario::BUILTIN {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_bundle(file: &PathBuf) -> Result<Bundle> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    Ok(Bundle::load(&text)?)
}

fn bundle(command: BundleCommand) -> Result<ExitCode> {
    match command {
        BundleCommand::Verify { file } => {
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            match Bundle::load(&text) {
                Ok(b) => {
                    println!("ok {}", b.manifest.content_hash);
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    println!("invalid: {e}");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        BundleCommand::Check { file } => {
            let (passed, total) = LocalService::new(load_bundle(&file)?)?.self_check();
            println!("{passed}/{total} shipped assertions pass");
            Ok(if passed == total { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        BundleCommand::Call { file, method, path, args } => {
            let method: HttpMethod = method.parse().map_err(anyhow::Error::msg)?;
            let args = Value::parse(&args).context("--args is not JSON")?;
            if !matches!(args, Value::List(_) | Value::Object(_)) {
                bail!("--args must be a JSON list or object");
            }
            let local = LocalService::new(load_bundle(&file)?)?;
            println!("{}", local.call(method, &path, &args)?.canonical());
            Ok(ExitCode::SUCCESS)
        }
    }
}
