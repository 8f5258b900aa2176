use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use raccer::Method;
use raccer_cli::commands::{cmd_benchmark, cmd_explain, cmd_train, load_config, summary_table, with_jobs, Overrides, TrainTarget};

#[derive(Parser)]
#[command(name = "raccer", version, about = "Counterfactual explanations for a gridworld policy")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, copied into every component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Raccer,
    BoGen,
    BoTs,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Raccer => Method::Raccer,
            MethodArg::BoGen => Method::BoGen,
            MethodArg::BoTs => Method::BoTs,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Only {
    Policy,
    Autoencoder,
}

#[derive(Subcommand)]
enum Command {
    /// Train the policy and the autoencoder.
    Train {
        /// Directory for policy.json, autoencoder.json and the training report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train one model only.
        #[arg(long, value_enum)]
        only: Option<Only>,
    },
    /// Explain why the policy does not take ACTION in STATE.
    Explain {
        /// Nine integer features, e.g. "[4,0,0,2,0,0,2,0,0]".
        #[arg(long)]
        state: String,
        /// Desired action name.
        #[arg(long)]
        action: String,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Run the methods over a sampled factual dataset.
    Benchmark {
        /// Output directory; `paths.output` when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a single method instead of the configured list.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Record per-query wall times (makes records run-dependent).
        #[arg(long)]
        timings: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
}

/// Write to stdout; a closed pipe is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut o = Overrides { seed: cli.seed, ..Default::default() };
    match cli.command {
        Command::Train { out, only } => {
            let cfg = load_config(cli.config.as_deref(), &o)?;
            let target = match only {
                None => TrainTarget::Both,
                Some(Only::Policy) => TrainTarget::Policy,
                Some(Only::Autoencoder) => TrainTarget::Autoencoder,
            };
            let report = with_jobs(cli.jobs, || cmd_train(cfg, out.as_deref(), target))??;
            emit(&format!("training report written to {}\n", report.display()))?;
        }
        Command::Explain { state, action, method } => {
            o.method = method.map(Method::from);
            let cfg = load_config(cli.config.as_deref(), &o)?;
            let doc = with_jobs(cli.jobs, || cmd_explain(&cfg, &state, &action))??;
            emit(&(serde_json::to_string_pretty(&doc)? + "\n"))?;
        }
        Command::Benchmark { out, method, timings } => {
            let cfg = load_config(cli.config.as_deref(), &o)?;
            let methods = method.map(|m| vec![Method::from(m)]);
            let res = cmd_benchmark(&cfg, out.as_deref(), methods, cli.jobs, timings)?;
            emit(&summary_table(&res.summaries))?;
            emit(&format!("records written to {}\n", res.records.display()))?;
        }
        Command::Serve { port } => {
            o.port = port;
            let cfg = load_config(cli.config.as_deref(), &o)?;
            let mut rt = tokio::runtime::Builder::new_multi_thread();
            if let Some(n) = cli.jobs {
                rt.worker_threads(n.max(1)).max_blocking_threads(n.max(1));
            }
            rt.enable_all().build()?.block_on(raccer_cli::service::serve(cfg, async {
                let _ = tokio::signal::ctrl_c().await;
                log::info!("shutting down");
            }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RACCER_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
