use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tgm_eval::mockstub::{serve, BehaviorScript};
use tgm_eval::pipeline::{self, HarnessConfig, HarnessError, ReportRequest};
use tgm_eval::report::ReportFormat;
use tgm_eval::tgm_client::FetchMode;

#[derive(Parser)]
#[command(name = "tgm-eval", version)]
#[command(about = "Evaluate the template generation step of SPARQL question answering systems")]
struct Cli {
    /// Harness configuration (TOML)
    #[arg(long, global = true, env = "TGM_EVAL_CONFIG", default_value = "tgm-eval.toml")]
    config: PathBuf,

    /// Overrides `cache_path` from the config
    #[arg(long, global = true, env = "TGM_EVAL_CACHE_PATH")]
    cache_path: Option<PathBuf>,

    /// Overrides `output_dir` from the config
    #[arg(long, global = true, env = "TGM_EVAL_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,

    /// Overrides `concurrency` from the config
    #[arg(long, global = true)]
    concurrency: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Record,
    Replay,
    Passthrough,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Load datasets, remove duplicates, normalize and classify gold queries
    Ingest,
    /// Send every corpus question to every endpoint and cache the outcomes
    Fetch {
        #[arg(long, value_enum, default_value = "record")]
        mode: Mode,
    },
    /// Apply the six criteria to cached outcomes and write verdict files
    Evaluate,
    /// Aggregate verdicts into report tables
    Report {
        /// Output formats, comma separated
        #[arg(long, value_enum, value_delimiter = ',', default_value = "text")]
        format: Vec<Format>,
        /// Dump false cases whose first error is in this list
        /// (e.g. `disconnected-target,wrong-range` or `all`)
        #[arg(long)]
        dump_false_cases: Option<String>,
    },
    /// Run a scripted mock TGM service until interrupted
    ServeMock {
        /// Behavior script (JSON)
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

fn load_config(cli: &Cli) -> Result<HarnessConfig> {
    let mut config = HarnessConfig::load(&cli.config)?;
    if let Some(p) = &cli.cache_path {
        config.cache_path = p.clone();
    }
    if let Some(p) = &cli.output_dir {
        config.output_dir = p.clone();
    }
    if let Some(n) = cli.concurrency {
        config.concurrency = n;
        config.validate()?;
    }
    Ok(config)
}

async fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest => {
            let config = load_config(&cli)?;
            let summary = pipeline::ingest(&config)?;
            for (name, reason) in &summary.excluded {
                eprintln!("excluded {name}: {reason}");
            }
            let s = &summary.stats;
            println!(
                "{} questions: {} yes/no ({}), {} factoid, {} range-specified ({} of factoid); {} duplicates removed, {} skipped",
                s.total,
                s.yes_no,
                s.yes_no_ratio().percent_or_na(),
                s.factoid,
                s.range_specified,
                s.range_ratio_of_factoid().percent_or_na(),
                s.duplicates,
                s.skipped.len()
            );
            println!("wrote {}", config.corpus_path().display());
        }
        Command::Fetch { mode } => {
            let config = load_config(&cli)?;
            let mode = match mode {
                Mode::Record => FetchMode::Record,
                Mode::Replay => FetchMode::Replay,
                Mode::Passthrough => FetchMode::Passthrough,
            };
            for (endpoint, n) in pipeline::fetch(&config, mode).await? {
                println!("{endpoint}: {n} outcomes");
            }
        }
        Command::Evaluate => {
            let config = load_config(&cli)?;
            for path in pipeline::evaluate(&config).await? {
                println!("wrote {}", path.display());
            }
        }
        Command::Report {
            format,
            dump_false_cases,
        } => {
            let config = load_config(&cli)?;
            let request = ReportRequest {
                formats: format
                    .iter()
                    .map(|f| match f {
                        Format::Text => ReportFormat::Text,
                        Format::Json => ReportFormat::Json,
                        Format::Csv => ReportFormat::Csv,
                    })
                    .collect(),
                dump: dump_false_cases.as_deref().map(pipeline::parse_criteria).transpose()?,
            };
            for path in pipeline::report(&config, &request)? {
                if path.extension().is_some_and(|e| e == "txt") {
                    print!("{}", std::fs::read_to_string(&path)?);
                }
                println!("wrote {}", path.display());
            }
        }
        Command::ServeMock { script, port, host } => {
            let text = std::fs::read_to_string(script)
                .map_err(|e| HarnessError::Input(format!("cannot read {}: {e}", script.display())))?;
            let script: BehaviorScript = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Input(format!("{}: {e}", script.display())))?;
            let handle = serve(script, SocketAddr::new(*host, *port))
                .await
                .map_err(|e| HarnessError::Input(e.to_string()))?;
            println!("mock TGM listening on {}", handle.url());
            tokio::signal::ctrl_c().await.context("waiting for ctrl-c")?;
            handle.shutdown().await?;
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(1, HarnessError::exit_code);
            ExitCode::from(code)
        }
    }
}
