use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use persona::data::TaskId;
use persona::experiment::{
    compare, emit_report, load_report, profile_size_analysis, run_task, BackendConfig,
    ExperimentError, Mode, ReportFormat, RunConfig, RunPaths,
};
use persona::gateway::MockScript;
use persona::lora::{LoraConfig, ToyModelConfig};
use persona::metrics::MetricName;
use persona::retrieval::RetrieverKind;
use persona::store::AdapterStore;

#[derive(Parser)]
#[command(
    name = "persona",
    version,
    about = "Per-user LLM personalization over LaMP datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one personalization mode over a dataset and write reports.
    Run(Box<RunArgs>),
    /// Correlate profile size with per-user improvement over a baseline.
    Analyze(AnalyzeArgs),
    /// Inspect an adapter store.
    Store {
        #[command(subcommand)]
        command: StoreCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Remote,
    Toy,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    task: String,
    #[arg(long, default_value = "none")]
    mode: String,
    #[arg(long, default_value = "bm25")]
    retriever: String,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    rank: usize,
    #[arg(long, default_value_t = 32.0)]
    alpha: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "toy")]
    backend: BackendKind,
    /// Model name sent to the remote backend.
    #[arg(long, default_value = "flan-t5-base")]
    model: String,
    /// Prompt-prefix → response JSON table for the mock backend.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    golds: PathBuf,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Zero latencies so reports are byte-reproducible.
    #[arg(long)]
    deterministic: bool,
    /// Report formats to write (json, csv, md).
    #[arg(long, value_delimiter = ',', default_value = "json,md")]
    format: Vec<String>,
    /// Earlier JSON report to compare against.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    personalized: PathBuf,
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    metric: Option<String>,
}

#[derive(Subcommand)]
enum StoreCommand {
    /// Print a storage report as JSON.
    Stats {
        #[arg(long)]
        store: PathBuf,
        /// Population sizes to extrapolate to.
        #[arg(long, value_delimiter = ',', default_value = "1000000")]
        users: Vec<u64>,
    },
}

fn config_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(e.to_string())
}

fn build_config(a: &RunArgs) -> Result<RunConfig, ExperimentError> {
    let task: TaskId = a.task.parse().map_err(config_err)?;
    let mode: Mode = a.mode.parse().map_err(config_err)?;
    let backend = match a.backend {
        BackendKind::Mock => BackendConfig::Mock {
            script: a
                .mock_script
                .as_deref()
                .map(MockScript::load)
                .transpose()
                .map_err(config_err)?
                .unwrap_or_default(),
        },
        BackendKind::Remote => BackendConfig::Remote {
            model: a.model.clone(),
            endpoint: None,
        },
        BackendKind::Toy => BackendConfig::Toy {
            model: ToyModelConfig::default(),
            seed: a.seed,
        },
    };
    let mut cfg = RunConfig::new(task, mode, backend);
    cfg.retriever = a.retriever.parse::<RetrieverKind>().map_err(config_err)?;
    cfg.k = a.k;
    cfg.lora = LoraConfig::with_rank(a.rank);
    cfg.lora.alpha = a.alpha;
    cfg.train.epochs = a.epochs;
    cfg.train.learning_rate = a.lr;
    cfg.seed = a.seed;
    cfg.workers = a.workers;
    cfg.decode.deterministic = a.deterministic;
    cfg.paths = RunPaths {
        data: Some(a.data.clone()),
        golds: Some(a.golds.clone()),
        store: a.store.clone(),
        out: Some(a.out.clone()),
    };
    Ok(cfg)
}

fn run(a: RunArgs) -> Result<(), ExperimentError> {
    let formats = a
        .format
        .iter()
        .map(|f| f.parse::<ReportFormat>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(config_err)?;
    let cfg = build_config(&a)?;
    let mut report = run_task(&cfg)?;
    if let Some(path) = &a.baseline {
        report.comparison = Some(compare(&report, &load_report(path)?));
    }
    for f in formats {
        let path = emit_report(&report, f, &a.out)?;
        eprintln!("wrote {}", path.display());
    }
    for m in &report.aggregates {
        println!("{} {} {:.4}", m.name, m.direction.arrow(), m.value);
    }
    if !report.errors.is_empty() {
        eprintln!(
            "{} of {} users failed",
            report.errors.len(),
            report.errors.len() + report.users.len()
        );
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<(), ExperimentError> {
    let personalized = load_report(&a.personalized)?;
    let baseline = load_report(&a.baseline)?;
    let metric = match &a.metric {
        Some(m) => m.parse::<MetricName>().map_err(config_err)?,
        None => MetricName::primary(personalized.task),
    };
    let r = profile_size_analysis(&personalized, &baseline, metric)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&r).expect("report serializes")
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run(a) => run(*a),
        Command::Analyze(a) => analyze(a),
        Command::Store {
            command: StoreCommand::Stats { store, users },
        } => {
            let store = AdapterStore::open(&store)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&store.storage_report(&users))
                    .expect("report serializes")
            );
            Ok(())
        }
    }
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(e) => {
            let code = e.exit_code();
            eprintln!("error: {e}");
            Ok(ExitCode::from(code as u8))
        }
    }
}
