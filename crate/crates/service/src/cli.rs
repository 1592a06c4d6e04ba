//! Command line: `inspect`, `parameterize`, `run`, `report`, `simulate` and
//! `serve`. Exit codes: 0 done, 2 run failed or stopped, 1 usage or input
//! error.

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use petromatch_core::exec::ExecMode;
use petromatch_core::misfit::write_csv;
use petromatch_core::pipeline::{
    advance, checkpoint_view, describe_deck, drive, report_markdown, write_report_bundle, CheckpointDecision, Context,
    DocStore, Interaction, Phase, PipelineState, RunOptions,
};
use petromatch_core::simulator::{Backend, RunnerConfig};

use crate::input::{load_deck, load_observations};
use crate::llm::{HttpChatClient, LlmConfig};
use crate::sessions::{write_atomic, SessionManager};

pub const DATA_DIR_VAR: &str = "PETROMATCH_DATA_DIR";
pub const BIND_ADDR_VAR: &str = "PETROMATCH_BIND_ADDR";
pub const DOCS_DIR_VAR: &str = "PETROMATCH_DOCS_DIR";

#[derive(Parser, Debug)]
#[command(name = "petromatch", version, about = "Agent-driven reservoir history matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Proxy,
    External,
}

#[derive(clap::Args, Debug, Clone)]
pub struct RunArgs {
    /// Simulator input deck.
    #[arg(long)]
    pub deck: PathBuf,
    /// Observed history CSV: `time_days,QTY:WELL,...`.
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long, value_enum, default_value = "proxy")]
    pub backend: BackendKind,
    /// External simulator command with `{deck}` and `{outdir}` placeholders.
    #[arg(long, required_if_eq("backend", "external"))]
    pub runner: Option<String>,
    /// Seconds before an external run is killed.
    #[arg(long, default_value_t = 3600.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Total simulations, overriding the planner's budget.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Approve every checkpoint without asking.
    #[arg(long)]
    pub auto_approve: bool,
    /// Output directory for the state and report bundle.
    #[arg(long, default_value = "petromatch-out")]
    pub out: PathBuf,
    /// Keyword reference directory for lookups.
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Run every loop on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the reservoir description of a deck as JSON.
    Inspect {
        #[arg(long)]
        deck: PathBuf,
    },
    /// Run reviewer, planner and parameterizer; print the parameter manifest.
    Parameterize(RunArgs),
    /// Run the full pipeline and write the report bundle.
    Run(RunArgs),
    /// Rebuild the report bundle from a saved state.json.
    Report {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a deck with the built-in proxy and write its series as CSV.
    Simulate {
        #[arg(long)]
        deck: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        /// Defaults to $PETROMATCH_BIND_ADDR, then 127.0.0.1:8080.
        #[arg(long)]
        bind: Option<SocketAddr>,
        /// Defaults to $PETROMATCH_DATA_DIR, then ./petromatch-data.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        docs: Option<PathBuf>,
    },
}

const DONE: u8 = 0;
const USAGE: u8 = 1;
const NOT_DONE: u8 = 2;

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(USAGE),
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(USAGE)
        }
    }
}

fn dispatch(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Inspect { deck } => {
            let deck = load_deck(&deck)?;
            let description = describe_deck(&deck)?;
            println!("{}", serde_json::to_string_pretty(&description)?);
            Ok(DONE)
        }
        Command::Parameterize(args) => parameterize(&args),
        Command::Run(args) => run(&args),
        Command::Report { state, out } => {
            let state = PipelineState::from_json(&std::fs::read_to_string(&state)?)?;
            if let Some(out) = out {
                write_report_bundle(&state, &out)?;
            }
            print!("{}", report_markdown(&state));
            Ok(if state.phase == Phase::Done { DONE } else { NOT_DONE })
        }
        Command::Simulate { deck, out } => {
            let deck = load_deck(&deck)?;
            let series = Backend::default().run(&deck, "simulate")?;
            std::fs::write(out, write_csv(&series))?;
            Ok(DONE)
        }
        Command::Serve { bind, data_dir, docs } => serve(bind, data_dir, docs),
    }
}

fn backend(args: &RunArgs) -> Backend {
    match args.backend {
        BackendKind::Proxy => Backend::default(),
        BackendKind::External => Backend::External {
            runner: RunnerConfig::new(args.runner.clone().unwrap_or_default(), args.timeout),
            work_root: args.out.join("runs"),
        },
    }
}

fn docs_from(dir: Option<&Path>) -> Result<Option<DocStore>, Failure> {
    let dir = dir
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DOCS_DIR_VAR).map(PathBuf::from));
    Ok(match dir {
        Some(d) => Some(DocStore::load(&d).map_err(|e| Failure(format!("{}: {e}", d.display())))?),
        None => None,
    })
}

fn new_state(args: &RunArgs) -> Result<PipelineState, Failure> {
    let deck = load_deck(&args.deck)?;
    let observations = load_observations(&args.obs)?;
    let options = RunOptions {
        seed: args.seed,
        budget: args.budget,
        exec: if args.sequential {
            ExecMode::Sequential
        } else {
            ExecMode::Parallel
        },
        ..RunOptions::default()
    };
    Ok(PipelineState::new(deck, observations, options))
}

fn save_state(out: &Path, state: &PipelineState) -> Result<(), Failure> {
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("state.json"), state.to_json().as_bytes())?;
    Ok(())
}

fn parameterize(args: &RunArgs) -> Result<u8, Failure> {
    let mut state = new_state(args)?;
    let backend = backend(args);
    let docs = docs_from(args.docs.as_deref())?;
    let mut client = LlmConfig::from_env().map(HttpChatClient::new);
    let mut ctx = Context::new(&backend);
    ctx.docs = docs.as_ref();
    if let Some(c) = client.as_mut() {
        ctx.client = Some(c);
    }
    advance(&mut state, &mut ctx, Some(Phase::CheckpointParams))?;
    save_state(&args.out, &state)?;
    if state.phase == Phase::Failed {
        eprintln!("failed: {}", state.failure.as_deref().unwrap_or("unknown cause"));
        return Ok(NOT_DONE);
    }
    let manifest = state.space.as_ref().map(|s| s.manifest_json()).unwrap_or_default();
    write_atomic(&args.out.join("manifest.json"), manifest.as_bytes())?;
    println!("{manifest}");
    Ok(DONE)
}

/// Ask on stderr/stdin whether to approve a checkpoint.
fn ask_on_terminal(state: &PipelineState) -> CheckpointDecision {
    let mut err = std::io::stderr();
    if let Some(view) = checkpoint_view(state) {
        let _ = writeln!(err, "{}", serde_json::to_string_pretty(&view).unwrap_or_default());
    }
    let _ = write!(err, "approve the {} checkpoint? [y/N] ", state.phase);
    let _ = err.flush();
    let mut line = String::new();
    let _ = std::io::stdin().lock().read_line(&mut line);
    CheckpointDecision {
        edits: Vec::new(),
        approve: matches!(line.trim(), "y" | "Y" | "yes"),
    }
}

fn run(args: &RunArgs) -> Result<u8, Failure> {
    let mut state = new_state(args)?;
    let backend = backend(args);
    let docs = docs_from(args.docs.as_deref())?;
    let mut client = LlmConfig::from_env().map(HttpChatClient::new);
    let out = args.out.clone();
    let mut progress = |s: &PipelineState| {
        if let Some(b) = &s.best {
            eprintln!("evaluation {:>4}: best wNRMSE {:.6}", s.evaluations.len(), b.metric);
        }
        let _ = write_atomic(&out.join("state.json"), s.to_json().as_bytes());
    };
    std::fs::create_dir_all(&args.out)?;
    let mut ctx = Context::new(&backend);
    ctx.docs = docs.as_ref();
    if let Some(c) = client.as_mut() {
        ctx.client = Some(c);
    }
    ctx.on_evaluation = Some(&mut progress);
    let mut handler = ask_on_terminal;
    let mut interaction = if args.auto_approve {
        Interaction::AutoApprove
    } else {
        Interaction::Handler(&mut handler)
    };
    drive(&mut state, &mut ctx, &mut interaction);
    save_state(&args.out, &state)?;
    write_report_bundle(&state, &args.out)?;
    match state.phase {
        Phase::Done => {
            let s = state.summary.as_ref().expect("done runs have a summary");
            println!(
                "done: wNRMSE {:.6} -> {:.6} ({}% improvement) over {} evaluations; report in {}",
                s.initial_metric,
                s.best_metric,
                s.improvement_rounded,
                s.evaluations,
                args.out.display()
            );
            Ok(DONE)
        }
        Phase::Failed => {
            eprintln!("failed: {}", state.failure.as_deref().unwrap_or("unknown cause"));
            Ok(NOT_DONE)
        }
        phase => {
            eprintln!("stopped at {phase}; state saved in {}", args.out.display());
            Ok(NOT_DONE)
        }
    }
}

fn serve(bind: Option<SocketAddr>, data_dir: Option<PathBuf>, docs: Option<PathBuf>) -> Result<u8, Failure> {
    let bind = match bind {
        Some(b) => b,
        None => std::env::var(BIND_ADDR_VAR)
            .ok()
            .filter(|v| !v.is_empty())
            .map(|v| v.parse::<SocketAddr>())
            .transpose()
            .map_err(|e| Failure(format!("{BIND_ADDR_VAR}: {e}")))?
            .unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8080))),
    };
    let data_dir = data_dir
        .or_else(|| std::env::var_os(DATA_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("petromatch-data"));
    let docs = docs_from(docs.as_deref())?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let manager = SessionManager::open(&data_dir, docs, LlmConfig::from_env())?;
        let listener = tokio::net::TcpListener::bind(bind).await?;
        let addr = listener.local_addr()?;
        // Scripts wait for this line to learn the port.
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        tracing::info!(%addr, data_dir = %data_dir.display(), "serving");
        axum::serve(listener, crate::api::router(manager))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok::<_, Failure>(DONE)
    })
}
