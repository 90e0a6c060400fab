//! The `setpiece` command line.
//!
//! Exit codes: 0 on success, 1 on a usage error (usage text on stderr),
//! 2 when the command itself fails.

use std::ffi::OsString;
use std::future::IntoFuture;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use setpiece::checkpoint::{CheckpointError, ModelCheckpoint};
use setpiece::cornergraph::{read_dataset, write_dataset, CornerError, CornerGraph, Team};
use setpiece::gnn::{BaseLayerKind, SymmetryMode};
use setpiece::harness::{ablate, evaluate, train_with_progress, AblationBudget, HarnessError, TrainConfig, Variant, DEFAULT_SEED};
use setpiece::heads::{generate_adjustment, HeadError, SampleOptions, Task};
use setpiece::retrieval::{cosine_baseline, embed, EmbeddingIndex, RetrievalError, Side};
use setpiece::synth::{generate, SynthConfig, SynthError};
use thiserror::Error;

use crate::api::{router, AppState};
use crate::models::{LoadError, ModelSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

pub const PORT_ENV: &str = "SETPIECE_PORT";
pub const CHECKPOINT_DIR_ENV: &str = "SETPIECE_CHECKPOINT_DIR";
pub const CORPUS_ENV: &str = "SETPIECE_CORPUS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Corner(#[from] CornerError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{0}")]
    Input(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Parser)]
#[command(name = "setpiece", version, about = "Corner-kick receiver, shot and generation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labelled dataset.
    Synth(SynthArgs),
    /// Train a model and write its best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled dataset.
    Eval(EvalArgs),
    /// Train and score the ablation ladder.
    Ablate(AblateArgs),
    /// Find corners similar to a query corner.
    Retrieve(RetrieveArgs),
    /// Sample player adjustments towards a desired outcome.
    Generate(GenerateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

fn serde_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown value `{s}`"))
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: HeadError| e.to_string())
}

fn parse_team(s: &str) -> Result<Team, String> {
    s.parse().map_err(|e: CornerError| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

fn parse_outcome(s: &str) -> Result<bool, String> {
    match s {
        "1" | "true" | "shot" => Ok(true),
        "0" | "false" | "no_shot" => Ok(false),
        other => Err(format!("outcome must be 0 or 1, got `{other}`")),
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON file of generator settings; `--n` and `--seed` override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_task)]
    task: Task,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    /// deepsets, mpnn or gatv2.
    #[arg(long, value_parser = serde_name::<BaseLayerKind>)]
    base_layer: Option<BaseLayerKind>,
    /// none, frame_averaging or group_convolution.
    #[arg(long, value_parser = serde_name::<SymmetryMode>)]
    symmetry: Option<SymmetryMode>,
    /// Shot task: train without the receiver as input.
    #[arg(long)]
    unconditional: bool,
    /// Generate task: the team to reposition.
    #[arg(long, value_parser = parse_team)]
    team: Option<Team>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_fraction: Option<f64>,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        let mut c = TrainConfig::for_task(self.task);
        c.steps = self.steps.unwrap_or(c.steps);
        c.seed = self.seed.unwrap_or(c.seed);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.learning_rate = self.lr.unwrap_or(c.learning_rate);
        c.l2 = self.l2.unwrap_or(c.l2);
        c.layer_count = self.layers.unwrap_or(c.layer_count);
        c.base_layer = self.base_layer.unwrap_or(c.base_layer);
        c.symmetry_mode = self.symmetry.unwrap_or(c.symmetry_mode);
        c.eval_every = self.eval_every.unwrap_or(c.eval_every);
        c.eval_fraction = self.eval_fraction.unwrap_or(c.eval_fraction);
        if self.unconditional {
            c.conditional = false;
        }
        if self.team.is_some() {
            c.team_side = self.team;
        }
        c
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated variant names; all of them by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variants: Vec<Variant>,
    #[arg(long, value_delimiter = ',', default_values_t = [42u64, 43, 44])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 600)]
    steps: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    eval_every: usize,
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    split_seed: u64,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    /// Receiver checkpoint whose latents define similarity.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Corpus to search.
    #[arg(long)]
    data: PathBuf,
    /// Corpus corner to use as the query.
    #[arg(long, conflicts_with = "query")]
    query_id: Option<String>,
    /// File whose first record is the query.
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, value_parser = serde_name::<Side>, default_value = "both")]
    side: Side,
    /// Rank by cosine similarity of raw features instead of latents.
    #[arg(long)]
    cosine: bool,
    /// Write every corpus embedding as JSON lines.
    #[arg(long)]
    export: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    generator: PathBuf,
    #[arg(long)]
    receiver: PathBuf,
    #[arg(long)]
    shot: PathBuf,
    /// Dataset file holding the corner.
    #[arg(long)]
    corner: PathBuf,
    /// Record id within `--corner`; the first record by default.
    #[arg(long)]
    id: Option<String>,
    /// 1 to seek a shot, 0 to prevent one.
    #[arg(long, value_parser = parse_outcome, action = clap::ArgAction::Set)]
    outcome: bool,
    #[arg(long, default_value_t = 4)]
    n_samples: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = CHECKPOINT_DIR_ENV)]
    ckpt_dir: PathBuf,
    #[arg(long, env = CORPUS_ENV)]
    corpus: Option<PathBuf>,
    #[arg(long, env = PORT_ENV, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let text = e.render().to_string();
                    let _ = write!(err, "{text}");
                    if !text.contains("Usage:") {
                        let _ = writeln!(err, "\n{}", Cli::command().render_usage());
                    }
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, v: &T) -> Result<(), CliError> {
    let line = serde_json::to_string(v).expect("outputs serialize");
    writeln!(out, "{line}").map_err(io_err("writing output"))
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train_cmd(a, out, err),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Ablate(a) => ablate_cmd(a, out),
        Command::Retrieve(a) => retrieve_cmd(a, out),
        Command::Generate(a) => generate_cmd(a, out),
        Command::Serve(a) => serve_cmd(a, err),
    }
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let base = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_err(format!("reading {}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    let cfg = SynthConfig {
        n_samples: a.n,
        seed: a.seed,
        ..base
    };
    let data = generate(&cfg)?;
    write_dataset(&a.out, &data)?;
    let shots = data.iter().filter(|c| c.shot_taken() == Some(true)).count();
    print_json(
        out,
        &serde_json::json!({"out": a.out, "n": data.len(), "shot_rate": shots as f64 / data.len().max(1) as f64}),
    )
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let cfg = a.config();
    let data = read_dataset(&a.data)?;
    let run = train_with_progress(&cfg, &data, |s| {
        let _ = writeln!(err, "{}", serde_json::to_string(s).expect("snapshots serialize"));
    })?;
    run.checkpoint.save(&a.out)?;
    print_json(
        out,
        &serde_json::json!({
            "task": cfg.task,
            "out": a.out,
            "step": run.checkpoint.step,
            "eval_loss": run.checkpoint.eval_loss,
        }),
    )
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = ModelCheckpoint::load(&a.ckpt)?.to_model()?;
    let data = read_dataset(&a.data)?;
    let m = evaluate(&model, &data)?;
    let rows = [
        ("loss", Some(m.loss)),
        ("top1", m.top1),
        ("top3", m.top3),
        ("precision", m.precision),
        ("recall", m.recall),
        ("f1", m.f1),
    ];
    for (metric, value) in rows.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))) {
        print_json(out, &serde_json::json!({"task": m.task, "n": m.n, "metric": metric, "value": value}))?;
    }
    Ok(())
}

fn ablate_cmd(a: AblateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let data = read_dataset(&a.data)?;
    let variants = if a.variants.is_empty() { Variant::ALL.to_vec() } else { a.variants };
    let budget = AblationBudget {
        steps: a.steps,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        eval_every: a.eval_every,
        split_ratio: a.split_ratio,
        split_seed: a.split_seed,
    };
    let table = ablate(&variants, &data, &a.seeds, &budget)?;
    match a.out {
        Some(p) => std::fs::write(&p, table.to_jsonl()).map_err(io_err(format!("writing {}", p.display()))),
        None => out.write_all(table.to_jsonl().as_bytes()).map_err(io_err("writing output")),
    }
}

fn pick<'a>(data: &'a [CornerGraph], id: Option<&str>, source: &Path) -> Result<&'a CornerGraph, CliError> {
    match id {
        Some(id) => data
            .iter()
            .find(|c| c.id() == id)
            .ok_or_else(|| CliError::Input(format!("{}: no corner with id `{id}`", source.display()))),
        None => data.first().ok_or_else(|| CliError::Input(format!("{}: no corners", source.display()))),
    }
}

fn retrieve_cmd(a: RetrieveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = read_dataset(&a.data)?;
    let query_file = match &a.query {
        Some(p) => read_dataset(p)?,
        None => Vec::new(),
    };
    let query = match (&a.query, &a.query_id) {
        (Some(p), _) => Some(pick(&query_file, None, p)?),
        (None, Some(id)) => Some(pick(&corpus, Some(id), &a.data)?),
        (None, None) if a.export.is_some() && !a.cosine => None,
        (None, None) => return Err(CliError::Input("name a query with --query-id or --query".into())),
    };
    if a.cosine {
        let query = query.expect("checked above");
        return print_json(out, &cosine_baseline(query, &corpus, a.k)?);
    }
    let ckpt = a
        .ckpt
        .as_ref()
        .ok_or_else(|| CliError::Input("latent retrieval needs a receiver checkpoint (--ckpt)".into()))?;
    let model = ModelCheckpoint::load(ckpt)?.to_model()?;
    let index = EmbeddingIndex::build(&corpus, &model, a.side)?;
    if let Some(p) = &a.export {
        std::fs::write(p, index.to_jsonl()).map_err(io_err(format!("writing {}", p.display())))?;
    }
    match query {
        Some(q) => print_json(out, &index.nearest(&embed(q, &model, a.side)?, a.k, true)?),
        None => Ok(()),
    }
}

fn generate_cmd(a: GenerateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let load = |p: &Path| -> Result<_, CliError> { Ok(ModelCheckpoint::load(p)?.to_model()?) };
    let generator = load(&a.generator)?;
    let receiver = load(&a.receiver)?;
    let shot = load(&a.shot)?;
    receiver.expect_task(Task::Receiver)?;
    shot.expect_task(Task::Shot)?;
    let data = read_dataset(&a.corner)?;
    let c = pick(&data, a.id.as_deref(), &a.corner)?;
    let options = SampleOptions {
        n_samples: a.n_samples,
        seed: a.seed,
        noise_scale: a.noise_scale,
    };
    let report = generate_adjustment(c, a.outcome, options, &generator, &receiver, &shot)?;
    print_json(out, &report)
}

fn serve_cmd(a: ServeArgs, err: &mut dyn Write) -> Result<(), CliError> {
    let runtime = tokio::runtime::Runtime::new().map_err(io_err("starting the runtime"))?;
    let addr = SocketAddr::new(a.host, a.port);
    let state = AppState::empty();
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind(addr))
        .map_err(io_err(format!("binding {addr}")))?;
    let _ = writeln!(err, "listening on {addr}; loading {}", a.ckpt_dir.display());
    // Health answers 503 until the snapshot is installed.
    runtime.block_on(async move {
        let app = router(state.clone());
        let server = axum::serve(listener, app).with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        });
        let server = tokio::spawn(server.into_future());
        let loaded = tokio::task::spawn_blocking(move || ModelSet::load_dir(&a.ckpt_dir, a.corpus.as_deref()))
            .await
            .expect("loader task panicked")?;
        state.install(loaded);
        server.await.expect("server task panicked").map_err(io_err("serving"))
    })
}
