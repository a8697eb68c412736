//! Command line for the search-and-answer RL playground: world generation,
//! training, evaluation, episode inspection and metrics export.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use askrl_core::{
    evaluate, export_metrics_csv, gen_world, inspect, load_checkpoint, load_corpus, load_qa,
    write_world, world_vocab, CorpusIndex, F64Checkpoint, F64Trainer, Provenance, TrainConfig,
};

#[derive(Parser)]
#[command(name = "askrl", version, about = "Train tiny token policies that search before they answer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fact world: corpus.jsonl, qa.jsonl, vocab.json, world.json.
    GenWorld(GenWorldArgs),
    /// Run a training job and write metrics plus checkpoints.
    Train(TrainArgs),
    /// Score a checkpoint on a QA file with greedy decoding.
    Eval(EvalArgs),
    /// Sample one episode for a question and dump it with provenance.
    Inspect(InspectArgs),
    /// Convert a run directory's metrics log to CSV.
    ExportMetrics(ExportMetricsArgs),
}

#[derive(Args)]
struct GenWorldArgs {
    /// World seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the world files.
    #[arg(long)]
    out: PathBuf,
    /// Number of entities.
    #[arg(long, default_value_t = 30)]
    entities: usize,
    /// Number of relations (at most 8).
    #[arg(long, default_value_t = 4)]
    relations: usize,
    /// Number of single-hop questions.
    #[arg(long = "single-hop", default_value_t = 60)]
    single_hop: usize,
    /// Number of two-hop questions.
    #[arg(long = "two-hop", default_value_t = 20)]
    two_hop: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file (key = value lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config overrides as key=value, repeatable; applied after the file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Resume from this checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// QA file (jsonl) to score.
    #[arg(long)]
    data: PathBuf,
    /// Corpus to search; defaults to the one in the checkpoint config.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint holding the policy.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Question to roll out.
    #[arg(long)]
    question: String,
    /// Sampling seed; defaults to the checkpoint config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExportMetricsArgs {
    /// Run directory containing metrics.jsonl.
    #[arg(long)]
    run: PathBuf,
    /// Destination CSV path.
    #[arg(long)]
    csv: PathBuf,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .with_context(|| format!("override '{s}' is not of the form key=value"))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn cmd_gen_world(args: GenWorldArgs) -> Result<()> {
    let world = gen_world(args.seed, args.entities, args.relations, args.single_hop, args.two_hop)?;
    write_world(&args.out, &world)?;
    let vocab = world_vocab(&world);
    println!(
        "wrote world to {}: {} entities, {} relations, {} facts, {} questions, vocab {}",
        args.out.display(),
        world.entities.len(),
        world.relations.len(),
        world.facts.len(),
        world.qa.len(),
        vocab.len()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let overrides = parse_overrides(&args.overrides)?;
    let mut trainer: F64Trainer = match &args.resume {
        Some(path) => {
            log::info!("resuming from {}", path.display());
            F64Trainer::resume(path, &overrides)?
        }
        None => {
            let mut cfg = match &args.config {
                Some(path) => TrainConfig::from_file(path)
                    .with_context(|| format!("loading config {}", path.display()))?,
                None => TrainConfig::default(),
            };
            for (k, v) in &overrides {
                cfg.set_key(k, v)?;
            }
            F64Trainer::new(cfg)?
        }
    };
    log::info!(
        "training method={} steps={}..{} out={}",
        trainer.config().method,
        trainer.step(),
        trainer.config().total_steps,
        trainer.config().out_dir
    );
    while trainer.step() < trainer.config().total_steps {
        let rows = trainer.run_steps(1)?;
        for row in &rows {
            println!("{}", serde_json::to_string(row)?);
        }
    }
    let last = trainer.write_checkpoint()?;
    println!("done at step {}; latest checkpoint {}", trainer.step(), last.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt: F64Checkpoint = load_checkpoint(&args.checkpoint)?;
    let corpus_path = args
        .corpus
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or_else(|| ckpt.config.corpus_path.clone());
    let docs = load_corpus(&corpus_path)?;
    let index = CorpusIndex::build(docs, ckpt.config.bm25_k1, ckpt.config.bm25_b)?;
    let qa = load_qa(&args.data)?;
    let report = evaluate(
        &ckpt.policy,
        &ckpt.vocab,
        &index,
        &qa,
        &ckpt.config.rollout_settings(),
        ckpt.config.seed,
    )?;
    for item in &report.items {
        println!("{}", serde_json::to_string(item)?);
    }
    println!("{}", serde_json::to_string(&serde_json::json!({ "mean_em": report.mean_em }))?);
    Ok(())
}

fn provenance_label(p: Provenance) -> &'static str {
    match p {
        Provenance::Prompt => "prompt",
        Provenance::Generated => "generated",
        Provenance::Retrieved => "retrieved",
        Provenance::Injected => "injected",
    }
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let ckpt: F64Checkpoint = load_checkpoint(&args.checkpoint)?;
    let docs = load_corpus(&ckpt.config.corpus_path)?;
    let index = CorpusIndex::build(docs, ckpt.config.bm25_k1, ckpt.config.bm25_b)?;
    let report = inspect(
        &ckpt.policy,
        &ckpt.vocab,
        &index,
        &args.question,
        &ckpt.config.rollout_settings(),
        ckpt.config.temperature,
        ckpt.config.top_p,
        args.seed.unwrap_or(ckpt.config.seed),
    );
    // Human-readable pass: one line per provenance run.
    let mut i = 0;
    while i < report.tokens.len() {
        let prov = report.tokens[i].provenance;
        let mut words = Vec::new();
        while i < report.tokens.len() && report.tokens[i].provenance == prov {
            words.push(report.tokens[i].token.as_str());
            i += 1;
        }
        println!("[{:>9}] {}", provenance_label(prov), words.join(" "));
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_export_metrics(args: ExportMetricsArgs) -> Result<()> {
    let rows = export_metrics_csv(&args.run, &args.csv)?;
    println!("wrote {} rows to {}", rows, args.csv.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenWorld(args) => cmd_gen_world(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Inspect(args) => cmd_inspect(args),
        Command::ExportMetrics(args) => cmd_export_metrics(args),
    }
}
