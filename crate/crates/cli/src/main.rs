use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use routerag::corpus::{load_corpus_dir, validate_graph};
use routerag::embedding::{EmbeddingProvider, HashEmbedder, HttpEmbedder};
use routerag::eval::{report_summary, run_benchmark, sim_train_cmd, BenchmarkConfig, SimTrainConfig};
use routerag::orchestrator::EpisodeConfig;
use routerag::policy::HttpPolicyClient;
use routerag::retrieval::RetrieverConfig;
use routerag::reward::Stage;
use routerag::trainer::{SimEnv, TrainConfig};

/// Multi-turn hybrid graph/passage retrieval for question answering.
#[derive(Debug, Parser)]
#[command(name = "routerag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Answer every dataset question through the policy endpoint and write a report.
    Run(RunArgs),
    /// Print the summary table of a report and emit plot-ready series.
    Report(ReportArgs),
    /// Train the tabular routing policy in the simulator over several seeds.
    SimTrain(SimTrainArgs),
    /// Load a corpus directory and check its graph.
    ValidateCorpus(ValidateArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Directory with passages.jsonl, embeddings.jsonl and optionally graph.jsonl.
    #[arg(long)]
    corpus: PathBuf,
    /// Line-delimited {"id", "question", "golden_answers"} file.
    #[arg(long)]
    dataset: PathBuf,
    /// Base URL of the completions endpoint (key from ROUTERAG_POLICY_API_KEY).
    #[arg(long)]
    endpoint: String,
    #[arg(long, default_value = "routerag-policy")]
    model: String,
    #[arg(long, default_value_t = 4)]
    budget: usize,
    #[arg(long, default_value_t = 3)]
    topk: usize,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    out: PathBuf,
    /// Embedding endpoint (key from ROUTERAG_EMBED_API_KEY). Without it the
    /// offline hash embedder is used.
    #[arg(long)]
    embed_endpoint: Option<String>,
    /// Dimension of the offline hash embedder; must match the corpus vectors.
    #[arg(long, default_value_t = 128)]
    hash_dim: usize,
    #[arg(long, default_value_t = 0)]
    hash_seed: u64,
    /// Initial retry delay for the policy endpoint, in milliseconds.
    #[arg(long, default_value_t = 250)]
    retry_backoff_ms: u64,
    /// Omit timestamps and wall-clock timings so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write summary.tsv and series_{dataset}.tsv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimTrainArgs {
    #[arg(long, default_value_t = 20)]
    stage1_steps: usize,
    #[arg(long, default_value_t = 20)]
    stage2_steps: usize,
    /// Seeds 0..N are trained.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Last stage to train: 1 or 2.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    corpus: PathBuf,
}

fn run(args: RunArgs) -> Result<()> {
    let policy = HttpPolicyClient::from_env(&args.endpoint, &args.model)?;
    let embedder: Arc<dyn EmbeddingProvider> = match &args.embed_endpoint {
        Some(url) => Arc::new(HttpEmbedder::from_env(url)?),
        None => {
            if args.hash_dim == 0 {
                bail!("--hash-dim must be positive");
            }
            Arc::new(HashEmbedder::new(args.hash_dim, args.hash_seed))
        }
    };
    let config = BenchmarkConfig {
        corpus_dir: args.corpus,
        dataset_path: args.dataset,
        episode: EpisodeConfig {
            budget: args.budget,
            top_k: args.topk,
            backoff: Duration::from_millis(args.retry_backoff_ms),
            ..EpisodeConfig::default()
        },
        retriever: RetrieverConfig {
            top_k: args.topk,
            ..RetrieverConfig::default()
        },
        parallelism: args.parallel.max(1),
        deterministic: args.deterministic,
    };
    let report = run_benchmark(&config, &policy, embedder)?;
    report.save(&args.out)?;
    print!("{}", routerag::eval::render_summary_table(&report.aggregates));
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn sim_train(args: SimTrainArgs) -> Result<()> {
    let final_stage = Stage::try_from(args.stage)?;
    let mut train = TrainConfig::default();
    if let Some(lr) = args.learning_rate {
        train.learning_rate = lr;
    }
    let config = SimTrainConfig {
        env: SimEnv::default(),
        train,
        final_stage,
        stage1_steps: args.stage1_steps,
        stage2_steps: args.stage2_steps,
        seeds: args.seeds,
    };
    let summary = sim_train_cmd(&config, &args.out)?;
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("seeds: {}", summary.seeds.len());
    println!("median cost reduction: {}", show(summary.median_cost_reduction));
    println!("median accuracy delta: {}", show(summary.median_accuracy_delta));
    println!(
        "median turns: {} -> {}",
        show(summary.median_turns_before),
        show(summary.median_turns_after)
    );
    Ok(())
}

fn validate_corpus(args: ValidateArgs) -> Result<bool> {
    let store = load_corpus_dir(&args.corpus)
        .with_context(|| format!("loading corpus from {}", args.corpus.display()))?;
    println!("{}", store.counts());
    let Some(graph) = store.graph() else {
        println!("no graph: passage retrieval only");
        return Ok(true);
    };
    let report = validate_graph(graph, &store);
    for finding in &report.findings {
        println!("{finding}");
    }
    println!("findings: {}", report.findings.len());
    Ok(report.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args).map(|()| true),
        Command::Report(args) => report_summary(&args.input, args.out_dir.as_deref())
            .map(|table| print!("{table}"))
            .map(|()| true)
            .map_err(Into::into),
        Command::SimTrain(args) => sim_train(args).map(|()| true),
        Command::ValidateCorpus(args) => validate_corpus(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
