//! `medrag`: ingest, embed, index, run, eval, report and chat.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use medrag_core::corpus::{session_stats, Corpus};
use medrag_core::metrics::MetricReport;
use medrag_core::pipeline::{
    chat_repl, embed_corpus, evaluate_files, evaluate_run, run_experiment, write_report, Pipeline, PipelineError,
    ProviderKind, Providers, RunConfig, REPORT_FILE,
};
use medrag_core::vector::VectorStore;

#[derive(Parser)]
#[command(
    name = "medrag",
    version,
    about = "Retrieval-augmented medical dialogue runs and evaluation"
)]
struct Cli {
    /// JSON run config; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    providers: Option<ProviderChoice>,
    /// Sidecar base URL for `--providers http`.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Overrides the config's corpus path.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "lowercase")]
enum ProviderChoice {
    Mock,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and print split statistics.
    Ingest {
        /// Corpus JSONL; defaults to the config's corpus.
        input: Option<PathBuf>,
    },
    /// Write history, complaint and recent-utterance vectors to --out.
    Embed,
    /// Build the symptom index and write it to --out.
    Index,
    /// Run the pipeline over the evaluation splits into the --out directory.
    Run,
    /// Score a run directory, or a prediction file against a reference file.
    Eval {
        #[arg(long, conflicts_with_all = ["pred", "gold"])]
        run: Option<PathBuf>,
        #[arg(long, requires = "gold")]
        pred: Option<PathBuf>,
        #[arg(long, requires = "pred")]
        gold: Option<PathBuf>,
    },
    /// Print a report.json as a table.
    Report { path: PathBuf },
    /// Interactive chat; the transcript goes to --out (default transcript.json).
    Chat,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<PipelineError>())
                .map_or(2, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(kind) = cli.providers {
        config.providers.kind = match kind {
            ProviderChoice::Mock => ProviderKind::Mock,
            ProviderChoice::Http => ProviderKind::Http,
        };
    }
    if let Some(endpoint) = &cli.endpoint {
        config.providers.endpoint = Some(endpoint.clone());
    }
    if let Some(corpus) = &cli.corpus {
        config.corpus = corpus.clone();
    }
    Ok(config)
}

fn require_out(cli: &Cli) -> Result<&Path, PipelineError> {
    cli.out
        .as_deref()
        .ok_or_else(|| PipelineError::Config("--out is required for this command".into()))
}

fn write_store(path: &Path, store: &VectorStore) -> anyhow::Result<()> {
    let mut f = BufWriter::new(fs::File::create(path).with_context(|| path.display().to_string())?);
    store.write_jsonl(&mut f)?;
    f.flush()?;
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let config = resolve_config(&cli)?;
    match &cli.command {
        Command::Ingest { input } => {
            let path = input.clone().unwrap_or_else(|| config.corpus.clone());
            if path.as_os_str().is_empty() {
                return Err(PipelineError::Config("no corpus given".into()).into());
            }
            let corpus = Corpus::load(&path).map_err(PipelineError::from)?;
            let stats = session_stats(&corpus).map_err(PipelineError::from)?;
            let text = serde_json::to_string_pretty(&stats)?;
            if let Some(out) = &cli.out {
                fs::create_dir_all(out)?;
                let mut buf = Vec::new();
                corpus.write_jsonl(&mut buf)?;
                fs::write(out.join("corpus.jsonl"), buf)?;
                fs::write(out.join("stats.json"), format!("{text}\n"))?;
            }
            println!("{text}");
        }
        Command::Embed => {
            config.validate()?;
            let out = require_out(&cli)?;
            let corpus = Corpus::load(&config.corpus).map_err(PipelineError::from)?;
            let vectors = embed_corpus(&config, &corpus, &Providers::from_config(&config))?;
            fs::create_dir_all(out)?;
            for (name, store) in [
                ("history.jsonl", &vectors.history),
                ("complaint.jsonl", &vectors.complaint),
                ("recent.jsonl", &vectors.recent),
            ] {
                write_store(&out.join(name), store)?;
                println!("{}: {} vectors", out.join(name).display(), store.len());
            }
        }
        Command::Index => {
            let out = require_out(&cli)?;
            let config = RunConfig { index: None, ..config };
            let corpus = Corpus::load(&config.corpus).map_err(PipelineError::from)?;
            let pipeline = Pipeline::new(config.clone(), corpus, Providers::from_config(&config))?;
            let index = pipeline
                .index
                .ok_or_else(|| PipelineError::Config("corpus has no training sessions to index".into()))?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            index.save(out).map_err(PipelineError::from)?;
            println!(
                "{}: k = {}, objective = {:.6}",
                out.display(),
                index.k(),
                index.kmeans.objective
            );
        }
        Command::Run => {
            let out = require_out(&cli)?;
            let summary = run_experiment(&config, Providers::from_config(&config), out)?;
            eprintln!(
                "{}: {} processed, {} resumed, {} skipped",
                summary.dir.display(),
                summary.processed,
                summary.resumed,
                summary.skipped
            );
            print_report(&summary.report);
        }
        Command::Eval { run, pred, gold } => {
            let providers = Providers::from_config(&config);
            let report = match (run, pred, gold) {
                (Some(dir), _, _) => evaluate_run(dir, &config, providers.classifier.as_ref())?,
                (None, Some(pred), Some(gold)) => evaluate_files(pred, gold, &config, providers.classifier.as_ref())?,
                _ => return Err(PipelineError::Config("eval needs --run or --pred with --gold".into()).into()),
            };
            match &cli.out {
                Some(out) => {
                    fs::create_dir_all(out)?;
                    write_report(&out.join(REPORT_FILE), &report)?;
                    print_report(&report);
                }
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::Report { path } => {
            let text = fs::read_to_string(path).map_err(|e| PipelineError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            let report: MetricReport = serde_json::from_str(&text).map_err(|e| PipelineError::Malformed {
                path: path.display().to_string(),
                line: e.line(),
                reason: e.to_string(),
            })?;
            print_report(&report);
        }
        Command::Chat => {
            let corpus = Corpus::load(&config.corpus).map_err(PipelineError::from)?;
            let pipeline = Pipeline::new(config.clone(), corpus, Providers::from_config(&config))?;
            let path = cli.out.clone().unwrap_or_else(|| PathBuf::from("transcript.json"));
            let stdin = io::stdin();
            let t = chat_repl(&pipeline, stdin.lock(), io::stdout(), &path)?;
            eprintln!("{} replies written to {}", t.replies.len(), path.display());
        }
    }
    Ok(())
}

fn print_report(r: &MetricReport) {
    println!("samples      {}", r.samples);
    println!("skipped      {}", r.skipped);
    println!("rouge_l      {:.4}", r.rouge_l);
    for (name, e) in &r.tnm_f1 {
        println!("{name:<12} P {:.4}  R {:.4}  F {:.4}", e.precision, e.recall, e.f1);
    }
    println!("int          {:.4}", r.int);
    for (count, share) in &r.diversity_hist {
        println!("distinct={count:<4} {share:.4}");
    }
    for (action, share) in &r.action_dist {
        println!("action {:<8} {share:.4}", action.as_str());
    }
    for (strategy, share) in &r.strategy_wins {
        println!("wins {:<15} {share:.4}", strategy.as_str());
    }
}
