use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{load_glossary, report_for, write_report};
use super::{Pipeline, PipelineError, Providers, Response, RunConfig, Target};
use crate::corpus::{Corpus, DialogueSession, Split};
use crate::generation::SlotError;
use crate::metrics::{EvalSample, MetricReport};
use crate::promptgen::{Prompt, PromptStrategy};
use crate::ranking::RankedResponse;
use crate::retrieval::{ComplaintOrigin, ExampleRef};

pub const CONFIG_FILE: &str = "config.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const LOG_FILE: &str = "log.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub split: Split,
    pub history: String,
    pub gold: String,
    pub chief_complaint: String,
    pub complaint_origin: ComplaintOrigin,
    pub prompts: Vec<Prompt>,
    pub exemplars: Vec<ExampleRef>,
    /// Rank 1 first.
    pub candidates: Vec<RankedResponse>,
    pub selected: String,
    pub selected_strategy: PromptStrategy,
    pub selected_score: f64,
    #[serde(default)]
    pub slot_errors: Vec<SlotError>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunRecord {
    fn new(session: &DialogueSession, gold: String, response: Response) -> Self {
        let best = response.best().clone();
        Self {
            id: session.id.clone(),
            split: session.split,
            history: response.history,
            gold,
            chief_complaint: response.chief_complaint,
            complaint_origin: response.complaint_origin,
            prompts: response.prompts,
            exemplars: response.exemplars,
            candidates: response.ranked,
            selected: best.candidate.text,
            selected_strategy: best.candidate.strategy,
            selected_score: best.score,
            slot_errors: response.slot_errors,
            warnings: response.warnings,
        }
    }

    pub fn to_eval_sample(&self) -> EvalSample {
        EvalSample {
            id: self.id.clone(),
            history: self.history.clone(),
            pred: self.selected.clone(),
            gold: self.gold.clone(),
            candidates: self.candidates.iter().map(|c| c.candidate.text.clone()).collect(),
            strategy: Some(self.selected_strategy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub id: String,
    pub split: Split,
    pub error: String,
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RecordEntry {
    Ok(RunRecord),
    Skipped(SkippedRecord),
}

impl RecordEntry {
    pub fn id(&self) -> &str {
        match self {
            RecordEntry::Ok(r) => &r.id,
            RecordEntry::Skipped(s) => &s.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub report: MetricReport,
    pub processed: usize,
    pub resumed: usize,
    pub skipped: usize,
}

/// Sessions of the evaluation splits, in corpus order, that end with a doctor
/// turn preceded by some history.
pub fn eval_targets<'c>(corpus: &'c Corpus, splits: &[Split]) -> Vec<&'c DialogueSession> {
    corpus
        .sessions()
        .iter()
        .filter(|s| splits.contains(&s.split))
        .filter(|s| {
            let ok = s.history_and_gold().is_some();
            if !ok {
                log::warn!(
                    "session {} has no final doctor turn after some history; not evaluated",
                    s.id
                );
            }
            ok
        })
        .collect()
}

/// Reads records up to the first unparseable line (an interrupted write).
pub fn read_records(path: &Path) -> Result<(Vec<RecordEntry>, bool), PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut entries = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RecordEntry>(&line) {
            Ok(entry) => entries.push(entry),
            Err(_) => return Ok((entries, true)),
        }
    }
    Ok((entries, false))
}

fn write_json_line(out: &mut impl Write, entry: &RecordEntry, path: &Path) -> Result<(), PipelineError> {
    let line = serde_json::to_string(entry).expect("records serialize");
    writeln!(out, "{line}").map_err(|e| PipelineError::io(path, e))
}

/// Runs every evaluation target and writes `config.json`, `records.jsonl`,
/// `report.json` and `log.txt` to `out`. Ids already in `records.jsonl` are
/// kept and not rerun.
pub fn run_experiment(config: &RunConfig, providers: Providers, out: &Path) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;

    let config_path = out.join(CONFIG_FILE);
    let config_text = serde_json::to_string_pretty(config).expect("config serializes") + "\n";
    if let Ok(existing) = fs::read_to_string(&config_path) {
        if existing != config_text {
            return Err(PipelineError::Config(format!(
                "{} holds a run with a different config",
                out.display()
            )));
        }
    }
    let glossary = load_glossary(config)?;
    let corpus = Corpus::load(&config.corpus)?;
    fs::write(&config_path, &config_text).map_err(|e| PipelineError::io(&config_path, e))?;

    let records_path = out.join(RECORDS_FILE);
    let log_path = out.join(LOG_FILE);
    let (existing, truncated) = if records_path.exists() {
        read_records(&records_path)?
    } else {
        (Vec::new(), false)
    };
    let resuming = !existing.is_empty();
    if truncated || !resuming {
        let mut f = BufWriter::new(File::create(&records_path).map_err(|e| PipelineError::io(&records_path, e))?);
        for entry in &existing {
            write_json_line(&mut f, entry, &records_path)?;
        }
        f.flush().map_err(|e| PipelineError::io(&records_path, e))?;
    }
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resuming)
        .truncate(!resuming)
        .open(&log_path)
        .map_err(|e| PipelineError::io(&log_path, e))?;
    let mut log_line = |line: String| -> Result<(), PipelineError> {
        writeln!(log, "{line}").map_err(|e| PipelineError::io(&log_path, e))
    };

    let pipeline = Pipeline::new(config.clone(), corpus, providers)?;
    let targets = eval_targets(&pipeline.corpus, &config.eval_splits);
    let done: BTreeSet<String> = existing.iter().map(|e| e.id().to_string()).collect();
    let pending: Vec<&DialogueSession> = targets.iter().copied().filter(|s| !done.contains(&s.id)).collect();
    if resuming {
        log_line(format!("resume: {} recorded, {} pending", done.len(), pending.len()))?;
    }
    log_line(format!(
        "targets: {} sessions from {}",
        targets.len(),
        config
            .eval_splits
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(",")
    ))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    let chunk = pool.current_num_threads().max(1) * 2;

    let mut records = OpenOptions::new()
        .append(true)
        .open(&records_path)
        .map_err(|e| PipelineError::io(&records_path, e))?;
    let mut skipped = existing.iter().filter(|e| matches!(e, RecordEntry::Skipped(_))).count();
    let mut entries = existing;
    for batch in pending.chunks(chunk) {
        let results: Vec<RecordEntry> = pool.install(|| batch.par_iter().map(|s| process(&pipeline, s)).collect());
        for entry in results {
            write_json_line(&mut records, &entry, &records_path)?;
            match &entry {
                RecordEntry::Ok(r) => {
                    for w in &r.warnings {
                        log_line(format!("{}: warning: {w}", r.id))?;
                    }
                    for e in &r.slot_errors {
                        log_line(format!("{}: slot {} failed: {}", r.id, e.strategy, e.error))?;
                    }
                    log_line(format!(
                        "{}: ok strategy={} score={:.6}",
                        r.id, r.selected_strategy, r.selected_score
                    ))?;
                }
                RecordEntry::Skipped(s) => {
                    skipped += 1;
                    log_line(format!("{}: skipped: {}", s.id, s.error))?;
                }
            }
            entries.push(entry);
        }
        records.flush().map_err(|e| PipelineError::io(&records_path, e))?;
        if let Some(budget) = config.failure_budget {
            if skipped > budget {
                log_line(format!("aborted: {skipped} skipped > budget {budget}"))?;
                return Err(PipelineError::FailureBudget { skipped, budget });
            }
        }
    }

    let report = report_for(&entries, config, &glossary, pipeline.providers.classifier.as_ref())?;
    write_report(&out.join(REPORT_FILE), &report)?;
    log_line(format!(
        "done: {} evaluated, {} skipped",
        report.samples, report.skipped
    ))?;
    Ok(RunSummary {
        dir: out.to_path_buf(),
        report,
        processed: pending.len(),
        resumed: done.len(),
        skipped,
    })
}

fn process(pipeline: &Pipeline, session: &DialogueSession) -> RecordEntry {
    let (history, gold) = session.history_and_gold().expect("eligible target");
    let target = Target {
        id: &session.id,
        history,
        chief_complaint: session.chief_complaint.as_deref(),
    };
    match pipeline.respond(target) {
        Ok(response) => RecordEntry::Ok(RunRecord::new(session, gold.text.clone(), response)),
        Err(e) => {
            log::warn!("{}: skipped: {e}", session.id);
            RecordEntry::Skipped(SkippedRecord {
                id: session.id.clone(),
                split: session.split,
                error: e.to_string(),
            })
        }
    }
}
