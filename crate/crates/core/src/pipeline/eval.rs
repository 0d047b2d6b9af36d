use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{read_records, RecordEntry, RECORDS_FILE};
use super::{PipelineError, RunConfig};
use crate::metrics::{compute_report, EvalSample, MetricReport, TermGlossary, TermMatcher};
use crate::provider::IntentClassifier;

/// One line of a prediction or reference file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLine {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<String>,
}

pub fn load_glossary(config: &RunConfig) -> Result<TermGlossary, PipelineError> {
    let Some(path) = &config.glossary else {
        return Err(PipelineError::MissingGlossary("no glossary configured".into()));
    };
    if !path.is_file() {
        return Err(PipelineError::MissingGlossary(path.display().to_string()));
    }
    Ok(TermGlossary::load(path, config.term_vectors.as_deref())?)
}

/// Report over the `ok` entries; skipped entries only count towards `skipped`.
pub fn report_for(
    entries: &[RecordEntry],
    config: &RunConfig,
    glossary: &TermGlossary,
    classifier: &dyn IntentClassifier,
) -> Result<MetricReport, PipelineError> {
    let mut samples = Vec::new();
    let mut skipped = 0;
    for entry in entries {
        match entry {
            RecordEntry::Ok(r) => samples.push(r.to_eval_sample()),
            RecordEntry::Skipped(_) => skipped += 1,
        }
    }
    report_samples(&samples, skipped, config, glossary, classifier)
}

fn report_samples(
    samples: &[EvalSample],
    skipped: usize,
    config: &RunConfig,
    glossary: &TermGlossary,
    classifier: &dyn IntentClassifier,
) -> Result<MetricReport, PipelineError> {
    let matcher = TermMatcher::new(glossary);
    Ok(compute_report(
        samples,
        skipped,
        &matcher,
        &config.tnm_ns,
        classifier,
        &config.retry(),
    )?)
}

pub fn write_report(path: &Path, report: &MetricReport) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

/// Recomputes the report of a run directory from its records.
pub fn evaluate_run(
    run_dir: &Path,
    config: &RunConfig,
    classifier: &dyn IntentClassifier,
) -> Result<MetricReport, PipelineError> {
    let glossary = load_glossary(config)?;
    let path = run_dir.join(RECORDS_FILE);
    let (entries, truncated) = read_records(&path)?;
    if truncated {
        return Err(PipelineError::Malformed {
            path: path.display().to_string(),
            line: entries.len() + 1,
            reason: "unparseable record".into(),
        });
    }
    report_for(&entries, config, &glossary, classifier)
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairLine>, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: PairLine = serde_json::from_str(&line).map_err(|e| PipelineError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(pair);
    }
    Ok(out)
}

/// Scores `pred` against `gold`; both files must hold the same ids, each once.
/// Samples follow the reference order; the history comes from the reference
/// line, else the prediction line.
pub fn evaluate_files(
    pred: &Path,
    gold: &Path,
    config: &RunConfig,
    classifier: &dyn IntentClassifier,
) -> Result<MetricReport, PipelineError> {
    let glossary = load_glossary(config)?;
    let preds = read_pairs(pred)?;
    let golds = read_pairs(gold)?;
    let mut by_id: BTreeMap<&str, &PairLine> = BTreeMap::new();
    for p in &preds {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(PipelineError::IdMismatch(format!("duplicate prediction id {:?}", p.id)));
        }
    }
    let mut seen = BTreeSet::new();
    let mut samples = Vec::with_capacity(golds.len());
    for g in &golds {
        if !seen.insert(g.id.as_str()) {
            return Err(PipelineError::IdMismatch(format!("duplicate reference id {:?}", g.id)));
        }
        let p = by_id
            .get(g.id.as_str())
            .ok_or_else(|| PipelineError::IdMismatch(format!("no prediction for {:?}", g.id)))?;
        samples.push(EvalSample {
            id: g.id.clone(),
            history: g.history.clone().or_else(|| p.history.clone()).unwrap_or_default(),
            pred: p.text.clone(),
            gold: g.text.clone(),
            candidates: Vec::new(),
            strategy: None,
        });
    }
    if let Some(extra) = preds.iter().find(|p| !seen.contains(p.id.as_str())) {
        return Err(PipelineError::IdMismatch(format!("no reference for {:?}", extra.id)));
    }
    report_samples(&samples, 0, config, &glossary, classifier)
}
