//! Dialogue corpus model, JSONL loading, and recent-window slicing.
//!
//! A corpus file holds one session per line:
//!
//! ```text
//! {"id": "s1", "split": "train", "chief_complaint": "...", "turns": [{"role": "patient", "text": "..."}]}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Line that separates demonstrations inside in-context prompts. Corpus text
/// may not contain it.
pub const DEMO_DELIMITER: &str = "###";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed session on line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate session id {0:?}")]
    DuplicateId(String),
    #[error("session {0:?} has no turns")]
    EmptySession(String),
    #[error("corpus is empty")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Patient,
    Doctor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub role: Role,
    pub text: String,
}

impl DialogueTurn {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
        }
    }

    pub fn patient(text: impl Into<String>) -> Self {
        Self::new(Role::Patient, text)
    }

    pub fn doctor(text: impl Into<String>) -> Self {
        Self::new(Role::Doctor, text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub id: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chief_complaint: Option<String>,
    pub turns: Vec<DialogueTurn>,
}

impl DialogueSession {
    /// Splits off the final doctor turn as the evaluation target.
    ///
    /// Returns `None` when the session does not end with a doctor turn or
    /// when nothing would remain as history.
    pub fn history_and_gold(&self) -> Option<(&[DialogueTurn], &DialogueTurn)> {
        let (last, history) = self.turns.split_last()?;
        if last.role != Role::Doctor || history.is_empty() {
            return None;
        }
        Some((history, last))
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.text.trim().is_empty() {
                return Err(format!("turn {i} has empty text"));
            }
            if turn.text.contains(DEMO_DELIMITER) {
                return Err(format!("turn {i} contains the reserved delimiter {DEMO_DELIMITER:?}"));
            }
        }
        if let Some(cc) = &self.chief_complaint {
            if cc.contains(DEMO_DELIMITER) {
                return Err(format!(
                    "chief complaint contains the reserved delimiter {DEMO_DELIMITER:?}"
                ));
            }
        }
        Ok(())
    }
}

/// Immutable, validated set of sessions with a per-split index.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    sessions: Vec<DialogueSession>,
    by_id: HashMap<String, usize>,
    by_split: BTreeMap<Split, Vec<String>>,
}

impl Corpus {
    pub fn from_sessions(sessions: Vec<DialogueSession>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for session in sessions {
            corpus.push(session)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, session: DialogueSession) -> Result<(), CorpusError> {
        if session.turns.is_empty() {
            return Err(CorpusError::EmptySession(session.id));
        }
        if self.by_id.contains_key(&session.id) {
            return Err(CorpusError::DuplicateId(session.id));
        }
        self.by_id.insert(session.id.clone(), self.sessions.len());
        self.by_split.entry(session.split).or_default().push(session.id.clone());
        self.sessions.push(session);
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(BufReader::new(file), &path.display().to_string())
    }

    pub fn from_reader(reader: impl BufRead, origin: &str) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|source| CorpusError::Io {
                path: origin.to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let session: DialogueSession = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                reason: e.to_string(),
            })?;
            if session.turns.is_empty() {
                return Err(CorpusError::EmptySession(session.id));
            }
            session
                .validate()
                .map_err(|reason| CorpusError::MalformedLine { line: line_no, reason })?;
            corpus.push(session)?;
        }
        Ok(corpus)
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for session in &self.sessions {
            serde_json::to_writer(&mut out, session)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn sessions(&self) -> &[DialogueSession] {
        &self.sessions
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DialogueSession> {
        self.by_id.get(id).map(|&i| &self.sessions[i])
    }

    pub fn split_ids(&self, split: Split) -> &[String] {
        self.by_split.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DialogueSession> {
        self.split_ids(split)
            .iter()
            .map(move |id| self.get(id).expect("split index resolves"))
    }

    pub fn is_train(&self, id: &str) -> bool {
        self.get(id).is_some_and(|s| s.split == Split::Train)
    }
}

/// Unicode scalar count; the default length measure.
pub fn char_count(text: &str) -> usize {
    text.chars().count()
}

/// Renders turns with role prefixes and measures rendered length.
///
/// The measure is a plain function so a tokenizer-backed counter can replace
/// the character counter.
#[derive(Debug, Clone)]
pub struct TurnRenderer {
    pub patient_prefix: String,
    pub doctor_prefix: String,
    pub measure: fn(&str) -> usize,
}

impl Default for TurnRenderer {
    fn default() -> Self {
        Self {
            patient_prefix: "患者：".to_string(),
            doctor_prefix: "医生：".to_string(),
            measure: char_count,
        }
    }
}

impl TurnRenderer {
    pub fn prefix(&self, role: Role) -> &str {
        match role {
            Role::Patient => &self.patient_prefix,
            Role::Doctor => &self.doctor_prefix,
        }
    }

    pub fn render_turn(&self, turn: &DialogueTurn) -> String {
        format!("{}{}\n", self.prefix(turn.role), turn.text)
    }

    pub fn render(&self, turns: &[DialogueTurn]) -> String {
        turns.iter().map(|t| self.render_turn(t)).collect()
    }

    pub fn measure(&self, text: &str) -> usize {
        (self.measure)(text)
    }

    /// Drops leading characters until the measured length fits `budget`.
    pub fn truncate_left(&self, text: &str, budget: usize) -> String {
        if self.measure(text) <= budget {
            return text.to_string();
        }
        let mut start = text.char_indices().map(|(i, _)| i);
        loop {
            match start.next() {
                Some(i) if self.measure(&text[i..]) <= budget => return text[i..].to_string(),
                Some(_) => continue,
                None => return String::new(),
            }
        }
    }
}

/// The most recent whole turns that fit a length budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecentWindow {
    pub kept: Vec<DialogueTurn>,
    pub excluded: Vec<DialogueTurn>,
    /// Set when even the last turn alone exceeded the budget; its rendering
    /// is then cut from the left.
    pub truncated: bool,
    pub budget: usize,
}

impl RecentWindow {
    pub fn render(&self, renderer: &TurnRenderer) -> String {
        let text = renderer.render(&self.kept);
        if self.truncated {
            renderer.truncate_left(&text, self.budget)
        } else {
            text
        }
    }
}

pub fn recent_window(turns: &[DialogueTurn], budget: usize, renderer: &TurnRenderer) -> RecentWindow {
    let mut used = 0usize;
    let mut start = turns.len();
    for (i, turn) in turns.iter().enumerate().rev() {
        let len = renderer.measure(&renderer.render_turn(turn));
        if used + len > budget {
            break;
        }
        used += len;
        start = i;
    }
    let truncated = start == turns.len() && budget > 0 && !turns.is_empty();
    if truncated {
        start = turns.len() - 1;
    }
    RecentWindow {
        kept: turns[start..].to_vec(),
        excluded: turns[..start].to_vec(),
        truncated,
        budget,
    }
}

/// Start indices of dialogue rounds. A round opens with a patient block, or
/// with a doctor block that has no patient block before it.
pub fn round_starts(turns: &[DialogueTurn]) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut prev: Option<Role> = None;
    for (i, turn) in turns.iter().enumerate() {
        let opens = matches!((prev, turn.role), (None, _) | (Some(Role::Doctor), Role::Patient));
        if opens {
            starts.push(i);
        }
        prev = Some(turn.role);
    }
    starts
}

pub fn round_count(turns: &[DialogueTurn]) -> usize {
    round_starts(turns).len()
}

/// Suffix of `turns` covering the last `rounds` rounds.
pub fn last_rounds(turns: &[DialogueTurn], rounds: usize) -> &[DialogueTurn] {
    if rounds == 0 {
        return &turns[turns.len()..];
    }
    let starts = round_starts(turns);
    match starts.len().checked_sub(rounds) {
        Some(i) => &turns[starts[i]..],
        None => turns,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub counts: BTreeMap<Split, usize>,
    pub total: usize,
    /// Mean rounds per session (patient block + doctor reply = one round).
    pub avg_rounds: f64,
    /// Mean utterances per session.
    pub avg_utterances: f64,
}

pub fn session_stats(corpus: &Corpus) -> Result<StatsReport, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let counts = Split::ALL.iter().map(|&s| (s, corpus.split_ids(s).len())).collect();
    let n = corpus.len() as f64;
    let rounds: usize = corpus.sessions().iter().map(|s| round_count(&s.turns)).sum();
    let utterances: usize = corpus.sessions().iter().map(|s| s.turns.len()).sum();
    Ok(StatsReport {
        counts,
        total: corpus.len(),
        avg_rounds: rounds as f64 / n,
        avg_utterances: utterances as f64 / n,
    })
}
