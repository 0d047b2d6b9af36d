use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Pipeline, PipelineError, Target};
use crate::corpus::DialogueTurn;
use crate::promptgen::PromptStrategy;

/// Id under which REPL histories are looked up and excluded.
const CHAT_ID: &str = "chat";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub patient: String,
    pub doctor: String,
    pub strategy: PromptStrategy,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatTranscript {
    pub turns: Vec<DialogueTurn>,
    pub replies: Vec<ChatTurn>,
}

fn io(e: std::io::Error) -> PipelineError {
    PipelineError::io("<terminal>", e)
}

/// Reads patient lines from `input` until `/quit` or end of input, answering
/// each on the accumulated history. On a provider failure the user chooses
/// `r` to retry or anything else to drop the utterance. The transcript is
/// written to `transcript_path` on exit.
pub fn chat_repl(
    pipeline: &Pipeline,
    mut input: impl BufRead,
    mut output: impl Write,
    transcript_path: &Path,
) -> Result<ChatTranscript, PipelineError> {
    let mut transcript = ChatTranscript::default();
    let mut line = String::new();
    'outer: loop {
        write!(output, "{}", pipeline.renderer.patient_prefix).map_err(io)?;
        output.flush().map_err(io)?;
        line.clear();
        if input.read_line(&mut line).map_err(io)? == 0 {
            break;
        }
        let utterance = line.trim().to_string();
        if utterance == "/quit" {
            break;
        }
        if utterance.is_empty() {
            continue;
        }
        transcript.turns.push(DialogueTurn::patient(utterance.clone()));
        loop {
            let target = Target {
                id: CHAT_ID,
                history: &transcript.turns,
                chief_complaint: None,
            };
            match pipeline.respond(target) {
                Ok(response) => {
                    let best = response.best();
                    writeln!(
                        output,
                        "{}{}  [{} {:.4}]",
                        pipeline.renderer.doctor_prefix, best.candidate.text, best.candidate.strategy, best.score
                    )
                    .map_err(io)?;
                    log::info!("chat reply via {} score {:.4}", best.candidate.strategy, best.score);
                    transcript.turns.push(DialogueTurn::doctor(best.candidate.text.clone()));
                    transcript.replies.push(ChatTurn {
                        patient: utterance.clone(),
                        doctor: best.candidate.text.clone(),
                        strategy: best.candidate.strategy,
                        score: best.score,
                    });
                    break;
                }
                Err(e) => {
                    writeln!(output, "error: {e}").map_err(io)?;
                    write!(output, "[r]etry or [s]kip? ").map_err(io)?;
                    output.flush().map_err(io)?;
                    line.clear();
                    let eof = input.read_line(&mut line).map_err(io)? == 0;
                    if !eof && line.trim().eq_ignore_ascii_case("r") {
                        continue;
                    }
                    transcript.turns.pop();
                    if eof {
                        break 'outer;
                    }
                    break;
                }
            }
        }
    }
    let text = serde_json::to_string_pretty(&transcript).expect("transcript serializes") + "\n";
    fs::write(transcript_path, text).map_err(|e| PipelineError::io(transcript_path, e))?;
    Ok(transcript)
}
