//! SQuAD 1.1 JSON ingestion and split selection.

use std::collections::HashSet;
use std::io::BufReader;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// One question-answer pair with its source passage.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RawExample {
    pub id: String,
    pub passage: String,
    pub question: String,
    pub answer: String,
    /// Byte offset of `answer` within `passage`, validated on load.
    pub answer_start: usize,
}

impl RawExample {
    pub fn answer_span(&self) -> (usize, usize) {
        (self.answer_start, self.answer_start + self.answer.len())
    }
}

#[derive(Debug, Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Debug, Deserialize)]
struct SquadArticle {
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Debug, Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    answers: Vec<SquadAnswer>,
}

#[derive(Debug, Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

#[derive(Debug)]
pub struct SquadLoad {
    pub examples: Vec<RawExample>,
    /// Records dropped because the stated answer offset did not match.
    pub offset_mismatches: usize,
}

/// Reconciles a claimed answer offset with the passage. The offset is tried
/// as a byte index first, then as a character index (converted to bytes).
fn resolve_offset(passage: &str, answer: &str, start: usize) -> Option<usize> {
    if passage.get(start..start + answer.len()) == Some(answer) {
        return Some(start);
    }
    let byte_start = passage.char_indices().nth(start).map(|(b, _)| b)?;
    if passage.get(byte_start..byte_start + answer.len()) == Some(answer) {
        return Some(byte_start);
    }
    None
}

/// Loads every question-answer pair (first listed answer per question).
pub fn load_squad(path: &Path) -> Result<SquadLoad> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parsed: SquadFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let mut examples = Vec::new();
    let mut offset_mismatches = 0usize;
    for article in parsed.data {
        for paragraph in article.paragraphs {
            for qa in paragraph.qas {
                let Some(answer) = qa.answers.first() else {
                    offset_mismatches += 1;
                    log::warn!("question {} has no answers; skipped", qa.id);
                    continue;
                };
                match resolve_offset(&paragraph.context, &answer.text, answer.answer_start) {
                    Some(start) => examples.push(RawExample {
                        id: qa.id,
                        passage: paragraph.context.clone(),
                        question: qa.question,
                        answer: answer.text.clone(),
                        answer_start: start,
                    }),
                    None => {
                        offset_mismatches += 1;
                        log::warn!(
                            "question {}: answer {:?} not found at offset {}; skipped",
                            qa.id,
                            answer.text,
                            answer.answer_start
                        );
                    }
                }
            }
        }
    }
    Ok(SquadLoad {
        examples,
        offset_mismatches,
    })
}

/// Reads a split file: one question id per line.
pub fn load_split_ids(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Keeps the examples whose ids are in the split, preserving dataset order.
pub fn select_split(examples: &[RawExample], split_ids: &[String]) -> Vec<RawExample> {
    let wanted: HashSet<&str> = split_ids.iter().map(String::as_str).collect();
    examples
        .iter()
        .filter(|e| wanted.contains(e.id.as_str()))
        .cloned()
        .collect()
}

/// Renders examples back into the SQuAD JSON structure (fixture helper).
pub fn to_squad_json(examples: &[RawExample]) -> serde_json::Value {
    let paragraphs: Vec<serde_json::Value> = examples
        .iter()
        .map(|e| {
            serde_json::json!({
                "context": e.passage,
                "qas": [{
                    "id": e.id,
                    "question": e.question,
                    "answers": [{"text": e.answer, "answer_start": e.answer_start}],
                }],
            })
        })
        .collect();
    serde_json::json!({"data": [{"title": "corpus", "paragraphs": paragraphs}]})
}
