//! Question files: JSON Lines, one [`QuestionRecord`] per line.
//!
//! ```json
//! {"id": "imm-01", "question": "...", "gold_answer": "B", "category": "Bio/Med - Immunology", "answer_type": "multiple_choice"}
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    MultipleChoice,
    #[serde(alias = "exact_match")]
    ExactMatchFreeResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    pub gold_answer: String,
    pub category: String,
    pub answer_type: AnswerType,
}

pub fn load_questions(path: impl AsRef<Path>) -> Result<Vec<QuestionRecord>, BenchError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_questions(BufReader::new(file))
}

/// Parses and validates records in file order. Blank lines are skipped.
pub fn parse_questions(reader: impl BufRead) -> Result<Vec<QuestionRecord>, BenchError> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| BenchError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionRecord = serde_json::from_str(&line).map_err(|e| BenchError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        for (field, value) in [
            ("id", &q.id),
            ("question", &q.question),
            ("gold_answer", &q.gold_answer),
        ] {
            if value.trim().is_empty() {
                return Err(BenchError::Parse {
                    line: line_no,
                    message: format!("{field} is empty"),
                });
            }
        }
        if let Some(&first_line) = seen.get(&q.id) {
            return Err(BenchError::DuplicateId {
                id: q.id,
                line: line_no,
                first_line,
            });
        }
        seen.insert(q.id.clone(), line_no);
        out.push(q);
    }
    Ok(out)
}
