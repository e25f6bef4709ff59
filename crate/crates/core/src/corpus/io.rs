use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prompt::{build_prompt, Condition, PromptRecord};
use super::{base_form, CorpusError, LogicalForm, Polarity, Provenance, Statement, StatementSet};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CorpusError {
    CorpusError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Loads a `statement,label` CSV (extra columns are ignored). Row numbers in
/// errors are 1-based file lines, the header being line 1. When `expected` is
/// given the row count must match it.
pub fn load_base_dataset(
    path: &Path,
    dataset_id: &str,
    expected: Option<usize>,
) -> Result<StatementSet, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_base_dataset(file, dataset_id, expected)
}

/// [`load_base_dataset`] over any reader.
pub fn read_base_dataset(
    input: impl Read,
    dataset_id: &str,
    expected: Option<usize>,
) -> Result<StatementSet, CorpusError> {
    let form = base_form(dataset_id).ok_or_else(|| CorpusError::UnknownDataset(dataset_id.into()))?;
    let polarity = match form {
        LogicalForm::Affirmative | LogicalForm::Comparison | LogicalForm::OpenDomain => Polarity::Affirmative,
        LogicalForm::Negated => Polarity::Negated,
        LogicalForm::Conjunction | LogicalForm::Disjunction => {
            return Err(CorpusError::Config(format!(
                "{dataset_id} is generated with source provenance; load it from JSONL instead"
            )))
        }
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Parse { row: 1, message: e.to_string() })?
        .clone();
    if headers.is_empty() {
        return Err(CorpusError::Parse { row: 0, message: "missing header".into() });
    }
    let column = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| CorpusError::Parse {
            row: 1,
            message: format!("header lacks a `{name}` column"),
        })
    };
    let (text_col, label_col) = (column("statement")?, column("label")?);

    let mut statements = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CorpusError::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let text = record.get(text_col).unwrap_or("").trim().to_string();
        let label = match record.get(label_col).map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            other => {
                return Err(CorpusError::Parse {
                    row,
                    message: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        if text.is_empty() || !text.ends_with('.') {
            return Err(CorpusError::Parse {
                row,
                message: format!("statement must be non-empty and end with a period: {text:?}"),
            });
        }
        statements.push(Statement {
            text,
            label,
            polarity,
            logical_form: form,
            dataset_id: dataset_id.to_string(),
            source_ids: Vec::new(),
        });
    }
    if let Some(expected) = expected {
        if statements.len() != expected {
            return Err(CorpusError::RowCount {
                dataset_id: dataset_id.into(),
                expected,
                found: statements.len(),
            });
        }
    }
    StatementSet::new(dataset_id, statements, Provenance::Loaded)
}

/// One JSON object per statement, LF-terminated.
pub fn write_jsonl(set: &StatementSet, mut w: impl Write) -> std::io::Result<()> {
    for s in &set.statements {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(path: &Path, dataset_id: &str) -> Result<StatementSet, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut statements = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Statement = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Parse { row: i + 1, message: e.to_string() })?;
        if s.dataset_id != dataset_id {
            return Err(CorpusError::Parse {
                row: i + 1,
                message: format!("row belongs to {}, expected {dataset_id}", s.dataset_id),
            });
        }
        statements.push(s);
    }
    StatementSet::new(dataset_id, statements, Provenance::Loaded)
}

/// Writes every (statement, condition) prompt, condition-major within a set.
pub fn write_prompts(
    sets: &[&StatementSet],
    conditions: &[Condition],
    mut w: impl Write,
) -> std::io::Result<()> {
    for set in sets {
        for &condition in conditions {
            for (row, s) in set.statements.iter().enumerate() {
                let rec = PromptRecord {
                    prompt: build_prompt(s, condition),
                    condition,
                    dataset_id: set.dataset_id.clone(),
                    row,
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

/// Parsed model answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Answer {
    True,
    False,
    #[serde(rename = "unparsed")]
    Unparsed,
}

impl Answer {
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Answer::True => Some(true),
            Answer::False => Some(false),
            Answer::Unparsed => None,
        }
    }
}

/// One line of the extractor's answers file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub dataset_id: String,
    pub row: usize,
    pub condition: Condition,
    pub answer: Answer,
    pub raw_text: String,
}

pub fn read_answers(path: &Path) -> Result<Vec<AnswerRecord>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CorpusError::Parse { row: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_rows_in_order() {
        let f = csv_file(
            "statement,label\nThe city of Tokyo is in Japan.,1\nThe city of Paris is in Peru.,0\n\"The city of Lima, capital, is in Peru.\",1\n",
        );
        let s = load_base_dataset(f.path(), "cities", None).unwrap();
        assert_eq!(s.labels(), vec![true, false, true]);
        assert_eq!(s.statements[2].text, "The city of Lima, capital, is in Peru.");
        assert_eq!(s.polarity(), Some(Polarity::Affirmative));
        assert_eq!(s.provenance, Provenance::Loaded);
    }

    #[test]
    fn empty_file_has_no_header() {
        let f = csv_file("");
        assert!(matches!(load_base_dataset(f.path(), "cities", None), Err(CorpusError::Parse { .. })));
    }

    #[test]
    fn bad_label_reports_line() {
        let f = csv_file("statement,label\nA b.,1\nC d.,yes\n");
        match load_base_dataset(f.path(), "facts", None) {
            Err(CorpusError::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn row_count_checked_against_expected() {
        let f = csv_file("statement,label\nA b.,1\n");
        assert!(matches!(
            load_base_dataset(f.path(), "cities", Some(1496)),
            Err(CorpusError::RowCount { expected: 1496, found: 1, .. })
        ));
    }

    #[test]
    fn jsonl_keys_and_round_trip() {
        let f = csv_file("statement,label\nWater is wet.,1\nFish are birds.,0\n");
        let s = load_base_dataset(f.path(), "facts", None).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&s, &mut buf).unwrap();
        let first = String::from_utf8(buf.clone()).unwrap().lines().next().unwrap().to_string();
        assert_eq!(
            first,
            r#"{"text":"Water is wet.","label":true,"polarity":1,"logical_form":"affirmative","dataset_id":"facts","source_ids":[]}"#
        );
        let out = csv_file(std::str::from_utf8(&buf).unwrap());
        assert_eq!(read_jsonl(out.path(), "facts").unwrap().statements, s.statements);
    }

    #[test]
    fn prompt_records() {
        let f = csv_file("statement,label\nWater is wet.,1\n");
        let s = load_base_dataset(f.path(), "facts", None).unwrap();
        let mut buf = Vec::new();
        write_prompts(&[&s], &[Condition::Truthful, Condition::Deceptive], &mut buf).unwrap();
        let lines: Vec<PromptRecord> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].condition, Condition::Deceptive);
        assert_eq!(lines[1].row, 0);
    }

    #[test]
    fn answers_parse() {
        let f = csv_file(
            "{\"dataset_id\":\"cities\",\"row\":0,\"condition\":\"deceptive\",\"answer\":\"False\",\"raw_text\":\"False\"}\n{\"dataset_id\":\"cities\",\"row\":1,\"condition\":\"deceptive\",\"answer\":\"unparsed\",\"raw_text\":\"Hmm\"}\n",
        );
        let a = read_answers(f.path()).unwrap();
        assert_eq!(a[0].answer.as_bool(), Some(false));
        assert_eq!(a[1].answer, Answer::Unparsed);
    }
}
