use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, Example, Label, Task};

/// One line of a JSONL corpus. Unknown fields are ignored.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl RawRecord {
    pub fn from_example(example: &Example) -> RawRecord {
        let label = example.label.map(|l| l.as_str().to_string());
        let (prompt_label, response_label) = match example.task {
            Task::Prompt => (label, None),
            Task::Response => (None, label),
        };
        RawRecord {
            id: Some(example.id.clone()),
            prompt: Some(example.prompt.clone()),
            response: example.response.clone(),
            prompt_label,
            response_label,
            source: (!example.source.is_empty()).then(|| example.source.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOutcome {
    pub examples: Vec<Example>,
    pub skipped: Vec<SkippedLine>,
    pub duplicate_ids: usize,
}

/// Reads one JSONL corpus. Malformed lines are skipped and reported; only an
/// unreadable file is fatal. A repeated id replaces the earlier example in
/// place.
pub fn ingest_jsonl(path: &Path, task: Task) -> Result<IngestOutcome, DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let file_tag = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());

    let mut outcome = IngestOutcome::default();
    let mut positions: HashMap<String, usize> = HashMap::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let mut skip = |reason: String| {
            log::warn!("{file_tag}:{line_no}: skipped ({reason})");
            outcome.skipped.push(SkippedLine { line: line_no, reason });
        };
        let record: RawRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                skip(format!("malformed JSON: {e}"));
                continue;
            }
        };
        let example = match record_to_example(record, task, &file_tag, line_no) {
            Ok(e) => e,
            Err(reason) => {
                skip(reason);
                continue;
            }
        };
        match positions.get(&example.id) {
            Some(&pos) => {
                log::warn!("{file_tag}:{line_no}: duplicate id {:?}, later line wins", example.id);
                outcome.duplicate_ids += 1;
                outcome.examples[pos] = example;
            }
            None => {
                positions.insert(example.id.clone(), outcome.examples.len());
                outcome.examples.push(example);
            }
        }
    }
    Ok(outcome)
}

fn record_to_example(record: RawRecord, task: Task, file_tag: &str, line_no: usize) -> Result<Example, String> {
    let prompt = record
        .prompt
        .ok_or_else(|| "missing required field \"prompt\"".to_string())?;
    if task == Task::Response && record.response.is_none() {
        return Err("missing required field \"response\" for response task".into());
    }
    let raw_label = match task {
        Task::Prompt => record.prompt_label,
        Task::Response => record.response_label,
    };
    let label = match raw_label {
        None => None,
        Some(s) => Some(Label::parse(&s).ok_or_else(|| format!("unrecognized label {s:?}"))?),
    };
    Ok(Example {
        id: record.id.unwrap_or_else(|| format!("{file_tag}:{line_no}")),
        prompt,
        response: record.response,
        label,
        task,
        source: record.source.unwrap_or_default(),
    })
}

/// Ingests several files in parallel and concatenates them in path-sorted
/// order. Ids repeated across files follow the same last-wins rule.
pub fn ingest_many(paths: &[PathBuf], task: Task) -> Result<IngestOutcome, DataError> {
    let mut sorted = paths.to_vec();
    sorted.sort();
    let parts: Vec<IngestOutcome> = sorted
        .par_iter()
        .map(|p| ingest_jsonl(p, task))
        .collect::<Result<_, _>>()?;

    let mut merged = IngestOutcome::default();
    let mut positions: HashMap<String, usize> = HashMap::new();
    for part in parts {
        merged.skipped.extend(part.skipped);
        merged.duplicate_ids += part.duplicate_ids;
        for example in part.examples {
            if let Some(&pos) = positions.get(&example.id) {
                merged.duplicate_ids += 1;
                merged.examples[pos] = example;
            } else {
                positions.insert(example.id.clone(), merged.examples.len());
                merged.examples.push(example);
            }
        }
    }
    Ok(merged)
}

pub fn write_corpus(path: &Path, examples: &[Example]) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for example in examples {
        let line = serde_json::to_string(&RawRecord::from_example(example)).expect("record serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads a corpus previously written by [`write_corpus`]. Unlike
/// [`ingest_jsonl`], any skipped line is an error.
pub fn read_corpus(path: &Path, task: Task) -> Result<Vec<Example>, DataError> {
    let outcome = ingest_jsonl(path, task)?;
    if let Some(first) = outcome.skipped.first() {
        return Err(DataError::Config(format!(
            "{}:{}: {}",
            path.display(),
            first.line,
            first.reason
        )));
    }
    Ok(outcome.examples)
}
