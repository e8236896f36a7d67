//! Labeled dataset files: one document per line, `label<TAB>text`.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use log::warn;
use thiserror::Error;

use crate::features::{tokenize, Vocabulary};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}: {malformed} of {total} lines malformed (limit {limit:.2}%); first at line {first_line}: {first_reason}")]
    TooManyMalformed {
        source_name: String,
        malformed: usize,
        total: usize,
        limit: f64,
        first_line: usize,
        first_reason: String,
    },
    #[error("{0}: no documents")]
    Empty(String),
    #[error("{source_name} line {line}: label {label} outside the model's {classes} classes")]
    LabelOutOfRange {
        source_name: String,
        line: usize,
        label: usize,
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDocument {
    pub label: usize,
    pub tokens: Vec<String>,
    pub raw: String,
    /// 1-based line in the source file.
    pub line: usize,
}

/// A document mapped to vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetReport {
    pub lines: usize,
    pub documents: usize,
    /// `(line, reason)` for every rejected line.
    pub malformed: Vec<(usize, String)>,
}

fn parse_line(line: &str) -> Result<(usize, Vec<String>), String> {
    let (label, text) = line.split_once('\t').ok_or("missing TAB separator")?;
    let label = label
        .trim()
        .parse::<usize>()
        .map_err(|_| format!("label {label:?} is not a non-negative integer"))?;
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err("no tokens after tokenization".into());
    }
    Ok((label, tokens))
}

/// Parses a dataset, counting malformed lines. Fails when more than
/// `max_malformed_fraction` of the non-blank lines are malformed.
pub fn parse_dataset<R: BufRead>(
    reader: R,
    source_name: &str,
    max_malformed_fraction: f64,
) -> Result<(Vec<LabeledDocument>, DatasetReport), DataError> {
    let mut docs = Vec::new();
    let mut report = DatasetReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io {
            path: PathBuf::from(source_name),
            source,
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        match parse_line(line) {
            Ok((label, tokens)) => docs.push(LabeledDocument {
                label,
                tokens,
                raw: line.to_string(),
                line: i + 1,
            }),
            Err(reason) => {
                warn!("{source_name} line {}: {reason}", i + 1);
                report.malformed.push((i + 1, reason));
            }
        }
    }
    report.documents = docs.len();
    if !report.malformed.is_empty() {
        let fraction = report.malformed.len() as f64 / report.lines as f64;
        if fraction > max_malformed_fraction {
            let (first_line, first_reason) = report.malformed[0].clone();
            return Err(DataError::TooManyMalformed {
                source_name: source_name.to_string(),
                malformed: report.malformed.len(),
                total: report.lines,
                limit: max_malformed_fraction * 100.0,
                first_line,
                first_reason,
            });
        }
    }
    if docs.is_empty() {
        return Err(DataError::Empty(source_name.to_string()));
    }
    Ok((docs, report))
}

pub fn read_dataset(path: &Path, max_malformed_fraction: f64) -> Result<(Vec<LabeledDocument>, DatasetReport), DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(BufReader::new(file), &path.display().to_string(), max_malformed_fraction)
}

/// Maps documents to indices, rejecting labels outside `[0, classes)`.
pub fn encode_documents(
    docs: &[LabeledDocument],
    vocab: &Vocabulary,
    classes: usize,
    source_name: &str,
) -> Result<Vec<Example>, DataError> {
    docs.iter()
        .map(|d| {
            if d.label >= classes {
                return Err(DataError::LabelOutOfRange {
                    source_name: source_name.to_string(),
                    line: d.line,
                    label: d.label,
                    classes,
                });
            }
            Ok(Example {
                ids: vocab.encode(&d.tokens),
                label: d.label,
            })
        })
        .collect()
}

/// Writes documents back in `label<TAB>text` form.
pub fn format_dataset(docs: &[(usize, String)]) -> String {
    docs.iter().map(|(l, t)| format!("{l}\t{t}\n")).collect()
}
