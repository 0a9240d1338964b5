//! Corpus ingestion from JSONL or CSV.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::error::{DetoxError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl FromStr for InputFormat {
    type Err = DetoxError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(DetoxError::Config(format!(
                "unknown input format {other:?} (jsonl|csv)"
            ))),
        }
    }
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    /// Identifier as it appeared in the input (or the record index).
    pub id: Value,
    /// String form of `id`, used for ordering and seeding.
    pub key: String,
    pub text: String,
    /// Remaining input fields, passed through to the results.
    pub extra: Map<String, Value>,
}

pub fn id_key(id: &Value) -> String {
    match id {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Integer ids order numerically and before any other id; the rest order as strings.
pub fn compare_keys(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

#[derive(Debug, Clone)]
pub struct Fields<'a> {
    pub text: &'a str,
    pub id: &'a str,
}

impl Default for Fields<'_> {
    fn default() -> Self {
        Self {
            text: "text",
            id: "id",
        }
    }
}

fn input_error(path: &Path, line: usize, message: impl Into<String>) -> DetoxError {
    DetoxError::Input {
        path: path.into(),
        line,
        message: message.into(),
    }
}

fn make_item(
    path: &Path,
    line: usize,
    index: usize,
    mut record: Map<String, Value>,
    fields: &Fields,
) -> Result<CorpusItem> {
    let text = match record.remove(fields.text) {
        Some(Value::String(s)) => s,
        Some(_) => {
            return Err(input_error(
                path,
                line,
                format!("field {:?} is not a string", fields.text),
            ))
        }
        None => {
            return Err(input_error(
                path,
                line,
                format!("missing field {:?}", fields.text),
            ))
        }
    };
    let id = match record.remove(fields.id) {
        Some(Value::Null) | None => Value::from(index),
        Some(v @ (Value::String(_) | Value::Number(_))) => v,
        Some(_) => {
            return Err(input_error(
                path,
                line,
                format!("field {:?} must be a string or number", fields.id),
            ))
        }
    };
    Ok(CorpusItem {
        key: id_key(&id),
        id,
        text,
        extra: record,
    })
}

fn read_jsonl(path: &Path, fields: &Fields) -> Result<Vec<CorpusItem>> {
    let file = File::open(path).map_err(|e| DetoxError::io(path, e))?;
    let mut items = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DetoxError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Map<String, Value> =
            serde_json::from_str(&line).map_err(|e| input_error(path, n + 1, e.to_string()))?;
        items.push(make_item(path, n + 1, items.len(), record, fields)?);
    }
    Ok(items)
}

fn read_csv(path: &Path, fields: &Fields) -> Result<Vec<CorpusItem>> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| input_error(path, 0, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| input_error(path, 1, e.to_string()))?
        .clone();
    let mut items = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row.map_err(|e| input_error(path, n + 2, e.to_string()))?;
        let record: Map<String, Value> = headers
            .iter()
            .zip(row.iter())
            .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
            .collect();
        items.push(make_item(path, n + 2, items.len(), record, fields)?);
    }
    Ok(items)
}

/// Reads a corpus; ids must be unique.
pub fn read_corpus(path: &Path, format: InputFormat, fields: &Fields) -> Result<Vec<CorpusItem>> {
    let items = match format {
        InputFormat::Jsonl => read_jsonl(path, fields)?,
        InputFormat::Csv => read_csv(path, fields)?,
    };
    let mut seen = HashSet::new();
    if let Some(dup) = items.iter().find(|i| !seen.insert(i.key.clone())) {
        return Err(input_error(path, 0, format!("duplicate id {:?}", dup.key)));
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn jsonl_with_and_without_ids() {
        let f = write(
            "{\"id\": \"a\", \"text\": \"hi\", \"src\": 3}\n\n{\"text\": \"yo\"}\n",
            ".jsonl",
        );
        let items = read_corpus(f.path(), InputFormat::Jsonl, &Fields::default()).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].key, "a");
        assert_eq!(items[0].extra["src"], 3);
        assert_eq!(items[1].id, Value::from(1));
        assert_eq!(items[1].key, "1");
    }

    #[test]
    fn csv_passes_other_columns_through() {
        let f = write("id,text,label\n7,\"you, idiot\",x\n", ".csv");
        assert_eq!(InputFormat::from_path(f.path()), InputFormat::Csv);
        let items = read_corpus(f.path(), InputFormat::Csv, &Fields::default()).unwrap();
        assert_eq!(items[0].text, "you, idiot");
        assert_eq!(items[0].key, "7");
        assert_eq!(items[0].extra["label"], "x");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let f = write("{\"text\": \"ok\"}\nnot json\n", ".jsonl");
        match read_corpus(f.path(), InputFormat::Jsonl, &Fields::default()) {
            Err(DetoxError::Input { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let f = write("{\"id\": 1, \"body\": \"ok\"}\n", ".jsonl");
        assert!(read_corpus(f.path(), InputFormat::Jsonl, &Fields::default()).is_err());
        let f = write("{\"id\": 1, \"body\": \"ok\"}\n", ".jsonl");
        let custom = Fields {
            text: "body",
            id: "id",
        };
        assert_eq!(
            read_corpus(f.path(), InputFormat::Jsonl, &custom).unwrap()[0].text,
            "ok"
        );
        let f = write(
            "{\"id\": 1, \"text\": \"a\"}\n{\"id\": 1, \"text\": \"b\"}\n",
            ".jsonl",
        );
        assert!(read_corpus(f.path(), InputFormat::Jsonl, &Fields::default()).is_err());
    }

    #[test]
    fn key_ordering() {
        let mut keys = vec!["10", "b", "2", "a", "-1"];
        keys.sort_by(|a, b| compare_keys(a, b));
        assert_eq!(keys, ["-1", "2", "10", "a", "b"]);
    }
}
