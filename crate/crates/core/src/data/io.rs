use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::Value;

use super::DatasetRecord;
use crate::error::{Error, Result};

/// First line of every dataset file.
pub const DATASET_HEADER: &str = "#tablegraph-dataset v1";

fn record_err(line: usize, doc_id: &str, field: &str, message: impl Into<String>) -> Error {
    Error::Record {
        line,
        doc_id: doc_id.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

/// Parses dataset text. A completely empty input is an empty dataset.
pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        None => return Ok(Vec::new()),
        Some((_, first)) if first.trim_end() == DATASET_HEADER => {}
        Some((_, first)) => {
            return Err(record_err(
                1,
                "",
                "header",
                format!("expected `{DATASET_HEADER}`, found `{}`", first.chars().take(40).collect::<String>()),
            ))
        }
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| record_err(line_no, "", "record", format!("malformed JSON: {e}")))?;
        let doc_id = value
            .get("id")
            .and_then(Value::as_str)
            .unwrap_or("")
            .to_string();
        let record: DatasetRecord = serde_json::from_value(value)
            .map_err(|e| record_err(line_no, &doc_id, "record", e.to_string()))?;
        record
            .validate()
            .map_err(|e| record_err(line_no, &doc_id, &e.field, e.message))?;
        if !seen.insert(record.id.clone()) {
            return Err(record_err(line_no, &doc_id, "id", "duplicate document id"));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

/// Header line, then one JSON object per record.
pub fn write_dataset(records: &[DatasetRecord], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{DATASET_HEADER}")?;
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_dataset(records: &[DatasetRecord], path: &Path) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        r.validate()
            .map_err(|e| record_err(0, &r.id, &e.field, e.message))?;
        if !seen.insert(&r.id) {
            return Err(record_err(0, &r.id, "id", "duplicate document id"));
        }
    }
    let mut buf = Vec::new();
    write_dataset(records, &mut buf).map_err(|e| Error::io(path, e))?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
