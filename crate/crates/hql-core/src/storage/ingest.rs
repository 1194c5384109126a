//! Corpus ingestion: CSV files become typed structured tables, JSON-lines
//! files become full-text documents.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{quote_ident, DatabaseHandle};
use crate::error::StorageError;
use crate::value::Value;

/// One unstructured document: a titled block of free text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub title: String,
    pub content: String,
}

/// Reads `{"title": ..., "content": ...}` JSON lines.
pub fn parse_docs_jsonl(reader: impl Read) -> Result<Vec<Document>, StorageError> {
    let mut text = String::new();
    let mut reader = reader;
    reader.read_to_string(&mut text)?;
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(line).map_err(|e| {
            StorageError::Ingest(format!("line {}: invalid document JSON: {e}", i + 1))
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Column storage class inferred from every value in the column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColumnType {
    Integer,
    Real,
    Text,
}

impl ColumnType {
    fn sql(self) -> &'static str {
        match self {
            ColumnType::Integer => "INTEGER",
            ColumnType::Real => "REAL",
            ColumnType::Text => "TEXT",
        }
    }
}

/// Loads a CSV file (header row required) into a new table named `table`.
/// A column is INTEGER or REAL only when every non-empty cell parses as
/// one; empty cells become NULL. Returns the row count.
pub fn ingest_csv(
    handle: &DatabaseHandle,
    table: &str,
    path: impl AsRef<Path>,
) -> Result<usize, StorageError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path.as_ref())
        .map_err(map_csv_error)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(map_csv_error)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        return Err(StorageError::Ingest("CSV has no header row".to_string()));
    }

    let mut records: Vec<Vec<String>> = Vec::new();
    for result in reader.records() {
        let record = result.map_err(map_csv_error)?;
        records.push(record.iter().map(|c| c.to_string()).collect());
    }

    let types: Vec<ColumnType> = (0..headers.len())
        .map(|col| infer_column_type(records.iter().map(|r| r[col].as_str())))
        .collect();

    let coldefs: Vec<String> = headers
        .iter()
        .zip(&types)
        .map(|(h, t)| format!("{} {}", quote_ident(h), t.sql()))
        .collect();
    handle.connection().execute_batch(&format!(
        "CREATE TABLE {} ({})",
        quote_ident(table),
        coldefs.join(", ")
    ))?;

    let placeholders: Vec<String> = (1..=headers.len()).map(|i| format!("?{i}")).collect();
    let mut stmt = handle.connection().prepare(&format!(
        "INSERT INTO {} VALUES ({})",
        quote_ident(table),
        placeholders.join(", ")
    ))?;
    for record in &records {
        let values: Vec<Value> =
            record.iter().zip(&types).map(|(cell, t)| cell_value(cell, *t)).collect();
        stmt.execute(rusqlite::params_from_iter(values.iter()))?;
    }
    Ok(records.len())
}

fn infer_column_type<'a>(cells: impl Iterator<Item = &'a str>) -> ColumnType {
    let mut best = ColumnType::Integer;
    let mut saw_value = false;
    for cell in cells {
        if cell.is_empty() {
            continue;
        }
        saw_value = true;
        if best == ColumnType::Integer && cell.parse::<i64>().is_err() {
            best = ColumnType::Real;
        }
        if best == ColumnType::Real && cell.parse::<f64>().is_err() {
            return ColumnType::Text;
        }
    }
    if saw_value {
        best
    } else {
        ColumnType::Text
    }
}

fn cell_value(cell: &str, t: ColumnType) -> Value {
    if cell.is_empty() {
        return Value::Null;
    }
    match t {
        ColumnType::Integer => cell.parse::<i64>().map(Value::Integer).unwrap_or(Value::Null),
        ColumnType::Real => cell.parse::<f64>().map(Value::Real).unwrap_or(Value::Null),
        ColumnType::Text => Value::Text(cell.to_string()),
    }
}

fn map_csv_error(e: csv::Error) -> StorageError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    StorageError::Ingest(format!("CSV line {line}: {e}"))
}
