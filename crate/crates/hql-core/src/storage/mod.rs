//! Hybrid database layer: structured tables plus an FTS5-indexed
//! `documents` table with BM25 ranking, native SQL execution, and the
//! session-table lifecycle used by the planner.

mod ingest;

pub use ingest::{ingest_csv, parse_docs_jsonl, Document};

use std::cell::Cell;
use std::path::Path;

use rusqlite::Connection;

use crate::error::StorageError;
use crate::value::Value;

/// Prefix of planner-created temporary tables.
pub const SESSION_PREFIX: &str = "__hql_sess_";

/// Full-text tokenizer for the documents index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FtsTokenizer {
    /// Sliding 3-character windows; enables substring-style matching.
    #[default]
    Trigram,
    /// SQLite's default word tokenizer.
    Unicode61,
}

impl FtsTokenizer {
    pub fn sql_name(self) -> &'static str {
        match self {
            FtsTokenizer::Trigram => "trigram",
            FtsTokenizer::Unicode61 => "unicode61",
        }
    }
}

/// Schema summary of one table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<String>,
    pub is_virtual: bool,
    /// Original CREATE statement text.
    pub create_sql: String,
}

/// Introspected shape of an open database.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatabaseContext {
    /// File path, or None for in-memory.
    pub path: Option<String>,
    pub tables: Vec<TableSchema>,
    pub documents_present: bool,
    pub fts_tokenizer: FtsTokenizer,
}

/// Plain result table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl ResultTable {
    pub fn empty() -> Self {
        ResultTable { columns: Vec::new(), rows: Vec::new() }
    }

    /// The single cell of a 1x1 result, if that is the shape.
    pub fn scalar(&self) -> Option<&Value> {
        match (self.rows.len(), self.rows.first().map(|r| r.len())) {
            (1, Some(1)) => Some(&self.rows[0][0]),
            _ => None,
        }
    }
}

/// A materialized temporary table, scoped to one query execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionTable {
    pub name: String,
    pub columns: Vec<String>,
    /// SQL (or a description) of what produced the table.
    pub origin: String,
    pub row_count: usize,
}

/// One connection to a hybrid database. Not shared across threads; each
/// query execution owns one handle.
pub struct DatabaseHandle {
    conn: Connection,
    tokenizer: FtsTokenizer,
    path: Option<String>,
    session_counter: Cell<u64>,
}

impl DatabaseHandle {
    /// Opens an existing database file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StorageError> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(StorageError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no such file: {}", path.display()),
            )));
        }
        let conn = Connection::open(path)?;
        let handle = DatabaseHandle {
            conn,
            tokenizer: FtsTokenizer::default(),
            path: Some(path.display().to_string()),
            session_counter: Cell::new(0),
        };
        handle.verify_is_database()?;
        Ok(handle)
    }

    /// Creates (or opens) a database file for ingestion.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, StorageError> {
        let path = path.as_ref();
        let conn = Connection::open(path)?;
        let handle = DatabaseHandle {
            conn,
            tokenizer: FtsTokenizer::default(),
            path: Some(path.display().to_string()),
            session_counter: Cell::new(0),
        };
        handle.verify_is_database()?;
        Ok(handle)
    }

    /// Opens a fresh in-memory database.
    pub fn open_memory() -> Result<Self, StorageError> {
        Ok(DatabaseHandle {
            conn: Connection::open_in_memory()?,
            tokenizer: FtsTokenizer::default(),
            path: None,
            session_counter: Cell::new(0),
        })
    }

    /// Selects the tokenizer used when the documents index is created.
    pub fn set_tokenizer(&mut self, tokenizer: FtsTokenizer) {
        self.tokenizer = tokenizer;
    }

    fn verify_is_database(&self) -> Result<(), StorageError> {
        self.conn.query_row("SELECT count(*) FROM sqlite_master", [], |_| Ok(())).map_err(
            |e| match e {
                rusqlite::Error::SqliteFailure(err, _)
                    if err.code == rusqlite::ErrorCode::NotADatabase =>
                {
                    StorageError::NotADatabase(
                        self.path.clone().unwrap_or_else(|| ":memory:".to_string()),
                    )
                }
                other => StorageError::Sqlite(other),
            },
        )
    }

    /// Introspects tables, skipping SQLite internals and FTS shadow tables.
    pub fn context(&self) -> Result<DatabaseContext, StorageError> {
        let mut stmt = self.conn.prepare(
            "SELECT name, sql FROM sqlite_master \
             WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name",
        )?;
        let raw: Vec<(String, String)> = stmt
            .query_map([], |row| {
                Ok((row.get::<_, String>(0)?, row.get::<_, Option<String>>(1)?.unwrap_or_default()))
            })?
            .collect::<Result<_, _>>()?;

        let virtual_names: Vec<String> = raw
            .iter()
            .filter(|(_, sql)| is_virtual_create(sql))
            .map(|(name, _)| name.clone())
            .collect();

        let mut tables = Vec::new();
        for (name, sql) in &raw {
            if is_fts_shadow(name, &virtual_names) {
                continue;
            }
            let columns = self.table_columns(name)?;
            tables.push(TableSchema {
                name: name.clone(),
                columns,
                is_virtual: is_virtual_create(sql),
                create_sql: sql.clone(),
            });
        }

        let documents_present = tables.iter().any(|t| t.name == "documents" && t.is_virtual);
        Ok(DatabaseContext {
            path: self.path.clone(),
            tables,
            documents_present,
            fts_tokenizer: self.tokenizer,
        })
    }

    pub fn table_columns(&self, table: &str) -> Result<Vec<String>, StorageError> {
        let mut stmt =
            self.conn.prepare(&format!("PRAGMA table_info({})", quote_ident(table)))?;
        let cols: Vec<String> = stmt
            .query_map([], |row| row.get::<_, String>(1))?
            .collect::<Result<_, _>>()?;
        Ok(cols)
    }

    /// Adds documents to the FTS index, creating it on first use.
    pub fn ingest_documents(&self, docs: &[Document]) -> Result<usize, StorageError> {
        for (i, doc) in docs.iter().enumerate() {
            if doc.title.trim().is_empty() {
                return Err(StorageError::Ingest(format!("document {i} has an empty title")));
            }
        }
        self.conn.execute_batch(&format!(
            "CREATE VIRTUAL TABLE IF NOT EXISTS \"documents\" \
             USING fts5(title, content, tokenize = '{}')",
            self.tokenizer.sql_name()
        ))?;
        let mut stmt =
            self.conn.prepare("INSERT INTO \"documents\" (title, content) VALUES (?1, ?2)")?;
        for doc in docs {
            stmt.execute(rusqlite::params![doc.title, doc.content])?;
        }
        Ok(docs.len())
    }

    /// Top-k documents by ascending BM25 rank (best first).
    pub fn bm25_search(&self, match_query: &str, k: usize) -> Result<ResultTable, StorageError> {
        let sql = "SELECT title, content, rank FROM \"documents\" \
                   WHERE \"documents\" MATCH ?1 ORDER BY rank LIMIT ?2";
        let mut stmt = self.conn.prepare(sql).map_err(map_fts_error)?;
        let rows = stmt
            .query_map(rusqlite::params![match_query, k as i64], |row| {
                Ok(vec![
                    Value::from(row.get::<_, rusqlite::types::Value>(0)?),
                    Value::from(row.get::<_, rusqlite::types::Value>(1)?),
                    Value::from(row.get::<_, rusqlite::types::Value>(2)?),
                ])
            })
            .map_err(map_fts_error)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(map_fts_error)?;
        Ok(ResultTable {
            columns: vec!["title".to_string(), "content".to_string(), "rank".to_string()],
            rows,
        })
    }

    /// Runs ingredient-free SQL and collects the full result.
    pub fn execute_native(&self, sql: &str) -> Result<ResultTable, StorageError> {
        let mut stmt = self.conn.prepare(sql)?;
        let columns: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
        let n = columns.len();
        let rows = stmt
            .query_map([], |row| {
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    out.push(Value::from(row.get::<_, rusqlite::types::Value>(i)?));
                }
                Ok(out)
            })?
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ResultTable { columns, rows })
    }

    /// Materializes a subquery into a fresh temp session table.
    pub fn materialize(&self, subquery: &str) -> Result<SessionTable, StorageError> {
        let name = self.next_session_name();
        self.conn
            .execute_batch(&format!("CREATE TEMP TABLE {} AS {subquery}", quote_ident(&name)))?;
        self.describe_session_table(name, subquery.to_string())
    }

    /// Materializes explicit rows into a fresh temp session table. Columns
    /// carry no declared type, so inserted values keep their storage class.
    pub fn materialize_rows(
        &self,
        columns: &[&str],
        rows: &[Vec<Value>],
        origin: &str,
    ) -> Result<SessionTable, StorageError> {
        let name = self.next_session_name();
        let collist: Vec<String> = columns.iter().map(|c| quote_ident(c)).collect();
        self.conn.execute_batch(&format!(
            "CREATE TEMP TABLE {} ({})",
            quote_ident(&name),
            collist.join(", ")
        ))?;
        let placeholders: Vec<String> = (1..=columns.len()).map(|i| format!("?{i}")).collect();
        let mut stmt = self.conn.prepare(&format!(
            "INSERT INTO {} VALUES ({})",
            quote_ident(&name),
            placeholders.join(", ")
        ))?;
        for row in rows {
            stmt.execute(rusqlite::params_from_iter(row.iter()))?;
        }
        self.describe_session_table(name, origin.to_string())
    }

    fn describe_session_table(
        &self,
        name: String,
        origin: String,
    ) -> Result<SessionTable, StorageError> {
        let row_count: i64 = self.conn.query_row(
            &format!("SELECT COUNT(*) FROM {}", quote_ident(&name)),
            [],
            |row| row.get(0),
        )?;
        let columns = self.table_columns(&name)?;
        Ok(SessionTable { name, columns, origin, row_count: row_count as usize })
    }

    fn next_session_name(&self) -> String {
        let n = self.session_counter.get();
        self.session_counter.set(n + 1);
        format!("{SESSION_PREFIX}{n}")
    }

    pub fn drop_session_table(&self, name: &str) -> Result<(), StorageError> {
        self.conn.execute_batch(&format!("DROP TABLE IF EXISTS temp.{}", quote_ident(name)))?;
        Ok(())
    }

    /// Drops every engine-created session table on this connection.
    pub fn drop_all_session_tables(&self) -> Result<(), StorageError> {
        for name in self.session_table_names()? {
            self.drop_session_table(&name)?;
        }
        Ok(())
    }

    /// Names of engine-created temp tables currently live on this handle.
    pub fn session_table_names(&self) -> Result<Vec<String>, StorageError> {
        let mut stmt = self.conn.prepare(
            "SELECT name FROM sqlite_temp_master WHERE type = 'table' AND name LIKE ?1",
        )?;
        let names: Vec<String> = stmt
            .query_map([format!("{SESSION_PREFIX}%")], |row| row.get(0))?
            .collect::<Result<_, _>>()?;
        Ok(names)
    }

    /// Direct access for modules that need prepared statements.
    pub fn connection(&self) -> &Connection {
        &self.conn
    }
}

fn is_virtual_create(sql: &str) -> bool {
    sql.trim_start().to_ascii_uppercase().starts_with("CREATE VIRTUAL TABLE")
}

/// FTS5 creates `<name>_data`, `<name>_idx`, ... shadow tables.
fn is_fts_shadow(name: &str, virtual_names: &[String]) -> bool {
    const SUFFIXES: &[&str] = &["_data", "_idx", "_content", "_docsize", "_config"];
    virtual_names.iter().any(|v| {
        SUFFIXES.iter().any(|s| name.len() == v.len() + s.len() && name == format!("{v}{s}"))
    })
}

fn map_fts_error(e: rusqlite::Error) -> StorageError {
    let text = e.to_string();
    if text.contains("fts5") || text.contains("syntax error") {
        StorageError::FtsSyntax(text)
    } else {
        StorageError::Sqlite(e)
    }
}

/// Double-quotes an identifier for SQL, doubling embedded quotes.
pub fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}
