//! Parser-model input preparation: schema-as-code serialization, fuzzy
//! bridge hints that anchor question spans to stored cell values, and
//! few-shot prompt assembly.
//!
//! The parser model never sees document bodies. Structured tables are
//! serialized as their CREATE clauses plus a handful of example rows,
//! while the `documents` index contributes only its virtual-table
//! declaration — question-relevant document content reaches the engine at
//! execution time through the query itself, not through the prompt.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::StorageError;
use crate::storage::{quote_ident, DatabaseHandle, ResultTable};

/// Default similarity floor for [`bridge_match`].
pub const DEFAULT_BRIDGE_THRESHOLD: f64 = 0.7;

/// Spans and values shorter than this (after normalization) are never
/// matched; tiny fragments make trigram sets degenerate.
const MIN_SPAN_CHARS: usize = 4;

/// Upper bound on candidate question-window length, in words.
const MAX_WINDOW_WORDS: usize = 8;

/// System-message instruction block handed to the parser model. The user
/// message built by [`build_parser_prompt`] follows
/// [`DEFAULT_USER_TEMPLATE`].
pub const PARSER_INSTRUCTIONS: &str = "\
Generate BlendSQL given the question to answer the question correctly.
BlendSQL is a superset of SQLite, which adds external function calls for information not found within native SQLite.
These external functions should be wrapped in double curly brackets.

If question-relevant column(s) contents are not suitable for SQL comparisons or calculations, map it to a new column using the new function:
    `LLMMap('question', '{table}::{column}')`

If mapping to a new column still cannot answer the question with valid SQL, turn to an end-to-end solution using the new function:
    `LLMQA('{question}', ({blendsql}))`

If we need to do a `join` operation where there is imperfect alignment between table values, use the new function:
    `LLMJoin(({blendsql}), options='{table}::{column}')`

ONLY use these BlendSQL functions if necessary.
Answer parts of the question in vanilla SQL, if possible.";

/// User-message template. Slots are replaced literally; no conditional
/// logic. Custom templates (loaded from text files) use the same slots:
/// `{{few_shot_examples}}`, `{{serialized_db}}`, `{{question}}`.
pub const DEFAULT_USER_TEMPLATE: &str = "\
{{few_shot_examples}}

{{serialized_db}}
Question: {{question}}
BlendSQL:";

/// Schema rendered as code for the parser prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedSchema {
    /// CREATE clauses, each structured table followed by a comment block
    /// of example rows; `documents` appears as its declaration only.
    pub text: String,
    /// Example-row budget the text was rendered with.
    pub n_rows: usize,
}

/// One fuzzy match between a question span and a stored cell value.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeHint {
    /// The span as it appears in the question (edge punctuation trimmed).
    pub question_span: String,
    pub table: String,
    pub column: String,
    /// The cell value, verbatim as stored.
    pub matched_value: String,
    /// Trigram-overlap similarity in [0, 1].
    pub score: f64,
}

/// One exemplar for the few-shot prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShot {
    pub question: String,
    pub blendsql: String,
}

/// Assembled parser-model prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParserPrompt {
    pub system: String,
    pub user: String,
    /// Assembly trace: what was dropped to satisfy the budget, if anything.
    pub notes: Vec<String>,
}

/// Prompt assembly configuration.
#[derive(Debug, Clone)]
pub struct PromptConfig {
    /// User-message template with the three named slots.
    pub template: String,
    /// Total prompt budget (system + user), in characters. None = unlimited.
    pub budget_chars: Option<usize>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig { template: DEFAULT_USER_TEMPLATE.to_string(), budget_chars: None }
    }
}

/// Prompt-preparation failure.
#[derive(Debug, Error)]
pub enum ContextError {
    /// Even after dropping example rows and every few-shot exemplar, the
    /// prompt exceeds the configured budget.
    #[error("prompt of {used} chars exceeds budget of {budget}")]
    PromptTooLarge { used: usize, budget: usize },
    #[error("few-shot file {0}")]
    FewShots(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Renders the database schema as code: one CREATE clause per table, each
/// structured table followed by a comment block holding up to `n` example
/// rows. Virtual tables (the `documents` index) contribute their
/// declaration only — never any rows. Structured tables come first, in
/// name order, then virtual tables.
pub fn serialize_schema(
    handle: &DatabaseHandle,
    n: usize,
) -> Result<SerializedSchema, StorageError> {
    let ctx = handle.context()?;
    let mut blocks = Vec::new();
    let (plain, virtuals): (Vec<_>, Vec<_>) =
        ctx.tables.iter().partition(|t| !t.is_virtual);
    for table in plain.iter().chain(virtuals.iter()) {
        let mut block = table.create_sql.clone();
        if !table.is_virtual && n > 0 {
            let rows = handle.execute_native(&format!(
                "SELECT * FROM {} LIMIT {}",
                quote_ident(&table.name),
                n
            ))?;
            block.push('\n');
            block.push_str(&render_example_rows(&table.name, n, &rows));
        }
        blocks.push(block);
    }
    Ok(SerializedSchema { text: blocks.join("\n\n"), n_rows: n })
}

/// Comment block of example rows, column-aligned under a header line.
fn render_example_rows(table: &str, n: usize, rows: &ResultTable) -> String {
    let shown: Vec<Vec<String>> =
        rows.rows.iter().take(n).map(|r| r.iter().map(|v| v.display()).collect()).collect();
    let mut out = String::from("/*\n");
    out.push_str(&format!("{} example rows:\n", shown.len()));
    out.push_str(&format!("SELECT * FROM {} LIMIT {}\n", display_ident(table), n));
    let widths: Vec<usize> = rows
        .columns
        .iter()
        .enumerate()
        .map(|(i, h)| {
            shown
                .iter()
                .map(|r| r[i].chars().count())
                .chain(std::iter::once(h.chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let format_line = |fields: &[String]| {
        let mut line = String::new();
        for (i, field) in fields.iter().enumerate() {
            line.push(' ');
            for _ in 0..widths[i].saturating_sub(field.chars().count()) {
                line.push(' ');
            }
            line.push_str(field);
        }
        line
    };
    out.push_str(&format_line(&rows.columns));
    out.push('\n');
    for row in &shown {
        out.push_str(&format_line(row));
        out.push('\n');
    }
    out.push_str("*/");
    out
}

/// Renders a table name the way a person would type it: bare when it is a
/// plain identifier, quoted otherwise.
fn display_ident(name: &str) -> String {
    let mut chars = name.chars();
    let plain = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if plain {
        name.to_string()
    } else {
        quote_ident(name)
    }
}

/// Scans every structured-table column for cell values that fuzzily match
/// a span of the question, returning hints sorted by score descending.
/// Document title and content are never scanned. A value's candidate
/// windows run from its own word count up to two words longer, so partial
/// mentions of multi-word values do not masquerade as perfect matches.
pub fn bridge_match(
    question: &str,
    handle: &DatabaseHandle,
    threshold: f64,
) -> Result<Vec<BridgeHint>, StorageError> {
    let ctx = handle.context()?;
    let words: Vec<&str> = question.split_whitespace().collect();
    let norm_words: Vec<String> = words.iter().map(|w| normalize(w)).collect();
    let mut hints: Vec<BridgeHint> = Vec::new();
    for table in ctx.tables.iter().filter(|t| !t.is_virtual) {
        for column in &table.columns {
            let sql = format!(
                "SELECT DISTINCT CAST({c} AS TEXT) FROM {t} WHERE {c} IS NOT NULL",
                c = quote_ident(column),
                t = quote_ident(&table.name)
            );
            for row in &handle.execute_native(&sql)?.rows {
                let value = row[0].display();
                let value_norm = normalize(&value);
                if value_norm.chars().count() < MIN_SPAN_CHARS {
                    continue;
                }
                let value_grams = trigrams(&value_norm);
                let value_words = value_norm.split(' ').count();
                let longest = (value_words + 2).min(words.len()).min(MAX_WINDOW_WORDS);
                let mut best: Option<(f64, usize, usize)> = None;
                for len in value_words..=longest {
                    for start in 0..=(words.len() - len) {
                        let span_norm = join_nonempty(&norm_words[start..start + len]);
                        if span_norm.chars().count() < MIN_SPAN_CHARS {
                            continue;
                        }
                        let score = overlap(&trigrams(&span_norm), &value_grams);
                        if score >= threshold && best.map_or(true, |(b, _, _)| score > b) {
                            best = Some((score, start, len));
                        }
                    }
                }
                if let Some((score, start, len)) = best {
                    let span = words[start..start + len]
                        .join(" ")
                        .trim_matches(|c: char| !c.is_alphanumeric())
                        .to_string();
                    hints.push(BridgeHint {
                        question_span: span,
                        table: table.name.clone(),
                        column: column.clone(),
                        matched_value: value,
                        score,
                    });
                }
            }
        }
    }
    hints.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.table.cmp(&b.table))
            .then_with(|| a.column.cmp(&b.column))
            .then_with(|| a.matched_value.cmp(&b.matched_value))
    });
    Ok(hints)
}

/// Character-trigram overlap similarity between two strings, after
/// lowercasing and punctuation stripping: |A ∩ B| / min(|A|, |B|).
pub fn trigram_overlap(a: &str, b: &str) -> f64 {
    let (na, nb) = (normalize(a), normalize(b));
    if na.is_empty() || nb.is_empty() {
        return 0.0;
    }
    overlap(&trigrams(&na), &trigrams(&nb))
}

/// Lowercases, keeps alphanumerics, drops punctuation, collapses runs of
/// whitespace to single spaces.
fn normalize(s: &str) -> String {
    let mut out = String::new();
    let mut pending_space = false;
    for c in s.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else if c.is_alphanumeric() {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.extend(c.to_lowercase());
        }
    }
    out
}

fn join_nonempty(words: &[String]) -> String {
    words.iter().filter(|w| !w.is_empty()).cloned().collect::<Vec<_>>().join(" ")
}

fn trigrams(s: &str) -> HashSet<String> {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() < 3 {
        return HashSet::from([s.to_string()]);
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

fn overlap(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let smaller = a.len().min(b.len());
    if smaller == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / smaller as f64
}

/// Loads few-shot exemplars from a JSON array of
/// `{"question": ..., "blendsql": ...}` objects.
pub fn load_few_shots(path: &Path) -> Result<Vec<FewShot>, ContextError> {
    let data = std::fs::read_to_string(path)
        .map_err(|e| ContextError::FewShots(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&data)
        .map_err(|e| ContextError::FewShots(format!("{}: {e}", path.display())))
}

/// Assembles the parser prompt with the default template and no budget.
pub fn build_parser_prompt(
    few_shots: &[FewShot],
    schema: &SerializedSchema,
    question: &str,
    hints: &[BridgeHint],
) -> ParserPrompt {
    build_parser_prompt_with(&PromptConfig::default(), few_shots, schema, question, hints)
        .expect("prompt assembly cannot fail without a budget")
}

/// Assembles the parser prompt: the fixed instruction block as the system
/// message, and the template-rendered user message (few-shots, then the
/// serialized schema with a `-- matched values:` hint block, then the
/// question). When a budget is configured and exceeded, example rows are
/// dropped from the schema first, then few-shots from the end, each
/// recorded as a note; if the prompt still does not fit,
/// [`ContextError::PromptTooLarge`] is returned.
pub fn build_parser_prompt_with(
    config: &PromptConfig,
    few_shots: &[FewShot],
    schema: &SerializedSchema,
    question: &str,
    hints: &[BridgeHint],
) -> Result<ParserPrompt, ContextError> {
    let system = PARSER_INSTRUCTIONS.to_string();
    let render = |shots: &[FewShot], schema_text: &str| -> String {
        render_user(&config.template, shots, schema_text, question, hints)
    };
    let fits = |user: &str| match config.budget_chars {
        None => true,
        Some(budget) => system.chars().count() + user.chars().count() <= budget,
    };

    let mut notes = Vec::new();
    let mut schema_text = schema.text.clone();
    let mut shots = few_shots.to_vec();

    let mut user = render(&shots, &schema_text);
    if !fits(&user) {
        schema_text = strip_example_rows(&schema_text);
        notes.push("dropped schema example rows to fit the prompt budget".to_string());
        user = render(&shots, &schema_text);
    }
    let mut dropped_shots = 0;
    while !fits(&user) && !shots.is_empty() {
        shots.pop();
        dropped_shots += 1;
        user = render(&shots, &schema_text);
    }
    if dropped_shots > 0 {
        notes.push(format!(
            "dropped {dropped_shots} few-shot example(s) to fit the prompt budget"
        ));
    }
    if !fits(&user) {
        return Err(ContextError::PromptTooLarge {
            used: system.chars().count() + user.chars().count(),
            budget: config.budget_chars.unwrap_or(0),
        });
    }
    Ok(ParserPrompt { system, user, notes })
}

fn render_user(
    template: &str,
    shots: &[FewShot],
    schema_text: &str,
    question: &str,
    hints: &[BridgeHint],
) -> String {
    let shots_text = shots
        .iter()
        .map(|s| format!("Question: {}\nBlendSQL: {}", s.question.trim(), s.blendsql.trim()))
        .collect::<Vec<_>>()
        .join("\n\n");
    let mut db_section = schema_text.trim_end().to_string();
    if !hints.is_empty() {
        db_section.push_str("\n\n-- matched values:");
        for h in hints {
            db_section.push_str(&format!(
                "\n-- {}.{}: '{}'",
                h.table,
                h.column,
                h.matched_value.replace('\'', "''")
            ));
        }
    }
    template
        .replace("{{few_shot_examples}}", &shots_text)
        .replace("{{serialized_db}}", &db_section)
        .replace("{{question}}", question)
        .trim_start()
        .to_string()
}

/// Removes every `/* ... */` example-row block, leaving the CREATE clauses.
fn strip_example_rows(text: &str) -> String {
    let mut out = String::new();
    let mut rest = text;
    while let Some(start) = rest.find("/*") {
        out.push_str(rest[..start].trim_end_matches('\n'));
        rest = match rest[start..].find("*/") {
            Some(end) => &rest[start + end + 2..],
            None => "",
        };
    }
    out.push_str(rest);
    out
}
