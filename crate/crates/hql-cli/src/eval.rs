//! Evaluation harness: executes one query per gold record, scores the
//! denotation against the gold answers, and aggregates accuracy and
//! failure-mode fractions into a deterministic report.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use hql_core::blender::Blender;
use hql_core::parser::parse_query;
use hql_core::planner::{Planner, PlannerConfig};
use hql_core::storage::DatabaseHandle;

use crate::normalize::normalize_denotation;
use crate::CliError;

/// One question with its accepted answers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldRecord {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
}

/// How one record's execution ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Answered,
    NoResult,
    SyntaxError,
    ExecutionError,
    FellBack,
}

/// Scored outcome for one gold record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    /// Result cells in row order, None when nothing was produced.
    pub predicted: Option<Vec<String>>,
    pub status: EvalStatus,
    pub denotation_correct: bool,
    pub values_passed: u64,
    pub prompt_chars: u64,
    /// Parser or executor message for the error statuses.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Aggregate metrics over every record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub accuracy: f64,
    pub bad_syntax_fraction: f64,
    pub no_result_fraction: f64,
    pub execution_error_fraction: f64,
    pub fell_back_fraction: f64,
    pub mean_values_passed: f64,
    pub mean_prompt_chars: f64,
    /// Gold ids that had no prediction; reported, scored incorrect.
    pub missing_predictions: Vec<String>,
}

/// Everything the evaluation loop needs besides the records themselves.
pub struct EvalConfig<'a> {
    /// Single database file shared by all records, or a directory holding
    /// one `{id}.db` per record.
    pub db: PathBuf,
    pub blender: &'a dyn Blender,
    pub jobs: usize,
    pub pushdown: bool,
    /// Invoked when a record ends in NoResult; Some(answer) turns the
    /// record into FellBack with that answer scored.
    pub fallback: Option<&'a (dyn Fn(&GoldRecord, &DatabaseHandle) -> Option<String> + Sync)>,
}

/// Reads gold records from JSONL: `{"id", "question", "answers": [...]}`.
pub fn load_gold(path: &Path) -> Result<Vec<GoldRecord>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new(format!("gold file {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: GoldRecord = serde_json::from_str(line).map_err(|e| {
            CliError::new(format!("gold file {} line {}: {e}", path.display(), i + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Reads predicted queries from JSONL: `{"id", "blendsql"}`.
pub fn load_predictions(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    #[derive(Deserialize)]
    struct Prediction {
        id: String,
        blendsql: String,
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new(format!("predictions file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(line).map_err(|e| {
            CliError::new(format!("predictions file {} line {}: {e}", path.display(), i + 1))
        })?;
        out.push((p.id, p.blendsql));
    }
    Ok(out)
}

/// Denotation comparison: the sets of normalized predicted cells and
/// normalized gold answers must be equal.
pub fn denotation_matches(predicted: &[String], gold: &[String]) -> bool {
    let canon = |items: &[String]| -> BTreeSet<String> {
        items.iter().map(|s| normalize_denotation(s)).collect()
    };
    !gold.is_empty() && canon(predicted) == canon(gold)
}

/// Runs every gold record against its predicted query and aggregates the
/// report. `predictions` maps record id → query text; records without a
/// prediction are scored incorrect and listed in the report. Record order
/// in the output matches gold order regardless of `jobs`.
pub fn evaluate(
    config: &EvalConfig,
    gold: &[GoldRecord],
    predictions: &[(String, String)],
) -> Result<(Vec<EvalRecord>, EvalReport), CliError> {
    let lookup: std::collections::BTreeMap<&str, &str> =
        predictions.iter().map(|(id, q)| (id.as_str(), q.as_str())).collect();

    let slots: Vec<Mutex<Option<EvalRecord>>> =
        gold.iter().map(|_| Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let workers = config.jobs.max(1).min(gold.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= gold.len() {
                    break;
                }
                let record = &gold[i];
                let evaluated = match lookup.get(record.id.as_str()) {
                    Some(query) => eval_one(config, record, query),
                    None => EvalRecord {
                        id: record.id.clone(),
                        question: record.question.clone(),
                        gold_answers: record.answers.clone(),
                        predicted: None,
                        status: EvalStatus::NoResult,
                        denotation_correct: false,
                        values_passed: 0,
                        prompt_chars: 0,
                        error: Some("no prediction for this id".to_string()),
                    },
                };
                *slots[i].lock().expect("slot poisoned") = Some(evaluated);
            });
        }
    });

    let records: Vec<EvalRecord> = slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot poisoned").expect("slot filled"))
        .collect();
    let report = summarize(&records, &lookup, gold);
    Ok((records, report))
}

/// Parses and executes one query, classifying the outcome.
fn eval_one(config: &EvalConfig, gold: &GoldRecord, query: &str) -> EvalRecord {
    let mut record = EvalRecord {
        id: gold.id.clone(),
        question: gold.question.clone(),
        gold_answers: gold.answers.clone(),
        predicted: None,
        status: EvalStatus::NoResult,
        denotation_correct: false,
        values_passed: 0,
        prompt_chars: 0,
        error: None,
    };

    let ast = match parse_query(query) {
        Ok(ast) => ast,
        Err(e) => {
            record.status = EvalStatus::SyntaxError;
            record.error = Some(e.to_string());
            return record;
        }
    };
    let handle = match open_record_db(&config.db, &gold.id) {
        Ok(handle) => handle,
        Err(e) => {
            record.status = EvalStatus::ExecutionError;
            record.error = Some(e.to_string());
            return record;
        }
    };
    let registry = hql_core::ingredients::Registry::new();
    let planner = Planner::with_config(
        &handle,
        &registry,
        PlannerConfig { pushdown: config.pushdown, ..PlannerConfig::default() },
    );
    let smoothie = match planner.execute(&ast, config.blender) {
        Ok(smoothie) => smoothie,
        Err(e) => {
            record.status = EvalStatus::ExecutionError;
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.values_passed = smoothie.totals.values_passed as u64;
    record.prompt_chars = smoothie.totals.prompt_chars as u64;

    match smoothie.outcome {
        hql_core::planner::Outcome::Answered => {
            let cells: Vec<String> = smoothie
                .result
                .rows
                .iter()
                .flat_map(|row| row.iter().map(|v| v.display()))
                .collect();
            record.status = EvalStatus::Answered;
            record.denotation_correct = denotation_matches(&cells, &gold.answers);
            record.predicted = Some(cells);
        }
        hql_core::planner::Outcome::NoResult => {
            if let Some(hook) = config.fallback {
                if let Some(answer) = hook(gold, &handle) {
                    record.status = EvalStatus::FellBack;
                    record.denotation_correct =
                        denotation_matches(std::slice::from_ref(&answer), &gold.answers);
                    record.predicted = Some(vec![answer]);
                    return record;
                }
            }
            record.status = EvalStatus::NoResult;
        }
    }
    record
}

/// Opens the record's database: `{db}/{id}.db` when `db` is a directory,
/// the file itself otherwise. Each record owns its handle.
fn open_record_db(db: &Path, id: &str) -> Result<DatabaseHandle, CliError> {
    let path = if db.is_dir() { db.join(format!("{id}.db")) } else { db.to_path_buf() };
    DatabaseHandle::open(&path)
        .map_err(|e| CliError::new(format!("database {}: {e}", path.display())))
}

fn summarize(
    records: &[EvalRecord],
    predictions: &std::collections::BTreeMap<&str, &str>,
    gold: &[GoldRecord],
) -> EvalReport {
    let total = records.len();
    let denom = total.max(1) as f64;
    let count = |status: EvalStatus| {
        records.iter().filter(|r| r.status == status).count() as f64 / denom
    };
    EvalReport {
        total,
        accuracy: records.iter().filter(|r| r.denotation_correct).count() as f64 / denom,
        bad_syntax_fraction: count(EvalStatus::SyntaxError),
        no_result_fraction: count(EvalStatus::NoResult),
        execution_error_fraction: count(EvalStatus::ExecutionError),
        fell_back_fraction: count(EvalStatus::FellBack),
        mean_values_passed: records.iter().map(|r| r.values_passed as f64).sum::<f64>() / denom,
        mean_prompt_chars: records.iter().map(|r| r.prompt_chars as f64).sum::<f64>() / denom,
        missing_predictions: gold
            .iter()
            .filter(|g| !predictions.contains_key(g.id.as_str()))
            .map(|g| g.id.clone())
            .collect(),
    }
}

/// Renders records as JSONL, one record per line, in input order.
pub fn records_jsonl(records: &[EvalRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}
