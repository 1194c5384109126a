//! The four built-in ingredient semantics — Map, QA, Join, Validate — plus
//! the registry for user-defined ingredients.

pub mod prompts;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::blender::{complete_constrained, Blender, BlenderUsage};
use crate::error::BlenderError;
use crate::parser::{IngredientClass, IngredientKind, IngredientNames, OutputHint};
use crate::storage::ResultTable;
use crate::value::Value;

use prompts::CELL_CAP;

/// Values per Map prompt.
pub const MAP_BATCH: usize = 5;

/// Concurrent Map batches in flight.
const MAP_THREADS: usize = 4;

/// Ingredient-level failure.
#[derive(Debug, Error)]
pub enum IngredientError {
    /// The context subset had zero rows; the query has no answer.
    #[error("empty context: the subset passed to the ingredient has no rows")]
    EmptyContext,
    #[error(transparent)]
    Blender(#[from] BlenderError),
}

/// Per-run accounting shared by all ingredients.
#[derive(Debug, Clone, Default)]
pub struct RunStats {
    /// Model calls actually issued.
    pub calls: usize,
    pub usage: BlenderUsage,
    /// Human-readable anomalies (failed cells, dropped lines).
    pub warnings: Vec<String>,
}

impl RunStats {
    fn absorb(&mut self, usage: BlenderUsage) {
        self.calls += 1;
        self.usage.prompt_chars += usage.prompt_chars;
        self.usage.output_chars += usage.output_chars;
    }
}

/// Unary transformation over the distinct values of one column.
#[derive(Debug, Clone)]
pub struct MapTask {
    pub question: String,
    /// Distinct, NULL-free, in first-appearance order.
    pub values: Vec<Value>,
    pub hint: OutputHint,
}

/// Table subset to single scalar.
#[derive(Debug, Clone)]
pub struct QaTask {
    pub question: String,
    pub context: ResultTable,
    /// Allowed answers, when restricted to a column's values.
    pub options: Option<Vec<String>>,
}

/// Alignment of two value sets into join pairs.
#[derive(Debug, Clone)]
pub struct JoinTask {
    pub left: Vec<String>,
    pub right: Vec<String>,
    /// Optional alignment instruction; empty means the default.
    pub question: String,
}

/// Boolean claim over a table subset.
#[derive(Debug, Clone)]
pub struct ValidateTask {
    pub claim: String,
    pub context: ResultTable,
}

#[derive(Debug)]
pub struct MapRun {
    /// Same length and order as the task's values.
    pub outputs: Vec<Value>,
    pub stats: RunStats,
}

#[derive(Debug)]
pub struct QaRun {
    pub answer: Value,
    pub stats: RunStats,
}

#[derive(Debug)]
pub struct JoinRun {
    /// (left value, right value) pairs; left values unique.
    pub pairs: Vec<(String, String)>,
    pub stats: RunStats,
}

#[derive(Debug)]
pub struct ValidateRun {
    pub verdict: bool,
    pub stats: RunStats,
}

fn parse_boolean(item: &str) -> Option<Value> {
    match item.trim().to_ascii_lowercase().as_str() {
        "true" => Some(Value::Integer(1)),
        "false" => Some(Value::Integer(0)),
        _ => None,
    }
}

/// Splits a semicolon-delimited batch answer into `expected` cells, padding
/// with NULL and warning when the shape is off.
fn parse_batch(
    text: &str,
    expected: usize,
    boolean: bool,
    stats: &mut RunStats,
    batch_no: usize,
) -> Vec<Value> {
    let items: Vec<&str> =
        text.split(';').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.len() != expected {
        stats.warnings.push(format!(
            "batch {batch_no}: expected {expected} answers, got {}",
            items.len()
        ));
    }
    (0..expected)
        .map(|i| match items.get(i) {
            Some(item) if boolean => parse_boolean(item).unwrap_or_else(|| {
                stats.warnings.push(format!(
                    "batch {batch_no}: {item:?} is not a boolean; cell set to NULL"
                ));
                Value::Null
            }),
            Some(item) => Value::from_model_text(item),
            None => Value::Null,
        })
        .collect()
}

/// Runs Map over its values in batches; batches run concurrently. Failed
/// batches become NULL cells with a warning unless `strict` is set.
pub fn exec_map(
    task: &MapTask,
    blender: &dyn Blender,
    strict: bool,
) -> Result<MapRun, IngredientError> {
    if task.values.is_empty() {
        return Ok(MapRun { outputs: Vec::new(), stats: RunStats::default() });
    }
    let batches: Vec<&[Value]> = task.values.chunks(MAP_BATCH).collect();
    let results: Vec<Result<_, BlenderError>> = run_batches(&batches, |batch| {
        let req = prompts::map_request(&task.question, batch, &task.hint);
        if req.constraint.is_none() {
            blender.complete(&req)
        } else {
            complete_constrained(blender, &req)
        }
    });

    let boolean = task.hint.is_boolean();
    let mut stats = RunStats::default();
    let mut outputs = Vec::with_capacity(task.values.len());
    for (batch_no, (batch, result)) in batches.iter().zip(results).enumerate() {
        match result {
            Ok(resp) => {
                stats.absorb(resp.usage);
                outputs.extend(parse_batch(&resp.text, batch.len(), boolean, &mut stats, batch_no));
            }
            Err(err) if !strict => {
                stats
                    .warnings
                    .push(format!("batch {batch_no}: model call failed ({err}); cells set to NULL"));
                outputs.extend(std::iter::repeat_n(Value::Null, batch.len()));
            }
            Err(err) => return Err(err.into()),
        }
    }
    Ok(MapRun { outputs, stats })
}

/// Runs `work` over all batches on a small thread pool, preserving order.
fn run_batches<T: Send>(
    batches: &[&[Value]],
    work: impl Fn(&[Value]) -> Result<T, BlenderError> + Sync,
) -> Vec<Result<T, BlenderError>> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let mut slots: Vec<Option<Result<T, BlenderError>>> = Vec::new();
    slots.resize_with(batches.len(), || None);
    let slots = Mutex::new(slots);
    let next = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..MAP_THREADS.min(batches.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= batches.len() {
                    break;
                }
                let result = work(batches[i]);
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|slot| slot.expect("batch ran")).collect()
}

/// Case-folded, whitespace-collapsed form used to match unconstrained
/// answers back onto canonical options.
fn normalize_option(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn match_option<'a>(answer: &str, options: &'a [String]) -> Option<&'a str> {
    let norm = normalize_option(answer);
    options.iter().find(|o| normalize_option(o) == norm).map(|o| o.as_str())
}

/// Runs QA over a rendered context, enforcing options membership.
pub fn exec_qa(task: &QaTask, blender: &dyn Blender) -> Result<QaRun, IngredientError> {
    if task.context.rows.is_empty() {
        return Err(IngredientError::EmptyContext);
    }
    let mut stats = RunStats::default();

    if let Some(options) = &task.options {
        if options.is_empty() {
            return Err(BlenderError::Request("empty options set".to_string()).into());
        }
        if options.len() == 1 {
            return Ok(QaRun { answer: Value::Text(options[0].clone()), stats });
        }
        let context = prompts::render_context(&task.context, CELL_CAP);
        let req = prompts::qa_request(&task.question, &context, Some(options));

        let first = blender.complete(&req)?;
        stats.absorb(first.usage);
        let answer = first.text.trim().to_string();
        if (first.constrained && options.iter().any(|o| *o == answer))
            || match_option(&answer, options).is_some()
        {
            let canonical = match_option(&answer, options).unwrap();
            return Ok(QaRun { answer: Value::Text(canonical.to_string()), stats });
        }

        let mut retry = req.clone();
        retry.user_prompt = format!(
            "{}\n\nYour previous answer {answer:?} is not one of the allowed values. Answer \
             again with exactly one allowed value.",
            req.user_prompt
        );
        let second = blender.complete(&retry)?;
        stats.absorb(second.usage);
        match match_option(second.text.trim(), options) {
            Some(canonical) => Ok(QaRun { answer: Value::Text(canonical.to_string()), stats }),
            None => Err(BlenderError::ConstraintViolation(format!(
                "{:?} is not one of the {} allowed values",
                second.text.trim(),
                options.len()
            ))
            .into()),
        }
    } else {
        let context = prompts::render_context(&task.context, CELL_CAP);
        let req = prompts::qa_request(&task.question, &context, None);
        let resp = blender.complete(&req)?;
        stats.absorb(resp.usage);
        Ok(QaRun { answer: Value::from_model_text(&resp.text), stats })
    }
}

/// Aligns two value sets into join pairs. Byte-equal values pair without a
/// model call; only the remainders are sent, smaller side as candidates.
pub fn exec_join(task: &JoinTask, blender: &dyn Blender) -> Result<JoinRun, IngredientError> {
    let mut stats = RunStats::default();
    let mut pairs: Vec<(String, String)> = Vec::new();

    let right_set: BTreeSet<&str> = task.right.iter().map(String::as_str).collect();
    let mut matched_right: BTreeSet<&str> = BTreeSet::new();
    let mut left_rest: Vec<&str> = Vec::new();
    for left in &task.left {
        if right_set.contains(left.as_str()) {
            pairs.push((left.clone(), left.clone()));
            matched_right.insert(left.as_str());
        } else {
            left_rest.push(left.as_str());
        }
    }
    let right_rest: Vec<&str> = task
        .right
        .iter()
        .map(String::as_str)
        .filter(|r| !matched_right.contains(*r))
        .collect();

    if !left_rest.is_empty() && !right_rest.is_empty() {
        // The smaller remainder is the candidate list.
        let left_is_candidates = left_rest.len() <= right_rest.len();
        let (candidates, options) =
            if left_is_candidates { (&left_rest, &right_rest) } else { (&right_rest, &left_rest) };
        let candidate_strings: Vec<String> = candidates.iter().map(|s| s.to_string()).collect();
        let option_strings: Vec<String> = options.iter().map(|s| s.to_string()).collect();
        let req = prompts::join_request(&task.question, &candidate_strings, &option_strings);
        let resp = blender.complete(&req)?;
        stats.absorb(resp.usage);

        let candidate_set: BTreeSet<&str> = candidates.iter().copied().collect();
        let option_set: BTreeSet<&str> = options.iter().copied().collect();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for line in resp.text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((cand, opt)) = line.split_once("->") else {
                stats.warnings.push(format!("dropped malformed line {line:?}"));
                continue;
            };
            let cand = cand.trim();
            let opt = opt.trim();
            if opt == "NONE" {
                continue;
            }
            if !candidate_set.contains(cand) || !option_set.contains(opt) {
                stats.warnings.push(format!("dropped line with unknown values {line:?}"));
                continue;
            }
            if !seen.insert(cand.to_string()) {
                continue;
            }
            if left_is_candidates {
                pairs.push((cand.to_string(), opt.to_string()));
            } else {
                pairs.push((opt.to_string(), cand.to_string()));
            }
        }
    }

    // Left-functional: first pairing per left value wins.
    let mut seen_left: BTreeSet<String> = BTreeSet::new();
    pairs.retain(|(left, _)| seen_left.insert(left.clone()));
    Ok(JoinRun { pairs, stats })
}

/// Checks a claim against a rendered context; strictly boolean.
pub fn exec_validate(
    task: &ValidateTask,
    blender: &dyn Blender,
) -> Result<ValidateRun, IngredientError> {
    if task.context.rows.is_empty() {
        return Err(IngredientError::EmptyContext);
    }
    let context = prompts::render_context(&task.context, CELL_CAP);
    let req = prompts::validate_request(&task.claim, &context);
    let resp = complete_constrained(blender, &req)?;
    let mut stats = RunStats::default();
    stats.absorb(resp.usage);
    let verdict = resp.text.trim() == "true;";
    Ok(ValidateRun { verdict, stats })
}

/// Handler for a registered scalar ingredient: question, values in, values out.
pub type ScalarHandler =
    Box<dyn Fn(&str, &[Value], &dyn Blender) -> Result<Vec<Value>, IngredientError> + Send + Sync>;

/// Handler for a registered aggregate ingredient: question, context in, scalar out.
pub type AggregateHandler =
    Box<dyn Fn(&str, &ResultTable, &dyn Blender) -> Result<Value, IngredientError> + Send + Sync>;

pub enum CustomIngredient {
    Scalar(ScalarHandler),
    Aggregate(AggregateHandler),
}

impl CustomIngredient {
    fn class(&self) -> IngredientClass {
        match self {
            CustomIngredient::Scalar(_) => IngredientClass::Scalar,
            CustomIngredient::Aggregate(_) => IngredientClass::Aggregate,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("ingredient name {0:?} is already taken")]
    DuplicateName(String),
    #[error("ingredient name {0:?} is not a valid identifier")]
    InvalidName(String),
}

const BUILTINS: [(&str, IngredientKind, IngredientClass); 4] = [
    ("LLMMap", IngredientKind::Map, IngredientClass::Scalar),
    ("LLMQA", IngredientKind::Qa, IngredientClass::Aggregate),
    ("LLMJoin", IngredientKind::Join, IngredientClass::JoinSets),
    ("LLMValidate", IngredientKind::Validate, IngredientClass::Validate),
];

/// Ingredient name table: the four built-ins plus registered customs.
/// Write-once at startup, then shared read-only.
#[derive(Default)]
pub struct Registry {
    customs: BTreeMap<String, CustomIngredient>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    /// Registers a custom ingredient; `{{Name(...)}}` then parses and
    /// dispatches with the argument shape of the matching built-in class.
    pub fn register_custom(
        &mut self,
        name: &str,
        ingredient: CustomIngredient,
    ) -> Result<(), RegistryError> {
        let valid = !name.is_empty()
            && name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid {
            return Err(RegistryError::InvalidName(name.to_string()));
        }
        let taken = BUILTINS.iter().any(|(b, _, _)| b.eq_ignore_ascii_case(name))
            || self.customs.keys().any(|k| k.eq_ignore_ascii_case(name));
        if taken {
            return Err(RegistryError::DuplicateName(name.to_string()));
        }
        self.customs.insert(name.to_string(), ingredient);
        Ok(())
    }

    /// The handler registered under `name` (case-insensitive), if any.
    pub fn custom(&self, name: &str) -> Option<&CustomIngredient> {
        self.customs
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v)
    }
}

impl IngredientNames for Registry {
    fn resolve(&self, name: &str) -> Option<(IngredientKind, IngredientClass)> {
        for (builtin, kind, class) in BUILTINS {
            if builtin.eq_ignore_ascii_case(name) {
                return Some((kind, class));
            }
        }
        self.customs
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(k, v)| (IngredientKind::Custom(k.clone()), v.class()))
    }
}
