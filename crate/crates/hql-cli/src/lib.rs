//! Library surface of the `hql` command-line harness: blender
//! construction from CLI specs, query running with outcome-coded exits,
//! denotation-scored evaluation, and prompt-savings measurement.

pub mod eval;
pub mod normalize;

use std::path::Path;

use serde::Serialize;

use hql_core::blender::{Blender, BlenderRequest, EchoBlender, LookupBlender, RuleBlender};
use hql_core::context::{
    bridge_match, build_parser_prompt, build_parser_prompt_with, serialize_schema, FewShot,
    PromptConfig, DEFAULT_BRIDGE_THRESHOLD,
};
use hql_core::ingredients::Registry;
use hql_core::parser::{extract_ingredients, parse_query, render, QueryAst};
use hql_core::planner::{Outcome, Planner, PlannerConfig, Smoothie};
use hql_core::storage::DatabaseHandle;
use hql_core::ExecError;

/// Process exit codes for query outcomes. Stable and documented: any
/// change breaks calling scripts.
pub mod exit_codes {
    pub const ANSWERED: i32 = 0;
    pub const NO_RESULT: i32 = 2;
    pub const SYNTAX_ERROR: i32 = 3;
    pub const EXECUTION_ERROR: i32 = 4;
}

/// Operational failure of the harness itself (I/O, malformed inputs).
#[derive(Debug)]
pub struct CliError(pub String);

impl CliError {
    pub fn new(message: impl Into<String>) -> Self {
        CliError(message.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CliError {}

/// Builds a blender from a CLI spec string:
/// `echo` | `lookup:FILE` | `lookup-strict:FILE` | `rules:FILE` | `remote`.
/// Lookup files map prompt hashes to answers; rules files hold ordered
/// substring rules; `remote` reads HQL_BASE_URL / HQL_API_KEY / HQL_MODEL
/// from the environment.
pub fn build_blender(spec: &str) -> Result<Box<dyn Blender>, CliError> {
    let (kind, arg) = match spec.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (spec, None),
    };
    match (kind, arg) {
        ("echo", None) => Ok(Box::new(EchoBlender::default())),
        ("lookup", Some(path)) => Ok(Box::new(
            LookupBlender::from_json_file(path, false)
                .map_err(|e| CliError::new(e.to_string()))?,
        )),
        ("lookup-strict", Some(path)) => Ok(Box::new(
            LookupBlender::from_json_file(path, true)
                .map_err(|e| CliError::new(e.to_string()))?,
        )),
        ("rules", Some(path)) => Ok(Box::new(
            RuleBlender::from_json_file(path).map_err(|e| CliError::new(e.to_string()))?,
        )),
        ("remote", None) => Ok(Box::new(
            hql_core::blender::RemoteBlender::from_env()
                .map_err(|e| CliError::new(e.to_string()))?,
        )),
        _ => Err(CliError::new(format!(
            "unknown blender spec {spec:?}; expected echo, lookup:FILE, \
             lookup-strict:FILE, rules:FILE, or remote"
        ))),
    }
}

/// How a `run`/`trace` invocation finished, mapped onto exit codes.
pub enum RunOutcome {
    /// Execution completed; holds the smoothie and its exit code.
    Finished(Smoothie, i32),
    /// The query never executed; holds an error report and its exit code.
    Failed(ErrorReport, i32),
}

/// Machine-readable error detail for stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: String,
    pub kind: String,
}

/// Parses and executes query text against a database file.
pub fn run_query(
    db: &Path,
    query: &str,
    blender: &dyn Blender,
    config: PlannerConfig,
) -> RunOutcome {
    let ast = match parse_query(query) {
        Ok(ast) => ast,
        Err(e) => {
            return RunOutcome::Failed(
                ErrorReport { error: e.to_string(), kind: "syntax_error".to_string() },
                exit_codes::SYNTAX_ERROR,
            )
        }
    };
    execute_ast(db, &ast, blender, config)
}

/// Executes an already-parsed query.
pub fn execute_ast(
    db: &Path,
    ast: &QueryAst,
    blender: &dyn Blender,
    config: PlannerConfig,
) -> RunOutcome {
    let handle = match DatabaseHandle::open(db) {
        Ok(handle) => handle,
        Err(e) => {
            return RunOutcome::Failed(
                ErrorReport { error: e.to_string(), kind: "execution_error".to_string() },
                exit_codes::EXECUTION_ERROR,
            )
        }
    };
    let registry = Registry::new();
    let planner = Planner::with_config(&handle, &registry, config);
    match planner.execute(ast, blender) {
        Ok(smoothie) => {
            let code = match smoothie.outcome {
                Outcome::Answered => exit_codes::ANSWERED,
                Outcome::NoResult => exit_codes::NO_RESULT,
            };
            RunOutcome::Finished(smoothie, code)
        }
        Err(ExecError::Plan(e)) => RunOutcome::Failed(
            ErrorReport { error: e.to_string(), kind: "execution_error".to_string() },
            exit_codes::EXECUTION_ERROR,
        ),
        Err(e) => RunOutcome::Failed(
            ErrorReport { error: e.to_string(), kind: "execution_error".to_string() },
            exit_codes::EXECUTION_ERROR,
        ),
    }
}

/// Asks the parser model to translate a question into query text, using
/// the serialized schema, bridge hints, and few-shot exemplars.
/// Optional knobs for turning a question into a query.
#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Custom user-message template with the three named slots; None uses
    /// the built-in layout.
    pub template: Option<String>,
    /// Total prompt budget (system + user) in characters; None is unlimited.
    pub budget_chars: Option<usize>,
}

pub fn parse_question(
    db: &Path,
    question: &str,
    few_shots: &[FewShot],
    schema_rows: usize,
    parser_blender: &dyn Blender,
    options: &ParseOptions,
) -> Result<String, CliError> {
    let handle =
        DatabaseHandle::open(db).map_err(|e| CliError::new(e.to_string()))?;
    let schema = serialize_schema(&handle, schema_rows)
        .map_err(|e| CliError::new(e.to_string()))?;
    let hints = bridge_match(question, &handle, DEFAULT_BRIDGE_THRESHOLD)
        .map_err(|e| CliError::new(e.to_string()))?;
    let prompt = if options.template.is_some() || options.budget_chars.is_some() {
        let mut config = PromptConfig::default();
        if let Some(template) = &options.template {
            config.template = template.clone();
        }
        config.budget_chars = options.budget_chars;
        build_parser_prompt_with(&config, few_shots, &schema, question, &hints)
            .map_err(|e| CliError::new(e.to_string()))?
    } else {
        build_parser_prompt(few_shots, &schema, question, &hints)
    };
    let response = parser_blender
        .complete(&BlenderRequest::new(prompt.system, prompt.user))
        .map_err(|e| CliError::new(format!("parser model: {e}")))?;
    Ok(clean_generated_query(&response.text))
}

/// Strips chatter that parser models wrap around query text: code fences
/// and a leading `BlendSQL:` echo of the prompt tail.
fn clean_generated_query(text: &str) -> String {
    let mut out = text.trim();
    if let Some(rest) = out.strip_prefix("```sql").or_else(|| out.strip_prefix("```")) {
        out = rest.trim_start();
    }
    if let Some(rest) = out.strip_suffix("```") {
        out = rest.trim_end();
    }
    if let Some(rest) = out.trim_start().strip_prefix("BlendSQL:") {
        out = rest.trim_start();
    }
    out.trim().to_string()
}

/// Structural dump of a parsed query: canonical rendering plus every
/// ingredient call in execution order.
#[derive(Debug, Serialize)]
pub struct AstDump {
    pub rendered: String,
    pub ingredients: Vec<IngredientDump>,
}

#[derive(Debug, Serialize)]
pub struct IngredientDump {
    pub id: usize,
    pub name: String,
    pub class: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub options: Option<String>,
}

/// Parses query text and dumps its structure as JSON.
pub fn dump_ast(query: &str) -> Result<AstDump, hql_core::SyntaxError> {
    let ast = parse_query(query)?;
    let ingredients = extract_ingredients(&ast)
        .into_iter()
        .map(|call| IngredientDump {
            id: call.id as usize,
            name: call.kind.label().to_string(),
            class: format!("{:?}", call.class),
            question: call.question().map(|s| s.to_string()),
            target_column: call.target_column().map(|c| format!("{}::{}", c.table, c.column)),
            options: call.options().map(|c| format!("{}::{}", c.table, c.column)),
        })
        .collect();
    Ok(AstDump { rendered: render(&ast.root), ingredients })
}

/// Prompt-savings measurement: the query's ingredient traffic with
/// push-down enabled versus a full-context baseline (push-down disabled,
/// or an explicit character count).
#[derive(Debug, Serialize)]
pub struct SavingsReport {
    pub used_prompt_chars: u64,
    pub baseline_prompt_chars: u64,
    pub prompt_char_reduction: f64,
    pub used_values_passed: u64,
    pub baseline_values_passed: u64,
    pub values_reduction: f64,
    /// Character counts stand in for token counts; tokenizers are
    /// model-specific.
    pub unit: String,
}

/// Executes the query twice — push-down on and off — and reports the
/// reduction in ingredient traffic. `baseline_chars` overrides the
/// measured baseline when supplied.
pub fn measure_savings(
    db: &Path,
    query: &str,
    blender: &dyn Blender,
    baseline_chars: Option<u64>,
) -> Result<SavingsReport, CliError> {
    let run = |pushdown: bool| -> Result<Smoothie, CliError> {
        match run_query(
            db,
            query,
            blender,
            PlannerConfig { pushdown, ..PlannerConfig::default() },
        ) {
            RunOutcome::Finished(smoothie, _) => Ok(smoothie),
            RunOutcome::Failed(report, _) => Err(CliError::new(report.error)),
        }
    };
    let optimized = run(true)?;
    let baseline_run = run(false)?;
    let used_chars = optimized.totals.prompt_chars as u64;
    let used_values = optimized.totals.values_passed as u64;
    let base_chars = baseline_chars.unwrap_or(baseline_run.totals.prompt_chars as u64);
    let base_values = baseline_run.totals.values_passed as u64;
    Ok(SavingsReport {
        used_prompt_chars: used_chars,
        baseline_prompt_chars: base_chars,
        prompt_char_reduction: reduction(used_chars, base_chars),
        used_values_passed: used_values,
        baseline_values_passed: base_values,
        values_reduction: reduction(used_values, base_values),
        unit: "chars".to_string(),
    })
}

/// 1 − used/baseline, with the zero-traffic case counted as full savings.
fn reduction(used: u64, baseline: u64) -> f64 {
    if baseline == 0 {
        if used == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - used as f64 / baseline as f64
    }
}
