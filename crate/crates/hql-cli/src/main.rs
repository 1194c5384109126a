//! `hql` — command-line harness for the hybrid query engine.
//!
//! Subcommands: `ingest` builds a database from CSV tables and a JSONL
//! document corpus; `run` executes a query (or parses a question into
//! one) and prints the result JSON; `trace` prints the execution steps;
//! `eval` scores a gold file by denotation accuracy; `savings` measures
//! how much ingredient traffic push-down removes.
//!
//! `run` and `trace` exit with the outcome code: 0 answered, 2 no result,
//! 3 syntax error, 4 execution error. Other subcommands exit 0 on
//! success, 1 on operational failure.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hql_cli::eval::{evaluate, load_gold, load_predictions, records_jsonl, EvalConfig, GoldRecord};
use hql_cli::{
    build_blender, dump_ast, exit_codes, measure_savings, parse_question, run_query, CliError,
    ParseOptions, RunOutcome,
};
use hql_core::blender::{Blender, BlenderRequest};
use hql_core::context::{load_few_shots, serialize_schema, FewShot};
use hql_core::planner::PlannerConfig;
use hql_core::storage::{ingest_csv, parse_docs_jsonl, DatabaseHandle, FtsTokenizer};

#[derive(Parser)]
#[command(name = "hql", version, about = "Hybrid query engine harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a database from CSV tables and an optional JSONL document corpus.
    Ingest(IngestArgs),
    /// Execute a query (or parse a question first) and print the result JSON.
    Run(RunArgs),
    /// Execute a query and print its step-by-step trace.
    Trace(RunArgs),
    /// Score gold questions by denotation accuracy.
    Eval(EvalArgs),
    /// Measure prompt savings from predicate push-down.
    Savings(SavingsArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Structured table source, repeatable: TABLE=FILE.csv (or FILE.csv,
    /// named by its stem).
    #[arg(long = "csv", value_name = "TABLE=PATH")]
    csv: Vec<String>,
    /// JSONL document corpus: one {"title", "content"} object per line.
    #[arg(long, value_name = "PATH")]
    docs: Option<PathBuf>,
    /// Output database path (must not exist).
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Full-text tokenizer for the documents index.
    #[arg(long, default_value = "trigram", value_parser = ["trigram", "unicode61"])]
    tokenizer: String,
}

#[derive(Args)]
struct RunArgs {
    /// Database file.
    #[arg(long, value_name = "PATH")]
    db: PathBuf,
    /// Query text to execute.
    #[arg(long, value_name = "SQL")]
    query: Option<String>,
    /// File holding the query text.
    #[arg(long = "query-file", value_name = "PATH")]
    query_file: Option<PathBuf>,
    /// Natural-language question; requires --parse.
    #[arg(long, value_name = "TEXT")]
    question: Option<String>,
    /// Parse --question into a query with the parser blender first.
    #[arg(long)]
    parse: bool,
    /// Ingredient model: echo | lookup:FILE | lookup-strict:FILE |
    /// rules:FILE | remote.
    #[arg(long, default_value = "echo", value_name = "SPEC")]
    blender: String,
    /// Parser model for --parse (defaults to --blender).
    #[arg(long = "parser-blender", value_name = "SPEC")]
    parser_blender: Option<String>,
    /// Few-shot exemplar JSON file for --parse.
    #[arg(long = "few-shots", value_name = "PATH")]
    few_shots: Option<PathBuf>,
    /// Example rows per table in the serialized schema for --parse.
    #[arg(long = "schema-rows", default_value_t = 3)]
    schema_rows: usize,
    /// File holding a custom parser-prompt template with the
    /// {{few_shot_examples}}, {{serialized_db}}, and {{question}} slots.
    #[arg(long, value_name = "PATH")]
    template: Option<PathBuf>,
    /// Parser prompt budget (system + user) in characters.
    #[arg(long = "prompt-budget", value_name = "CHARS")]
    prompt_budget: Option<usize>,
    /// Print the parsed query structure as JSON instead of executing.
    #[arg(long)]
    ast: bool,
    /// Full result JSON from `trace` instead of the step listing.
    #[arg(long)]
    json: bool,
    /// Disable predicate push-down.
    #[arg(long = "no-pushdown")]
    no_pushdown: bool,
    /// Fail execution when a mapping batch fails instead of yielding NULLs.
    #[arg(long = "strict-map")]
    strict_map: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Database file shared by all records, or a directory of {id}.db files.
    #[arg(long, value_name = "PATH")]
    db: PathBuf,
    /// Gold JSONL: {"id", "question", "answers": [...]} per line.
    #[arg(long, value_name = "PATH")]
    gold: PathBuf,
    /// Predicted queries JSONL: {"id", "blendsql"} per line.
    #[arg(long, value_name = "PATH")]
    predictions: Option<PathBuf>,
    /// Parse each gold question with the parser blender instead of
    /// reading --predictions.
    #[arg(long)]
    parse: bool,
    /// Ingredient model spec.
    #[arg(long, default_value = "echo", value_name = "SPEC")]
    blender: String,
    /// Parser model for --parse (defaults to --blender).
    #[arg(long = "parser-blender", value_name = "SPEC")]
    parser_blender: Option<String>,
    /// Few-shot exemplar JSON file for --parse.
    #[arg(long = "few-shots", value_name = "PATH")]
    few_shots: Option<PathBuf>,
    #[arg(long = "schema-rows", default_value_t = 3)]
    schema_rows: usize,
    /// File holding a custom parser-prompt template for --parse.
    #[arg(long, value_name = "PATH")]
    template: Option<PathBuf>,
    /// Parser prompt budget (system + user) in characters.
    #[arg(long = "prompt-budget", value_name = "CHARS")]
    prompt_budget: Option<usize>,
    /// Worker threads; records are independent.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// On NoResult, ask the ingredient blender the question directly and
    /// score its answer (status: fell_back).
    #[arg(long)]
    fallback: bool,
    /// Write per-record results as JSONL to this file.
    #[arg(long, value_name = "PATH")]
    records: Option<PathBuf>,
    #[arg(long = "no-pushdown")]
    no_pushdown: bool,
}

#[derive(Args)]
struct SavingsArgs {
    #[arg(long, value_name = "PATH")]
    db: PathBuf,
    #[arg(long, value_name = "SQL")]
    query: String,
    #[arg(long, default_value = "echo", value_name = "SPEC")]
    blender: String,
    /// Override the measured full-context baseline, in characters.
    #[arg(long, value_name = "CHARS")]
    baseline: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Ingest(args) => fallible(cmd_ingest(args)),
        Command::Run(args) => cmd_run(args, false),
        Command::Trace(args) => cmd_run(args, true),
        Command::Eval(args) => fallible(cmd_eval(args)),
        Command::Savings(args) => fallible(cmd_savings(args)),
    };
    ExitCode::from(code as u8)
}

fn fallible(result: Result<(), CliError>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<(), CliError> {
    if args.csv.is_empty() && args.docs.is_none() {
        return Err(CliError::new("nothing to ingest: pass --csv and/or --docs"));
    }
    let mut handle =
        DatabaseHandle::create(&args.out).map_err(|e| CliError::new(e.to_string()))?;
    if args.tokenizer == "unicode61" {
        handle.set_tokenizer(FtsTokenizer::Unicode61);
    }

    let mut tables: BTreeMap<String, usize> = BTreeMap::new();
    for spec in &args.csv {
        let (table, path) = match spec.split_once('=') {
            Some((t, p)) => (t.to_string(), PathBuf::from(p)),
            None => {
                let path = PathBuf::from(spec);
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| CliError::new(format!("cannot name table for {spec:?}")))?
                    .to_string();
                (stem, path)
            }
        };
        let count = ingest_csv(&handle, &table, &path)
            .map_err(|e| CliError::new(format!("{}: {e}", path.display())))?;
        tables.insert(table, count);
    }

    let mut documents_present = false;
    if let Some(docs_path) = &args.docs {
        let file = std::fs::File::open(docs_path)
            .map_err(|e| CliError::new(format!("{}: {e}", docs_path.display())))?;
        let docs = parse_docs_jsonl(file)
            .map_err(|e| CliError::new(format!("{}: {e}", docs_path.display())))?;
        let count = handle
            .ingest_documents(&docs)
            .map_err(|e| CliError::new(e.to_string()))?;
        tables.insert("documents".to_string(), count);
        documents_present = true;
    }

    let summary = serde_json::json!({
        "db": args.out.display().to_string(),
        "tables": tables,
        "documents_present": documents_present,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn cmd_run(args: RunArgs, trace: bool) -> i32 {
    match run_command(args, trace) {
        Ok(code) => code,
        Err((report, code)) => {
            eprintln!(
                "{}",
                serde_json::to_string(&report).unwrap_or_else(|_| report.error.clone())
            );
            code
        }
    }
}

fn run_command(args: RunArgs, trace: bool) -> Result<i32, (hql_cli::ErrorReport, i32)> {
    let operational = |message: String| {
        (
            hql_cli::ErrorReport { error: message, kind: "execution_error".to_string() },
            exit_codes::EXECUTION_ERROR,
        )
    };

    let blender = build_blender(&args.blender).map_err(|e| operational(e.to_string()))?;
    let query = resolve_query(&args, blender.as_ref()).map_err(|e| operational(e.to_string()))?;

    if args.ast {
        let dump = dump_ast(&query).map_err(|e| {
            (
                hql_cli::ErrorReport { error: e.to_string(), kind: "syntax_error".to_string() },
                exit_codes::SYNTAX_ERROR,
            )
        })?;
        println!("{}", serde_json::to_string_pretty(&dump).expect("dump serializes"));
        return Ok(exit_codes::ANSWERED);
    }

    let config = PlannerConfig {
        pushdown: !args.no_pushdown,
        strict_map: args.strict_map,
        ..PlannerConfig::default()
    };
    match run_query(&args.db, &query, blender.as_ref(), config) {
        RunOutcome::Finished(smoothie, code) => {
            if trace && !args.json {
                for (i, step) in smoothie.steps.iter().enumerate() {
                    let count = step
                        .input_count
                        .map(|n| format!(" ({n} values in)"))
                        .unwrap_or_default();
                    println!("{}. [{:?}] {}{} -> {}", i + 1, step.kind, step.label, count, step.output_summary);
                    for warning in &step.warnings {
                        println!("   warning: {warning}");
                    }
                }
                println!(
                    "totals: {} ingredient call(s), {} value(s) passed, {} prompt char(s)",
                    smoothie.totals.ingredient_calls,
                    smoothie.totals.values_passed,
                    smoothie.totals.prompt_chars
                );
            } else {
                println!("{}", smoothie.to_json());
            }
            Ok(code)
        }
        RunOutcome::Failed(report, code) => Err((report, code)),
    }
}

/// The query text for a run: --query, --query-file, or a parsed --question.
fn resolve_query(args: &RunArgs, default_blender: &dyn Blender) -> Result<String, CliError> {
    match (&args.query, &args.query_file, &args.question) {
        (Some(q), None, None) => Ok(q.clone()),
        (None, Some(path), None) => std::fs::read_to_string(path)
            .map_err(|e| CliError::new(format!("{}: {e}", path.display()))),
        (None, None, Some(question)) => {
            if !args.parse {
                return Err(CliError::new("--question requires --parse"));
            }
            let few_shots = load_shots(args.few_shots.as_deref())?;
            let options = parse_options(args.template.as_deref(), args.prompt_budget)?;
            match &args.parser_blender {
                Some(spec) => {
                    let parser = build_blender(spec)?;
                    parse_question(
                        &args.db,
                        question,
                        &few_shots,
                        args.schema_rows,
                        parser.as_ref(),
                        &options,
                    )
                }
                None => parse_question(
                    &args.db,
                    question,
                    &few_shots,
                    args.schema_rows,
                    default_blender,
                    &options,
                ),
            }
        }
        _ => Err(CliError::new("pass exactly one of --query, --query-file, or --question")),
    }
}

fn load_shots(path: Option<&std::path::Path>) -> Result<Vec<FewShot>, CliError> {
    match path {
        Some(path) => load_few_shots(path).map_err(|e| CliError::new(e.to_string())),
        None => Ok(Vec::new()),
    }
}

fn parse_options(
    template: Option<&std::path::Path>,
    budget_chars: Option<usize>,
) -> Result<ParseOptions, CliError> {
    let template = match template {
        Some(path) => Some(
            std::fs::read_to_string(path)
                .map_err(|e| CliError::new(format!("{}: {e}", path.display())))?,
        ),
        None => None,
    };
    Ok(ParseOptions { template, budget_chars })
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let gold = load_gold(&args.gold)?;
    let blender = build_blender(&args.blender)?;

    let predictions: Vec<(String, String)> = if args.parse {
        let parser = match &args.parser_blender {
            Some(spec) => Some(build_blender(spec)?),
            None => None,
        };
        let parser_ref: &dyn Blender =
            parser.as_deref().unwrap_or(blender.as_ref());
        let few_shots = load_shots(args.few_shots.as_deref())?;
        let options = parse_options(args.template.as_deref(), args.prompt_budget)?;
        let mut out = Vec::new();
        for record in &gold {
            let db = record_db_path(&args.db, &record.id);
            match parse_question(
                &db,
                &record.question,
                &few_shots,
                args.schema_rows,
                parser_ref,
                &options,
            ) {
                Ok(query) => out.push((record.id.clone(), query)),
                Err(e) => eprintln!("parse failed for {}: {e}", record.id),
            }
        }
        out
    } else {
        let path = args.predictions.as_ref().ok_or_else(|| {
            CliError::new("eval needs --predictions FILE or --parse with a parser blender")
        })?;
        load_predictions(path)?
    };

    let fallback_hook = |record: &GoldRecord, handle: &DatabaseHandle| -> Option<String> {
        let schema = serialize_schema(handle, 3).ok()?;
        let request = BlenderRequest::new(
            "Answer the question using the provided context. Respond with only the answer.",
            format!("{}\n\nQuestion: {}\nAnswer:", schema.text, record.question),
        );
        blender.complete(&request).ok().map(|r| r.text.trim().to_string())
    };

    let config = EvalConfig {
        db: args.db.clone(),
        blender: blender.as_ref(),
        jobs: args.jobs,
        pushdown: !args.no_pushdown,
        fallback: if args.fallback { Some(&fallback_hook) } else { None },
    };
    let (records, report) = evaluate(&config, &gold, &predictions)?;

    if let Some(path) = &args.records {
        std::fs::write(path, records_jsonl(&records))
            .map_err(|e| CliError::new(format!("{}: {e}", path.display())))?;
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

fn record_db_path(db: &std::path::Path, id: &str) -> PathBuf {
    if db.is_dir() {
        db.join(format!("{id}.db"))
    } else {
        db.to_path_buf()
    }
}

fn cmd_savings(args: SavingsArgs) -> Result<(), CliError> {
    let blender = build_blender(&args.blender)?;
    let report = measure_savings(&args.db, &args.query, blender.as_ref(), args.baseline)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}
