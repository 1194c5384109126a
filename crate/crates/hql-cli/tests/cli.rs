//! End-to-end tests of the `hql` binary: every subcommand exercised
//! through a real process, checking stdout/stderr JSON and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value as Json;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn hql(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hql"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(output: &Output) -> Json {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        )
    })
}

fn stderr_json(output: &Output) -> Json {
    serde_json::from_slice(&output.stderr).unwrap_or_else(|e| {
        panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&output.stderr))
    })
}

/// Ingests the roster fixture into `dir/roster.db` and returns the path.
fn ingest_roster(dir: &Path) -> PathBuf {
    let db = dir.join("roster.db");
    let csv = format!("w={}", fixture("roster/w.csv").display());
    let output = hql(&[
        "ingest",
        "--csv",
        &csv,
        "--docs",
        fixture("roster/docs.jsonl").to_str().unwrap(),
        "--out",
        db.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "ingest failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    db
}

#[test]
fn ingest_reports_row_counts_and_documents() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = dir.path().join("roster.db");
    let csv = format!("w={}", fixture("roster/w.csv").display());
    let output = hql(&[
        "ingest",
        "--csv",
        &csv,
        "--docs",
        fixture("roster/docs.jsonl").to_str().unwrap(),
        "--out",
        db.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let summary = stdout_json(&output);
    assert_eq!(summary["tables"]["w"], 3);
    assert_eq!(summary["tables"]["documents"], 3);
    assert_eq!(summary["documents_present"], true);
    assert!(db.exists());
}

#[test]
fn ingest_names_table_by_file_stem_and_omits_documents() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = dir.path().join("plain.db");
    let output = hql(&[
        "ingest",
        "--csv",
        fixture("roster/w.csv").to_str().unwrap(),
        "--out",
        db.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let summary = stdout_json(&output);
    assert_eq!(summary["tables"]["w"], 3);
    assert_eq!(summary["documents_present"], false);
}

#[test]
fn ingest_rejects_ragged_csv_with_line_number() {
    let dir = tempfile::tempdir().expect("tempdir");
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n3\n").expect("write csv");
    let db = dir.path().join("bad.db");
    let csv = format!("t={}", bad.display());
    let output = hql(&["ingest", "--csv", &csv, "--out", db.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line"), "stderr: {stderr}");
}

#[test]
fn run_exit_codes_track_outcomes() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = ingest_roster(dir.path());
    let db = db.to_str().unwrap();

    // Answered: one row, one cell.
    let ok = hql(&["run", "--db", db, "--query", "SELECT COUNT(*) FROM w"]);
    assert_eq!(ok.status.code(), Some(0));
    let smoothie = stdout_json(&ok);
    assert_eq!(smoothie["outcome"], "answered");
    assert_eq!(smoothie["result"]["rows"][0][0], 3);

    // Empty result.
    let empty = hql(&["run", "--db", db, "--query", "SELECT name FROM w WHERE name = 'nobody'"]);
    assert_eq!(empty.status.code(), Some(2));
    assert_eq!(stdout_json(&empty)["outcome"], "no_result");

    // Bad syntax: diagnostic on stderr.
    let bad = hql(&["run", "--db", db, "--query", "SELEKT nope"]);
    assert_eq!(bad.status.code(), Some(3));
    assert_eq!(stderr_json(&bad)["kind"], "syntax_error");

    // Unknown column: execution error.
    let missing = hql(&["run", "--db", db, "--query", "SELECT missing_col FROM w"]);
    assert_eq!(missing.status.code(), Some(4));
    assert_eq!(stderr_json(&missing)["kind"], "execution_error");
}

#[test]
fn run_executes_ingredient_query_with_rules_blender() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = ingest_roster(dir.path());
    let rules = format!("rules:{}", fixture("roster/rules.json").display());
    let query = "SELECT {{LLMQA('Which teams has the player played for in the MLB?', \
                 (SELECT title, content FROM documents JOIN {{LLMJoin((SELECT name FROM w \
                 WHERE school = 'university of georgia'), options='documents::title')}}))}}";
    let output = hql(&["run", "--db", db.to_str().unwrap(), "--query", query, "--blender", &rules]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let smoothie = stdout_json(&output);
    assert_eq!(smoothie["result"]["rows"][0][0], "seattle mariners");
    assert_eq!(smoothie["totals"]["ingredient_calls"], 2);
}

#[test]
fn run_parses_question_through_parser_blender() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = ingest_roster(dir.path());
    let parser = format!("lookup:{}", fixture("roster/parser_lookup.json").display());
    let output = hql(&[
        "run",
        "--db",
        db.to_str().unwrap(),
        "--question",
        "How many players are on the roster?",
        "--parse",
        "--parser-blender",
        &parser,
        "--few-shots",
        fixture("roster/few_shots.json").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let smoothie = stdout_json(&output);
    assert_eq!(smoothie["result"]["rows"][0][0], 3);
}

#[test]
fn run_accepts_custom_prompt_template_file() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = ingest_roster(dir.path());
    let parser = format!("lookup:{}", fixture("roster/parser_lookup.json").display());
    let output = hql(&[
        "run",
        "--db",
        db.to_str().unwrap(),
        "--question",
        "How many players are on the roster?",
        "--parse",
        "--parser-blender",
        &parser,
        "--few-shots",
        fixture("roster/few_shots.json").to_str().unwrap(),
        "--template",
        fixture("parser_prompt_template.txt").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert_eq!(stdout_json(&output)["result"]["rows"][0][0], 3);
}

#[test]
fn run_rejects_question_over_tiny_prompt_budget() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = ingest_roster(dir.path());
    let parser = format!("lookup:{}", fixture("roster/parser_lookup.json").display());
    let output = hql(&[
        "run",
        "--db",
        db.to_str().unwrap(),
        "--question",
        "How many players are on the roster?",
        "--parse",
        "--parser-blender",
        &parser,
        "--prompt-budget",
        "10",
    ]);
    assert_eq!(output.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("budget"), "stderr: {stderr}");
}

#[test]
fn run_question_without_parse_flag_is_rejected() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = ingest_roster(dir.path());
    let output = hql(&["run", "--db", db.to_str().unwrap(), "--question", "How many?"]);
    assert_eq!(output.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("--parse"), "stderr: {stderr}");
}

#[test]
fn ast_dump_lists_ingredients_in_execution_order() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = ingest_roster(dir.path());
    let query = "SELECT {{LLMQA('Which teams has the player played for in the MLB?', \
                 (SELECT title, content FROM documents JOIN {{LLMJoin((SELECT name FROM w \
                 WHERE school = 'university of georgia'), options='documents::title')}}))}}";
    let output = hql(&["run", "--db", db.to_str().unwrap(), "--query", query, "--ast"]);
    assert_eq!(output.status.code(), Some(0));
    let dump = stdout_json(&output);
    let names: Vec<&str> = dump["ingredients"]
        .as_array()
        .expect("ingredient list")
        .iter()
        .map(|i| i["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["LLMJoin", "LLMQA"], "inner call executes first");
}

#[test]
fn trace_prints_step_listing() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = ingest_roster(dir.path());
    let rules = format!("rules:{}", fixture("roster/rules.json").display());
    let query =
        "SELECT COUNT(*) FROM w WHERE {{LLMMap('Is this a pitching position?', 'w::position')}} = TRUE";
    let output = hql(&["trace", "--db", db.to_str().unwrap(), "--query", query, "--blender", &rules]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("LLMMap"), "trace lists the ingredient step: {text}");
    assert!(text.contains("totals:"), "trace ends with totals: {text}");
}

#[test]
fn eval_scores_roster_suite_perfectly() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = ingest_roster(dir.path());
    let rules = format!("rules:{}", fixture("roster/rules.json").display());
    let records = dir.path().join("records.jsonl");
    let output = hql(&[
        "eval",
        "--db",
        db.to_str().unwrap(),
        "--gold",
        fixture("roster/gold.jsonl").to_str().unwrap(),
        "--predictions",
        fixture("roster/predictions.jsonl").to_str().unwrap(),
        "--blender",
        &rules,
        "--records",
        records.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let report = stdout_json(&output);
    assert_eq!(report["total"], 5);
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["bad_syntax_fraction"], 0.0);
    assert_eq!(report["no_result_fraction"], 0.0);

    let lines: Vec<String> =
        std::fs::read_to_string(&records).expect("records written").lines().map(String::from).collect();
    assert_eq!(lines.len(), 5);
    for line in &lines {
        let record: Json = serde_json::from_str(line).expect("record json");
        assert_eq!(record["status"], "answered");
        assert_eq!(record["denotation_correct"], true);
    }
}

#[test]
fn eval_reports_bad_syntax_fraction() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = ingest_roster(dir.path());
    let rules = format!("rules:{}", fixture("roster/rules.json").display());
    let output = hql(&[
        "eval",
        "--db",
        db.to_str().unwrap(),
        "--gold",
        fixture("roster/gold.jsonl").to_str().unwrap(),
        "--predictions",
        fixture("roster/predictions_bad.jsonl").to_str().unwrap(),
        "--blender",
        &rules,
    ]);
    assert_eq!(output.status.code(), Some(0));
    let report = stdout_json(&output);
    assert_eq!(report["bad_syntax_fraction"], 0.2);
    assert_eq!(report["accuracy"], 0.8);
}

#[test]
fn eval_output_is_deterministic_across_parallel_runs() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = ingest_roster(dir.path());
    let rules = format!("rules:{}", fixture("roster/rules.json").display());
    let run = |records: &Path| -> Vec<u8> {
        let output = hql(&[
            "eval",
            "--db",
            db.to_str().unwrap(),
            "--gold",
            fixture("roster/gold.jsonl").to_str().unwrap(),
            "--predictions",
            fixture("roster/predictions.jsonl").to_str().unwrap(),
            "--blender",
            &rules,
            "--jobs",
            "4",
            "--records",
            records.to_str().unwrap(),
        ]);
        assert_eq!(output.status.code(), Some(0));
        output.stdout
    };
    let records_a = dir.path().join("a.jsonl");
    let records_b = dir.path().join("b.jsonl");
    let stdout_a = run(&records_a);
    let stdout_b = run(&records_b);
    assert_eq!(stdout_a, stdout_b, "summary bytes differ across runs");
    assert_eq!(
        std::fs::read(&records_a).unwrap(),
        std::fs::read(&records_b).unwrap(),
        "record bytes differ across runs"
    );
}

#[test]
fn savings_reports_total_reduction_without_ingredients() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = ingest_roster(dir.path());
    let output = hql(&[
        "savings",
        "--db",
        db.to_str().unwrap(),
        "--query",
        "SELECT COUNT(*) FROM w",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let report = stdout_json(&output);
    assert_eq!(report["prompt_char_reduction"], 1.0);
    assert_eq!(report["values_reduction"], 1.0);
    assert_eq!(report["unit"], "chars");
}

#[test]
fn savings_measures_pushdown_effect_on_ingredient_query() {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = ingest_roster(dir.path());
    let rules = format!("rules:{}", fixture("roster/rules.json").display());
    let query = "SELECT name FROM w WHERE {{LLMMap('Is this a pitching position?', \
                 'w::position')}} = TRUE AND school = 'university of georgia'";
    let output = hql(&[
        "savings",
        "--db",
        db.to_str().unwrap(),
        "--query",
        query,
        "--blender",
        &rules,
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let report = stdout_json(&output);
    // Push-down narrows the mapped column from 3 distinct values to 1.
    assert_eq!(report["used_values_passed"], 1);
    assert_eq!(report["baseline_values_passed"], 3);
    let reduction = report["values_reduction"].as_f64().unwrap();
    assert!((reduction - 2.0 / 3.0).abs() < 1e-9, "reduction: {reduction}");
    assert!(report["prompt_char_reduction"].as_f64().unwrap() > 0.0);
}
