//! Acceptance suite: one test per release criterion. Each test prints a
//! single `criterion N PASS/FAIL` line — run with `--nocapture` to see
//! the lines for passing criteria:
//!
//! ```text
//! cargo test -p hql-cli --test acceptance -- --nocapture
//! ```

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use hql_cli::measure_savings;
use hql_cli::normalize::{denotation_equal, normalize_denotation};
use hql_core::blender::{
    Blender, BlenderRequest, BlenderResponse, Constraint, FnBlender, RuleBlender,
};
use hql_core::error::BlenderError;
use hql_core::ingredients::Registry;
use hql_core::parser::{extract_ingredients, parse_query, render};
use hql_core::planner::{Outcome, Planner, PlannerConfig, ResultRows, Smoothie, StepKind};
use hql_core::storage::{ingest_csv, parse_docs_jsonl, DatabaseHandle, Document};
use hql_core::value::Value;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

/// Runs one criterion check and prints its verdict line.
fn report(number: u32, name: &str, check: impl FnOnce() -> Result<(), String>) {
    match check() {
        Ok(()) => println!("criterion {number} PASS - {name}"),
        Err(message) => {
            println!("criterion {number} FAIL - {name}: {message}");
            panic!("criterion {number} ({name}) failed: {message}");
        }
    }
}

fn fail(message: impl Into<String>) -> Result<(), String> {
    Err(message.into())
}

fn ensure(condition: bool, message: impl Into<String>) -> Result<(), String> {
    if condition {
        Ok(())
    } else {
        fail(message)
    }
}

// ---------------------------------------------------------------- fixtures

fn doc(title: &str, content: &str) -> Document {
    Document { title: title.to_string(), content: content.to_string() }
}

/// Draft-roster database built from the committed fixture files.
fn roster_db() -> Result<DatabaseHandle, String> {
    let handle = DatabaseHandle::open_memory().map_err(|e| e.to_string())?;
    ingest_csv(&handle, "w", &fixture("roster/w.csv")).map_err(|e| e.to_string())?;
    let file = std::fs::File::open(fixture("roster/docs.jsonl")).map_err(|e| e.to_string())?;
    let docs = parse_docs_jsonl(file).map_err(|e| e.to_string())?;
    handle.ingest_documents(&docs).map_err(|e| e.to_string())?;
    Ok(handle)
}

/// League-history database: seasons table plus season articles.
fn seasons_db() -> Result<DatabaseHandle, String> {
    let handle = DatabaseHandle::open_memory().map_err(|e| e.to_string())?;
    handle
        .connection()
        .execute_batch(
            "CREATE TABLE \"w\" (\"year\" TEXT, \"champion\" TEXT);
             INSERT INTO \"w\" VALUES
               ('2018-19', 'toronto raptors'),
               ('2019-20', 'los angeles lakers'),
               ('2020-21', 'milwaukee bucks');",
        )
        .map_err(|e| e.to_string())?;
    handle
        .ingest_documents(&[
            doc(
                "2019-20 nba season",
                "the 2019-20 nba season was suspended in march due to the covid-19 pandemic \
                 and resumed in the orlando bubble",
            ),
            doc(
                "2018-19 nba season",
                "the 2018-19 nba season concluded with the toronto raptors winning the \
                 championship",
            ),
            doc(
                "world health organization",
                "the organization coordinated the global response to the covid-19 pandemic \
                 declared in 2020",
            ),
            doc(
                "major league baseball",
                "a professional baseball league whose season runs from spring to autumn each \
                 year",
            ),
        ])
        .map_err(|e| e.to_string())?;
    Ok(handle)
}

/// Match-results database for the fact-verification replay.
fn matches_db() -> Result<DatabaseHandle, String> {
    let handle = DatabaseHandle::open_memory().map_err(|e| e.to_string())?;
    handle
        .connection()
        .execute_batch(
            "CREATE TABLE \"w\" (\"opponent\" TEXT, \"result\" TEXT);
             INSERT INTO \"w\" VALUES
               ('alpha fc', 'loss 0-1'),
               ('beta united', 'draw 1-1');",
        )
        .map_err(|e| e.to_string())?;
    handle
        .ingest_documents(&[
            doc(
                "pesamino victor",
                "pesamino victor is a samoan association footballer who plays as a defender \
                 for the national team",
            ),
            doc(
                "victor hugo",
                "a french poet and novelist of the romantic movement, author of les miserables",
            ),
        ])
        .map_err(|e| e.to_string())?;
    Ok(handle)
}

fn execute(
    handle: &DatabaseHandle,
    query: &str,
    blender: &dyn Blender,
    pushdown: bool,
) -> Result<Smoothie, String> {
    let ast = parse_query(query).map_err(|e| format!("parse: {e}"))?;
    let registry = Registry::new();
    let config = PlannerConfig { pushdown, strict_map: false };
    Planner::with_config(handle, &registry, config)
        .execute(&ast, blender)
        .map_err(|e| format!("execute: {e}"))
}

/// Answers Map batches by applying `f` to each numbered value line.
fn map_blender(
    f: impl Fn(&str) -> String + Send + Sync,
) -> FnBlender<impl Fn(&BlenderRequest) -> Result<String, BlenderError> + Send + Sync> {
    FnBlender::new(move |req: &BlenderRequest| {
        let mut out = String::new();
        for line in req.user_prompt.lines() {
            if let Some((n, value)) = line.split_once(". ") {
                if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) {
                    out.push_str(&f(value));
                    out.push(';');
                }
            }
        }
        Ok(out)
    })
}

// ---------------------------------------------------- criterion 1: grammar

struct CorpusEntry {
    text: &'static str,
    ingredients: usize,
    /// The text is already in canonical form, so rendering must reproduce
    /// it word for word (whitespace aside).
    verbatim: bool,
}

const fn entry(text: &'static str, ingredients: usize, verbatim: bool) -> CorpusEntry {
    CorpusEntry { text, ingredients, verbatim }
}

/// The published example queries: the two hybrid-QA figures, the
/// fact-verification example, the two inference walkthrough listings
/// (in their printed form, which omits the `)` before `}}`, and in
/// corrected form), and the three example-prediction outputs, which
/// appear only as screenshots and are transcribed here. A battery of
/// dialect-coverage queries follows.
fn grammar_corpus() -> Vec<CorpusEntry> {
    vec![
        // Hybrid-QA season lookup with constrained generation.
        entry(
            "SELECT \"year\" FROM w WHERE \"year\" = {{LLMQA('Which NBA season was suspended \
             due to COVID-19?', (SELECT * FROM documents WHERE documents MATCH 'nba OR covid' \
             ORDER BY rank LIMIT 1), options='w::year')}}",
            1,
            true,
        ),
        // Draft-roster multi-hop: join player rows to their articles.
        entry(
            "SELECT {{LLMQA('Which teams has the player played for in the MLB?', \
             (SELECT title, content FROM documents JOIN {{LLMJoin((SELECT name FROM w WHERE \
             school = 'university of georgia'), options='documents::title')}}))}}",
            2,
            true,
        ),
        // Fact verification as predicate logic.
        entry(
            "SELECT {{LLMValidate('Pesamino Victor is an association footballer.', \
             (SELECT * FROM documents WHERE documents MATCH 'pesamino OR victor' ORDER BY rank \
             LIMIT 1))}} AND NOT EXISTS (SELECT * FROM w WHERE {{LLMMap('Did the team win \
             this match?', 'w::result')}} = TRUE)",
            2,
            true,
        ),
        // Inference walkthrough, printed form: the listing splits the call
        // over lines and drops the ')' before '}}'.
        entry(
            "SELECT * FROM w WHERE {{\n    LLMMap(\n        'What state is this city in?', \
             \n        'w::city'\n}} = 'CA'",
            1,
            false,
        ),
        entry(
            "SELECT * FROM w WHERE {{\n    LLMMap(\n        'Is this a team event?', \
             \n        'w::event'\n}} = TRUE",
            1,
            false,
        ),
        // The same two in corrected single-line form.
        entry(
            "SELECT * FROM w WHERE {{LLMMap('What state is this city in?', 'w::city')}} = 'CA'",
            1,
            true,
        ),
        entry(
            "SELECT * FROM w WHERE {{LLMMap('Is this a team event?', 'w::event')}} = TRUE",
            1,
            true,
        ),
        // Example predictions (transcribed): second-to-last qualifier.
        entry(
            "SELECT {{LLMQA('Where was this driver born?', (SELECT title, content FROM \
             documents JOIN {{LLMJoin((SELECT driver FROM w ORDER BY \"position\" DESC \
             LIMIT 1 OFFSET 1), options='documents::title')}}))}}",
            2,
            true,
        ),
        // Example predictions (transcribed): series via mapped role column.
        entry(
            "SELECT series FROM w WHERE {{LLMMap('Does this role refer to a Chinese \
             politician born in the year 1090?', 'w::role')}} = TRUE",
            1,
            true,
        ),
        // Example predictions (transcribed): claim split into a document
        // check and a table check.
        entry(
            "SELECT {{LLMValidate('Abdul Hai Neamati was a member of a political party.', \
             (SELECT * FROM documents WHERE documents MATCH 'abdul OR neamati' ORDER BY rank \
             LIMIT 1))}} AND EXISTS (SELECT * FROM w WHERE successor = 'bashir baghlani')",
            1,
            true,
        ),
        // ---- dialect coverage ----
        entry("SELECT 1", 0, true),
        entry("SELECT COUNT(*) FROM w", 0, true),
        entry("SELECT a, b FROM w WHERE a > 3 AND b = 'x' OR c < 2", 0, true),
        entry("SELECT DISTINCT team FROM w ORDER BY team ASC LIMIT 5 OFFSET 2", 0, true),
        entry("SELECT school, COUNT(*) FROM w GROUP BY school HAVING COUNT(*) > 1", 0, true),
        entry("SELECT * FROM w WHERE name IN ('ana', 'bo') AND score BETWEEN 1 AND 9", 0, true),
        entry("SELECT * FROM w WHERE name LIKE 'jo%' AND school IS NOT NULL", 0, true),
        entry("SELECT CASE WHEN a > 0 THEN 'pos' ELSE 'neg' END FROM w", 0, true),
        entry("SELECT CAST(score AS INTEGER) FROM w WHERE NOT (a = 1)", 0, true),
        entry("SELECT (SELECT MAX(score) FROM w) - MIN(score) FROM w", 0, true),
        entry("SELECT * FROM w JOIN d ON w.id = d.id WHERE d.kind = 'song'", 0, true),
        entry("SELECT * FROM documents WHERE documents MATCH 'covid' ORDER BY rank", 0, true),
        entry(
            "SELECT COUNT(*) FROM w WHERE {{LLMMap('Is this a team event?', 'w::event')}} = TRUE \
             AND \"year\" > 1950",
            1,
            true,
        ),
        entry(
            "SELECT * FROM w WHERE {{LLMMap('Is this a city?', 'w::place')}} = TRUE AND \
             {{LLMMap('Is this recent?', 'w::date')}} = TRUE",
            2,
            true,
        ),
        entry(
            "SELECT {{LLMQA('Which is the largest?', (SELECT name, size FROM w ORDER BY size \
             DESC LIMIT 3))}}",
            1,
            true,
        ),
        entry(
            "SELECT {{LLMQA('Who won?', (SELECT * FROM w), options='w::winner')}} FROM w LIMIT 1",
            1,
            true,
        ),
        entry(
            "SELECT * FROM w WHERE \"date\" > {{LLMQA('When did the event happen?', \
             (SELECT * FROM documents WHERE documents MATCH 'event' ORDER BY rank LIMIT 1))}}",
            1,
            true,
        ),
        entry(
            "SELECT {{LLMQA('q', (SELECT x FROM t WHERE {{LLMMap('m', 't::x')}} = 'a'))}}",
            2,
            true,
        ),
        entry(
            "SELECT g, SUM(v) FROM w WHERE {{LLMMap('Is this valid?', 'w::v')}} = TRUE \
             GROUP BY g ORDER BY SUM(v) DESC",
            1,
            true,
        ),
    ]
}

fn squish(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn check_corpus_entry(entry: &CorpusEntry) -> Result<(), String> {
    let ast = parse_query(entry.text).map_err(|e| format!("parse failed: {e}\n{}", entry.text))?;
    let calls = extract_ingredients(&ast);
    ensure(
        calls.len() == entry.ingredients,
        format!(
            "expected {} ingredient(s), found {}:\n{}",
            entry.ingredients,
            calls.len(),
            entry.text
        ),
    )?;

    let first = render(&ast.root);
    let again = parse_query(&first).map_err(|e| format!("re-parse failed: {e}\n{first}"))?;
    ensure(
        render(&again.root) == first,
        format!("rendering is not a fixpoint:\n{}\n{first}", entry.text),
    )?;
    ensure(
        extract_ingredients(&again).len() == entry.ingredients,
        format!("ingredient count changed across round-trip:\n{}", entry.text),
    )?;
    if entry.verbatim {
        ensure(
            squish(&first) == squish(entry.text),
            format!("round-trip altered the text:\n   in: {}\n  out: {first}", entry.text),
        )?;
    }
    Ok(())
}

#[test]
fn criterion_1_grammar_corpus() {
    report(1, "published queries parse, round-trip, and count ingredients", || {
        let corpus = grammar_corpus();
        let start = Instant::now();
        for entry in &corpus {
            check_corpus_entry(entry)?;
        }
        let elapsed = start.elapsed();
        ensure(
            elapsed < Duration::from_secs(1),
            format!("corpus took {elapsed:?}, budget is 1s"),
        )
    });
}

// ------------------------------------------------- criterion 2: optimizer

#[test]
fn criterion_2_optimizer_exactness() {
    report(2, "push-down hands the join exactly the filtered subset", || {
        let handle = roster_db()?;
        let oracle = handle
            .execute_native("SELECT COUNT(*) FROM w WHERE school = 'university of georgia'")
            .map_err(|e| e.to_string())?;
        let expected = match &oracle.rows[0][0] {
            Value::Integer(n) => *n as usize,
            other => return fail(format!("oracle COUNT returned {other:?}")),
        };
        ensure(expected == 1, format!("fixture drifted: oracle count is {expected}"))?;

        let blender = RuleBlender::from_json_file(&fixture("roster/rules.json"))
            .map_err(|e| e.to_string())?;
        let query = "SELECT {{LLMQA('Which teams has the player played for in the MLB?', \
                     (SELECT title, content FROM documents JOIN {{LLMJoin((SELECT name FROM w \
                     WHERE school = 'university of georgia'), options='documents::title')}}))}}";
        let smoothie = execute(&handle, query, &blender, true)?;

        let join_step = smoothie
            .steps
            .iter()
            .find(|s| s.kind == StepKind::Ingredient && s.label == "LLMJoin")
            .ok_or("no LLMJoin step in trace")?;
        ensure(
            join_step.input_count == Some(expected),
            format!("join received {:?} values, oracle says {expected}", join_step.input_count),
        )?;
        ensure(
            join_step.input_preview == vec!["joshua fields".to_string()],
            format!("join received {:?}", join_step.input_preview),
        )?;
        ensure(
            smoothie.result.rows == vec![vec![Value::Text("seattle mariners".to_string())]],
            format!("final answer was {:?}", smoothie.result.rows),
        )
    });
}

// ----------------------------------------------- criterion 3: equivalence

const WORDS: [&str; 12] = [
    "oak", "elm", "fir", "pine", "birch", "maple", "cedar", "aspen", "willow", "spruce",
    "poplar", "sycamore",
];

fn random_equivalence_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let handle = DatabaseHandle::open_memory().map_err(|e| e.to_string())?;
    let rows = rng.random_range(0..=20usize);
    let mut script = String::from("CREATE TABLE \"w\" (\"a\" INTEGER, \"b\" TEXT, \"c\" INTEGER);");
    for _ in 0..rows {
        let a = rng.random_range(0..50);
        let b = WORDS[rng.random_range(0..WORDS.len())];
        let c = rng.random_range(0..50);
        script.push_str(&format!("INSERT INTO \"w\" VALUES ({a}, '{b}', {c});"));
    }
    handle.connection().execute_batch(&script).map_err(|e| e.to_string())?;

    // Random conjunctive predicate: the Map test plus 0..=2 native filters.
    let mut conjuncts = vec!["{{LLMMap('Is this word short?', 'w::b')}} = TRUE".to_string()];
    for _ in 0..rng.random_range(0..=2usize) {
        let k = rng.random_range(0..50);
        let filter = match rng.random_range(0..4u8) {
            0 => format!("\"a\" > {k}"),
            1 => format!("\"a\" < {k}"),
            2 => format!("\"c\" >= {k}"),
            _ => format!("\"b\" = '{}'", WORDS[rng.random_range(0..WORDS.len())]),
        };
        conjuncts.push(filter);
    }
    if rng.random_bool(0.5) {
        conjuncts.reverse();
    }
    let ordered = rng.random_bool(0.5);
    let select = match rng.random_range(0..3u8) {
        0 => "SELECT * FROM w",
        1 => "SELECT \"a\", \"b\" FROM w",
        _ => "SELECT COUNT(*) FROM w",
    };
    let mut query = format!("{select} WHERE {}", conjuncts.join(" AND "));
    if ordered && !select.contains("COUNT") {
        query.push_str(" ORDER BY \"a\", \"b\", \"c\"");
    }

    // "short" means at most four letters; deterministic per value.
    let blender = map_blender(|v| (v.len() <= 4).to_string());
    let optimized = execute(&handle, &query, &blender, true)?;
    let baseline = execute(&handle, &query, &blender, false)?;

    let normalize = |mut table: ResultRows| -> ResultRows {
        if !ordered {
            table.rows.sort_by(|x, y| format!("{x:?}").cmp(&format!("{y:?}")));
        }
        table
    };
    let left = normalize(optimized.result);
    let right = normalize(baseline.result);
    ensure(
        left == right,
        format!("tables diverge for:\n{query}\noptimized: {left:?}\nbaseline: {right:?}"),
    )
}

#[test]
fn criterion_3_semantic_equivalence() {
    report(3, "optimized and unoptimized runs agree on 120 random queries", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xB1E5D);
        let start = Instant::now();
        for case in 0..120 {
            random_equivalence_case(&mut rng).map_err(|e| format!("case {case}: {e}"))?;
        }
        let elapsed = start.elapsed();
        ensure(
            elapsed < Duration::from_secs(60),
            format!("equivalence battery took {elapsed:?}, budget is 60s"),
        )
    });
}

// ------------------------------------------------ criterion 4: soundness

/// Wraps a responder and records (constraint, answer) for every call.
struct Recording<F> {
    inner: F,
    log: Mutex<Vec<(Constraint, String)>>,
}

impl<F> Recording<F>
where
    F: Fn(&BlenderRequest) -> Result<String, BlenderError> + Send + Sync,
{
    fn new(inner: F) -> Self {
        Recording { inner, log: Mutex::new(Vec::new()) }
    }
}

impl<F> Blender for Recording<F>
where
    F: Fn(&BlenderRequest) -> Result<String, BlenderError> + Send + Sync,
{
    fn complete(&self, req: &BlenderRequest) -> Result<BlenderResponse, BlenderError> {
        let text = (self.inner)(req)?;
        self.log.lock().unwrap().push((req.constraint.clone(), text.clone()));
        Ok(BlenderResponse::unconstrained(text, req.prompt_chars()))
    }

    fn name(&self) -> &str {
        "recording"
    }
}

fn qa_soundness_case(rng: &mut ChaCha8Rng, pick: usize) -> Result<Vec<(Constraint, String)>, String> {
    let size = rng.random_range(2..=6usize);
    let mut options: Vec<&str> = WORDS.choose_multiple(rng, size).copied().collect();
    options.sort_unstable();
    let handle = DatabaseHandle::open_memory().map_err(|e| e.to_string())?;
    let mut script = String::from("CREATE TABLE \"w\" (\"choice\" TEXT);");
    for option in &options {
        script.push_str(&format!("INSERT INTO \"w\" VALUES ('{option}');"));
    }
    handle.connection().execute_batch(&script).map_err(|e| e.to_string())?;

    let blender = Recording::new(move |req: &BlenderRequest| {
        match &req.constraint {
            Constraint::ValueSet(allowed) => Ok(allowed[pick % allowed.len()].clone()),
            other => Err(BlenderError::Request(format!("expected a value-set, got {other:?}"))),
        }
    });
    let query = "SELECT {{LLMQA('Pick the best one.', (SELECT choice FROM w), options='w::choice')}}";
    let smoothie = execute(&handle, query, &blender, true)?;

    let answer = match &smoothie.result.rows[..] {
        [row] => match &row[..] {
            [Value::Text(t)] => t.clone(),
            other => return Err(format!("expected one text cell, got {other:?}")),
        },
        other => return Err(format!("expected one row, got {} rows", other.len())),
    };
    if !options.contains(&answer.as_str()) {
        return Err(format!("answer {answer:?} is not one of {options:?}"));
    }
    let log = std::mem::take(&mut *blender.log.lock().unwrap());
    Ok(log)
}

fn map_soundness_case(rng: &mut ChaCha8Rng) -> Result<Vec<(Constraint, String)>, String> {
    let handle = DatabaseHandle::open_memory().map_err(|e| e.to_string())?;
    let rows = rng.random_range(1..=25usize);
    let mut script = String::from("CREATE TABLE \"w\" (\"v\" TEXT);");
    for i in 0..rows {
        let word = WORDS[rng.random_range(0..WORDS.len())];
        script.push_str(&format!("INSERT INTO \"w\" VALUES ('{word}-{i}');"));
    }
    handle.connection().execute_batch(&script).map_err(|e| e.to_string())?;

    let blender = Recording::new(|req: &BlenderRequest| {
        let mut out = String::new();
        for line in req.user_prompt.lines() {
            if let Some((n, value)) = line.split_once(". ") {
                if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) {
                    out.push_str(&(value.len() % 2 == 0).to_string());
                    out.push(';');
                }
            }
        }
        Ok(out)
    });
    let query = "SELECT COUNT(*) FROM w WHERE {{LLMMap('Is this label long?', 'w::v')}} = TRUE";
    execute(&handle, query, &blender, true)?;
    let log = std::mem::take(&mut *blender.log.lock().unwrap());
    Ok(log)
}

#[test]
fn criterion_4_constraint_soundness() {
    report(4, "option sets and the boolean batch shape are always honored", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x50u64);
        let boolean_batch = regex::Regex::new("^((true|false);)+$").unwrap();
        let mut value_set_responses = 0usize;
        let mut boolean_responses = 0usize;

        for case in 0..120 {
            let log = qa_soundness_case(&mut rng, case).map_err(|e| format!("qa case {case}: {e}"))?;
            for (constraint, text) in log {
                if let Constraint::ValueSet(allowed) = constraint {
                    value_set_responses += 1;
                    ensure(
                        allowed.contains(&text),
                        format!("qa case {case}: response {text:?} outside {allowed:?}"),
                    )?;
                }
            }
        }
        for case in 0..120 {
            let log = map_soundness_case(&mut rng).map_err(|e| format!("map case {case}: {e}"))?;
            for (constraint, text) in log {
                if matches!(constraint, Constraint::Regex(_)) {
                    boolean_responses += 1;
                    ensure(
                        boolean_batch.is_match(&text),
                        format!("map case {case}: response {text:?} breaks the boolean shape"),
                    )?;
                }
            }
        }
        ensure(value_set_responses >= 120, "too few constrained QA responses observed")?;
        ensure(boolean_responses >= 120, "too few boolean Map responses observed")?;

        // A model that ignores the option set must be rejected, not passed
        // through as an answer.
        let handle = DatabaseHandle::open_memory().map_err(|e| e.to_string())?;
        handle
            .connection()
            .execute_batch(
                "CREATE TABLE \"w\" (\"choice\" TEXT); INSERT INTO \"w\" VALUES ('oak'), ('elm');",
            )
            .map_err(|e| e.to_string())?;
        let rogue = FnBlender::new(|_req: &BlenderRequest| Ok("chestnut".to_string()));
        let query =
            "SELECT {{LLMQA('Pick the best one.', (SELECT choice FROM w), options='w::choice')}}";
        match execute(&handle, query, &rogue, true) {
            Err(message) => ensure(
                message.contains("constraint"),
                format!("rejection should name the constraint: {message}"),
            ),
            Ok(smoothie) => fail(format!(
                "out-of-set answer slipped through: {:?}",
                smoothie.result.rows
            )),
        }
    });
}

// ---------------------------------------------------- criterion 5: replay

#[test]
fn criterion_5_end_to_end_replay() {
    report(5, "retrieval, constrained QA, and verdict replays are exact", || {
        // (a) BM25 retrieval: the season article mentioning both terms
        // outranks the others.
        let seasons = seasons_db()?;
        let top = seasons
            .execute_native(
                "SELECT title FROM documents WHERE documents MATCH 'nba OR covid' \
                 ORDER BY rank LIMIT 1",
            )
            .map_err(|e| e.to_string())?;
        ensure(
            top.rows == vec![vec![Value::Text("2019-20 nba season".to_string())]],
            format!("top document was {:?}", top.rows),
        )?;

        // (b) The year-constrained QA must answer with a value from the
        // year column, and the full query must return that season.
        let season_query =
            "SELECT \"year\" FROM w WHERE \"year\" = {{LLMQA('Which NBA season was suspended \
             due to COVID-19?', (SELECT * FROM documents WHERE documents MATCH 'nba OR covid' \
             ORDER BY rank LIMIT 1), options='w::year')}}";
        let blender = Recording::new(|req: &BlenderRequest| {
            if req.user_prompt.contains("Which NBA season was suspended") {
                Ok("2019-20".to_string())
            } else {
                Err(BlenderError::Request("unexpected prompt".to_string()))
            }
        });
        let smoothie = execute(&seasons, season_query, &blender, true)?;
        ensure(smoothie.outcome == Outcome::Answered, "season query returned no rows")?;
        ensure(
            smoothie.result.rows == vec![vec![Value::Text("2019-20".to_string())]],
            format!("season query returned {:?}", smoothie.result.rows),
        )?;
        let years = seasons
            .execute_native("SELECT DISTINCT \"year\" FROM w")
            .map_err(|e| e.to_string())?;
        let year_values: Vec<String> = years
            .rows
            .iter()
            .map(|row| row[0].display())
            .collect();
        let log = blender.log.lock().unwrap();
        let qa = log
            .iter()
            .find(|(c, _)| matches!(c, Constraint::ValueSet(_)))
            .ok_or("QA ran without a value-set constraint")?;
        if let (Constraint::ValueSet(allowed), answer) = qa {
            let mut expected = year_values.clone();
            expected.sort_unstable();
            let mut got = allowed.clone();
            got.sort_unstable();
            ensure(
                got == expected,
                format!("constraint {got:?} is not the year column {expected:?}"),
            )?;
            ensure(
                year_values.contains(answer),
                format!("QA answered {answer:?}, not a year value"),
            )?;
        }
        drop(log);

        // (c) Fact verification: scripted checks agree with evaluating the
        // formula by hand over the fixture rows.
        let matches = matches_db()?;
        let claim_query =
            "SELECT {{LLMValidate('Pesamino Victor is an association footballer.', \
             (SELECT * FROM documents WHERE documents MATCH 'pesamino OR victor' ORDER BY rank \
             LIMIT 1))}} AND NOT EXISTS (SELECT * FROM w WHERE {{LLMMap('Did the team win \
             this match?', 'w::result')}} = TRUE)";
        let footballer_is_valid = true;
        let match_results_won = [false, false]; // loss 0-1, draw 1-1
        let expected_verdict =
            footballer_is_valid && !match_results_won.iter().any(|&w| w);

        let verdict_blender = FnBlender::new(move |req: &BlenderRequest| {
            if req.user_prompt.contains("Pesamino Victor is an association footballer.") {
                return Ok(format!("{footballer_is_valid};"));
            }
            let mut out = String::new();
            let mut i = 0usize;
            for line in req.user_prompt.lines() {
                if let Some((n, _)) = line.split_once(". ") {
                    if !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) {
                        out.push_str(&format!("{};", match_results_won[i]));
                        i += 1;
                    }
                }
            }
            Ok(out)
        });
        let verdict = execute(&matches, claim_query, &verdict_blender, true)?;
        ensure(
            verdict.result.rows == vec![vec![Value::Integer(expected_verdict as i64)]],
            format!(
                "verdict {:?} disagrees with hand evaluation {expected_verdict}",
                verdict.result.rows
            ),
        )
    });
}

// --------------------------------------------------- criterion 6: savings

#[test]
fn criterion_6_prompt_savings() {
    report(6, "push-down removes at least 90% of prompt characters", || {
        let start = Instant::now();
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let db_path = dir.path().join("bench.db");
        let handle = DatabaseHandle::create(&db_path).map_err(|e| e.to_string())?;
        let mut script =
            String::from("CREATE TABLE \"w\" (\"id\" INTEGER, \"grp\" INTEGER, \"city\" TEXT);");
        for i in 0..1000 {
            script.push_str(&format!("INSERT INTO \"w\" VALUES ({i}, {}, 'city {i:04}');", i / 10));
        }
        handle.connection().execute_batch(&script).map_err(|e| e.to_string())?;
        drop(handle);

        // grp = 7 keeps 10 of the 1000 rows: a 1%-selective native filter.
        let query = "SELECT COUNT(*) FROM w WHERE {{LLMMap('What is the postal abbreviation \
                     of the state containing this city?', 'w::city')}} = 'CA' AND \"grp\" = 7";
        let blender = map_blender(|_| "CA".to_string());
        let report = measure_savings(&db_path, query, &blender, None).map_err(|e| e.to_string())?;

        ensure(
            report.used_values_passed == 10,
            format!("optimized run passed {} values, expected 10", report.used_values_passed),
        )?;
        ensure(
            report.baseline_values_passed == 1000,
            format!("baseline passed {} values, expected 1000", report.baseline_values_passed),
        )?;
        ensure(
            report.prompt_char_reduction >= 0.90,
            format!("prompt reduction {:.4} is under 0.90", report.prompt_char_reduction),
        )?;
        let elapsed = start.elapsed();
        ensure(
            elapsed < Duration::from_secs(5),
            format!("savings benchmark took {elapsed:?}, budget is 5s"),
        )
    });
}

// ------------------------------------------------ criterion 7: normalizer

#[test]
fn criterion_7_denotation_normalizer() {
    report(7, "equivalent answer surface forms share one canonical form", || {
        #[derive(serde::Deserialize)]
        struct Pair {
            left: String,
            right: String,
        }
        let raw = std::fs::read_to_string(fixture("normalizer_pairs.json"))
            .map_err(|e| e.to_string())?;
        let pairs: Vec<Pair> = serde_json::from_str(&raw).map_err(|e| e.to_string())?;
        ensure(pairs.len() >= 30, format!("only {} pairs in the regression file", pairs.len()))?;
        for pair in &pairs {
            ensure(
                denotation_equal(&pair.left, &pair.right),
                format!(
                    "{:?} and {:?} normalize apart: {:?} vs {:?}",
                    pair.left,
                    pair.right,
                    normalize_denotation(&pair.left),
                    normalize_denotation(&pair.right)
                ),
            )?;
        }
        let named = [("seven", "7"), ("$20 millions", "20,000,000")];
        for (left, right) in named {
            ensure(
                pairs.iter().any(|p| p.left == left && p.right == right),
                format!("regression file is missing the ({left:?}, {right:?}) pair"),
            )?;
        }
        // Guard rails: the normalizer must not over-merge.
        ensure(!denotation_equal("12", "1,2"), "list commas must stay separators")?;
        ensure(!denotation_equal("2019-20", "201920"), "ranges must keep their hyphen")
    });
}

// ------------------------------------------------ criterion 8: robustness

fn random_garbage(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(0..=160usize);
    let bytes: Vec<u8> = (0..len).map(|_| rng.random::<u8>()).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

fn mutated_query(rng: &mut ChaCha8Rng) -> String {
    let seeds = [
        "SELECT * FROM w WHERE {{LLMMap('Is this a team event?', 'w::event')}} = TRUE",
        "SELECT {{LLMQA('q', (SELECT x FROM t))}}",
        "SELECT a, b FROM w GROUP BY a HAVING COUNT(*) > 1 ORDER BY b LIMIT 3",
    ];
    let mut text: Vec<char> = seeds[rng.random_range(0..seeds.len())].chars().collect();
    for _ in 0..rng.random_range(1..=6usize) {
        if text.is_empty() {
            break;
        }
        let at = rng.random_range(0..text.len());
        match rng.random_range(0..3u8) {
            0 => {
                text.remove(at);
            }
            1 => text.insert(at, rng.random_range(0..128u8) as char),
            _ => text[at] = char::from(rng.random_range(33..127u8)),
        }
    }
    text.into_iter().collect()
}

fn session_tables(handle: &DatabaseHandle) -> Result<usize, String> {
    let left = handle
        .execute_native(
            "SELECT COUNT(*) FROM sqlite_temp_master WHERE name LIKE '__hql_sess_%'",
        )
        .map_err(|e| e.to_string())?;
    match &left.rows[0][0] {
        Value::Integer(n) => Ok(*n as usize),
        other => Err(format!("unexpected count value {other:?}")),
    }
}

#[test]
fn criterion_8_robustness() {
    report(8, "fuzzed parses never crash and executions never leak tables", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xF0221);
        for i in 0..10_000 {
            let text = if i % 2 == 0 { random_garbage(&mut rng) } else { mutated_query(&mut rng) };
            let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                let _ = parse_query(&text);
            }));
            ensure(outcome.is_ok(), format!("parser panicked on input {text:?}"))?;
        }

        // Executions — successful, erroring, and constraint-violating —
        // must all drop their session tables.
        let handle = roster_db()?;
        let blender = RuleBlender::from_json_file(&fixture("roster/rules.json"))
            .map_err(|e| e.to_string())?;
        let runs: Vec<(&str, bool)> = vec![
            (
                "SELECT COUNT(*) FROM w WHERE {{LLMMap('Is this a pitching position?', \
                 'w::position')}} = TRUE",
                true,
            ),
            ("SELECT missing_col FROM w", false),
            (
                "SELECT {{LLMQA('Which teams has the player played for in the MLB?', \
                 (SELECT title, content FROM documents JOIN {{LLMJoin((SELECT name FROM w \
                 WHERE school = 'university of georgia'), options='documents::title')}}))}}",
                true,
            ),
            (
                // The rules file has no match for this question, so the QA
                // falls to the default and the options constraint rejects it.
                "SELECT {{LLMQA('Completely novel question?', (SELECT name FROM w), \
                 options='w::school')}}",
                false,
            ),
        ];
        for (query, should_succeed) in runs {
            let result = execute(&handle, query, &blender, true);
            ensure(
                result.is_ok() == should_succeed,
                format!("run {query:?}: unexpected outcome {result:?}"),
            )?;
            let leaked = session_tables(&handle)?;
            ensure(leaked == 0, format!("{leaked} session table(s) leaked after {query:?}"))?;
        }

        // Forced mid-execution model failure, strict mode.
        let failing = FnBlender::new(|_req: &BlenderRequest| {
            Err::<String, _>(BlenderError::Request("backend down".to_string()))
        });
        let ast = parse_query(
            "SELECT COUNT(*) FROM w WHERE {{LLMMap('Is this a pitching position?', \
             'w::position')}} = TRUE",
        )
        .map_err(|e| e.to_string())?;
        let registry = Registry::new();
        let strict = PlannerConfig { pushdown: true, strict_map: true };
        let result = Planner::with_config(&handle, &registry, strict).execute(&ast, &failing);
        ensure(result.is_err(), "strict map with a failing backend must error")?;
        let leaked = session_tables(&handle)?;
        ensure(leaked == 0, format!("{leaked} session table(s) leaked after forced failure"))
    });
}
