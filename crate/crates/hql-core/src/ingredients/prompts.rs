//! Deterministic prompt construction for the built-in ingredients.

use crate::blender::{BlenderRequest, Constraint};
use crate::parser::OutputHint;
use crate::storage::ResultTable;
use crate::value::Value;

/// Default per-cell truncation when rendering context tables.
pub const CELL_CAP: usize = 400;

/// Batched boolean answers: one `true;`/`false;` item per value.
pub const BOOLEAN_BATCH_PATTERN: &str = "((true|false);)+";

/// Single boolean answer.
pub const BOOLEAN_ONE_PATTERN: &str = "(true|false);";

/// Renders a table subset as a pipe-separated block: header row, then data
/// rows, cells truncated to `cap` characters.
pub fn render_context(table: &ResultTable, cap: usize) -> String {
    let mut out = String::new();
    let cell = |v: String| {
        let mut s = v;
        if s.len() > cap {
            let mut end = cap;
            while !s.is_char_boundary(end) {
                end -= 1;
            }
            s.truncate(end);
        }
        s
    };
    out.push_str(
        &table.columns.iter().map(|c| cell(c.clone())).collect::<Vec<_>>().join(" | "),
    );
    for row in &table.rows {
        out.push('\n');
        out.push_str(
            &row.iter().map(|v| cell(v.display())).collect::<Vec<_>>().join(" | "),
        );
    }
    out
}

/// Prompt for one batch of Map values. The answer contract is one
/// semicolon-terminated item per value, in order.
pub fn map_request(question: &str, batch: &[Value], hint: &OutputHint) -> BlenderRequest {
    let mut user = String::new();
    user.push_str("Answer the question about each value below. Reply with exactly one answer \
                   per value, in order, each followed by a semicolon and nothing else.\n");
    match hint {
        OutputHint::Boolean { .. } => {
            user.push_str("Each answer must be either true or false.\n");
        }
        OutputHint::ExampleLiteral { example, .. } => {
            user.push_str(&format!("Here is an example output: {example}\n"));
        }
        OutputHint::Numeric { .. } => {
            user.push_str("Each answer must be a number.\n");
        }
        OutputHint::None => {}
    }
    user.push_str(&format!("\nQuestion: {question}\nValues:\n"));
    for (i, value) in batch.iter().enumerate() {
        user.push_str(&format!("{}. {}\n", i + 1, value.display()));
    }
    user.push_str("Answers:");

    let constraint = match hint {
        OutputHint::Boolean { .. } => Constraint::Regex(BOOLEAN_BATCH_PATTERN.to_string()),
        _ => Constraint::None,
    };
    BlenderRequest::new("You transform table values one at a time.", user)
        .with_constraint(constraint)
}

/// Prompt for a QA task over a rendered context table.
pub fn qa_request(question: &str, context: &str, options: Option<&[String]>) -> BlenderRequest {
    let mut user = String::new();
    user.push_str("Use the table below to answer the question with a single value.\n\n");
    user.push_str(context);
    if let Some(options) = options {
        user.push_str("\n\nAnswer with exactly one of the following values:\n");
        for option in options {
            user.push_str(&format!("- {option}\n"));
        }
    }
    user.push_str(&format!("\nQuestion: {question}\nAnswer:"));
    let constraint = match options {
        Some(options) => Constraint::ValueSet(options.to_vec()),
        None => Constraint::None,
    };
    BlenderRequest::new("You answer questions from tables.", user).with_constraint(constraint)
}

/// Prompt aligning `candidates` with `options`; answers are
/// `candidate -> option` lines, or `candidate -> NONE`.
pub fn join_request(instruction: &str, candidates: &[String], options: &[String]) -> BlenderRequest {
    let mut user = String::new();
    user.push_str("Match each candidate to the option naming the same thing, one per line, \
                   formatted as `candidate -> option`. Use `candidate -> NONE` when nothing \
                   matches.\n");
    if !instruction.is_empty() {
        user.push_str(&format!("Instruction: {instruction}\n"));
    }
    user.push_str("\nOptions:\n");
    for option in options {
        user.push_str(&format!("- {option}\n"));
    }
    user.push_str("\nCandidates:\n");
    for candidate in candidates {
        user.push_str(&format!("- {candidate}\n"));
    }
    user.push_str("\nMatches:");
    BlenderRequest::new("You align values that share a referent.", user)
}

/// Prompt for a boolean claim over a rendered context table.
pub fn validate_request(claim: &str, context: &str) -> BlenderRequest {
    let user = format!(
        "Decide whether the claim is supported by the table below. Answer `true;` or \
         `false;` and nothing else.\n\n{context}\n\nClaim: {claim}\nAnswer:"
    );
    BlenderRequest::new("You verify claims against tables.", user)
        .with_constraint(Constraint::Regex(BOOLEAN_ONE_PATTERN.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::Span;

    #[test]
    fn context_renders_pipes_and_truncates() {
        let table = ResultTable {
            columns: vec!["title".to_string(), "content".to_string()],
            rows: vec![vec![Value::Text("a".into()), Value::Text("x".repeat(500))]],
        };
        let rendered = render_context(&table, CELL_CAP);
        let lines: Vec<&str> = rendered.lines().collect();
        assert_eq!(lines[0], "title | content");
        assert!(lines[1].starts_with("a | x"));
        assert_eq!(lines[1].len(), "a | ".len() + CELL_CAP);
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        let table = ResultTable {
            columns: vec!["c".to_string()],
            rows: vec![vec![Value::Text("é".repeat(300))]],
        };
        let rendered = render_context(&table, CELL_CAP);
        assert!(rendered.lines().nth(1).unwrap().len() <= CELL_CAP);
    }

    #[test]
    fn map_request_carries_hint_and_constraint() {
        let req = map_request(
            "Is this a team event?",
            &[Value::Text("team event".into())],
            &OutputHint::Boolean { source: Span::synthetic() },
        );
        assert!(req.user_prompt.contains("true or false"));
        assert_eq!(req.constraint, Constraint::Regex(BOOLEAN_BATCH_PATTERN.to_string()));

        let req = map_request(
            "What state is this city in?",
            &[Value::Text("san jose".into())],
            &OutputHint::ExampleLiteral { example: "CA".to_string(), source: Span::synthetic() },
        );
        assert!(req.user_prompt.contains("Here is an example output: CA"));
        assert!(req.constraint.is_none());
    }

    #[test]
    fn qa_request_lists_options() {
        let options = vec!["2018-19".to_string(), "2019-20".to_string()];
        let req = qa_request("Which season?", "year\n2019-20", Some(&options));
        assert!(req.user_prompt.contains("- 2018-19"));
        assert_eq!(req.constraint, Constraint::ValueSet(options));
    }
}
