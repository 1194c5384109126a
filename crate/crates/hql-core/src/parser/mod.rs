//! Query-text front end: lexer, recursive-descent grammar, post-parse
//! analysis, and SQL rendering for the `{{...}}`-extended dialect.

mod analyze;
pub mod ast;
mod grammar;
pub mod lexer;
pub mod render;

pub use ast::*;
pub use render::{render, render_expr, render_native, MissingSubstitution};

use crate::error::SyntaxError;
use lexer::{tokenize, Tok};

/// Resolves ingredient function names (case-insensitive) to their kind
/// and behaviour class. Implemented by the ingredient registry; the
/// default resolver knows only the four built-ins.
pub trait IngredientNames {
    fn resolve(&self, name: &str) -> Option<(IngredientKind, IngredientClass)>;
}

/// Name resolver for the built-in ingredients only.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinNames;

impl IngredientNames for BuiltinNames {
    fn resolve(&self, name: &str) -> Option<(IngredientKind, IngredientClass)> {
        if name.eq_ignore_ascii_case("LLMMap") {
            Some((IngredientKind::Map, IngredientClass::Scalar))
        } else if name.eq_ignore_ascii_case("LLMQA") {
            Some((IngredientKind::Qa, IngredientClass::Aggregate))
        } else if name.eq_ignore_ascii_case("LLMJoin") {
            Some((IngredientKind::Join, IngredientClass::JoinSets))
        } else if name.eq_ignore_ascii_case("LLMValidate") {
            Some((IngredientKind::Validate, IngredientClass::Validate))
        } else {
            None
        }
    }
}

/// Parses query text with the built-in ingredient names.
pub fn parse_query(text: &str) -> Result<QueryAst, SyntaxError> {
    parse_query_with(text, &BuiltinNames)
}

/// Parses query text, resolving ingredient names through `names` so
/// registered custom ingredients are accepted.
pub fn parse_query_with(text: &str, names: &dyn IngredientNames) -> Result<QueryAst, SyntaxError> {
    if text.trim().is_empty() {
        return Err(SyntaxError::eof("empty query", text));
    }
    let mut parser = grammar::Parser::new(text, names)?;
    let mut root = parser.parse_statement()?;
    analyze::finalize(&mut root);
    Ok(QueryAst { root, source: text.to_string() })
}

/// Lists every ingredient call in depth-first postorder: nested calls
/// precede the call that encloses them.
/// Ingredient calls under one query node, innermost-first.
pub fn extract_from_query(query: &Query) -> Vec<IngredientCall> {
    let mut out = Vec::new();
    collect_query(query, &mut out);
    out.sort_by_key(|call| call.id);
    out
}

pub fn extract_ingredients(ast: &QueryAst) -> Vec<IngredientCall> {
    let mut calls = Vec::new();
    collect_query(&ast.root, &mut calls);
    calls.sort_by_key(|c| c.id);
    calls
}

/// Infers the expected output shape of a call from its surroundings:
/// Boolean when compared to TRUE/FALSE, ExampleLiteral when compared to
/// any other literal, Numeric in arithmetic positions, None otherwise.
pub fn infer_output_hint(_ast: &QueryAst, call: &IngredientCall) -> OutputHint {
    if let Some(site) = &call.comparison {
        return match &site.literal {
            Literal::Boolean(_) => OutputHint::Boolean { source: site.literal_span },
            Literal::Number(raw) => {
                OutputHint::ExampleLiteral { example: raw.clone(), source: site.literal_span }
            }
            Literal::String(s) => {
                OutputHint::ExampleLiteral { example: s.clone(), source: site.literal_span }
            }
            Literal::Null => OutputHint::None,
        };
    }
    if call.arithmetic_operand {
        return OutputHint::Numeric { source: call.span };
    }
    OutputHint::None
}

/// Canonical token stream for whitespace-insensitive SQL comparison:
/// bare words uppercase, everything else verbatim.
pub fn token_fingerprint(sql: &str) -> Result<Vec<Tok>, SyntaxError> {
    Ok(tokenize(sql)?
        .into_iter()
        .map(|t| match t.tok {
            Tok::Word(w) => Tok::Word(w.to_ascii_uppercase()),
            other => other,
        })
        .collect())
}

/// JSON debug dump of the tree: {kind, span, children, ...}.
pub fn debug_json(ast: &QueryAst) -> serde_json::Value {
    query_json(&ast.root)
}

fn collect_query(q: &Query, out: &mut Vec<IngredientCall>) {
    for cte in &q.ctes {
        collect_query(&cte.query, out);
    }
    for item in &q.select.items {
        if let SelectItem::Expr { expr, .. } = item {
            collect_expr(expr, out);
        }
    }
    for t in &q.select.from {
        collect_table(t, out);
    }
    if let Some(w) = &q.select.where_clause {
        collect_expr(w, out);
    }
    for e in &q.select.group_by {
        collect_expr(e, out);
    }
    if let Some(h) = &q.select.having {
        collect_expr(h, out);
    }
    for item in &q.order_by {
        collect_expr(&item.expr, out);
    }
    if let Some(l) = &q.limit {
        collect_expr(l, out);
    }
    if let Some(o) = &q.offset {
        collect_expr(o, out);
    }
}

fn collect_table(t: &TableRef, out: &mut Vec<IngredientCall>) {
    match t {
        TableRef::Named { .. } => {}
        TableRef::Subquery { query, .. } => collect_query(query, out),
        TableRef::Join { left, right, constraint, .. } => {
            collect_table(left, out);
            collect_table(right, out);
            if let Some(JoinConstraint::On(e)) = constraint {
                collect_expr(e, out);
            }
        }
        TableRef::Ingredient { call, .. } => collect_call(call, out),
    }
}

fn collect_expr(e: &Expr, out: &mut Vec<IngredientCall>) {
    match e {
        Expr::Literal { .. } | Expr::Column { .. } => {}
        Expr::Unary { operand, .. } => collect_expr(operand, out),
        Expr::Binary { left, right, .. } => {
            collect_expr(left, out);
            collect_expr(right, out);
        }
        Expr::IsNull { operand, .. } => collect_expr(operand, out),
        Expr::InList { operand, list, .. } => {
            collect_expr(operand, out);
            for item in list {
                collect_expr(item, out);
            }
        }
        Expr::InSubquery { operand, query, .. } => {
            collect_expr(operand, out);
            collect_query(query, out);
        }
        Expr::Between { operand, low, high, .. } => {
            collect_expr(operand, out);
            collect_expr(low, out);
            collect_expr(high, out);
        }
        Expr::Like { operand, pattern, .. } => {
            collect_expr(operand, out);
            collect_expr(pattern, out);
        }
        Expr::Function { args, .. } => {
            for arg in args {
                if let FunctionArg::Expr(e) = arg {
                    collect_expr(e, out);
                }
            }
        }
        Expr::Case { operand, branches, else_expr, .. } => {
            if let Some(op) = operand {
                collect_expr(op, out);
            }
            for b in branches {
                collect_expr(&b.when, out);
                collect_expr(&b.then, out);
            }
            if let Some(e) = else_expr {
                collect_expr(e, out);
            }
        }
        Expr::Exists { query, .. } => collect_query(query, out),
        Expr::Subquery { query, .. } => collect_query(query, out),
        Expr::Cast { operand, .. } => collect_expr(operand, out),
        Expr::Paren { inner, .. } => collect_expr(inner, out),
        Expr::Ingredient { call, .. } => collect_call(call, out),
    }
}

fn collect_call(call: &IngredientCall, out: &mut Vec<IngredientCall>) {
    for arg in &call.raw_args {
        if let Some(q) = arg.as_subquery() {
            collect_query(q, out);
        }
    }
    out.push(call.clone());
}

// ---- JSON debug dump ----

fn node(kind: &str, span: Span, children: Vec<serde_json::Value>) -> serde_json::Value {
    serde_json::json!({ "kind": kind, "span": [span.start, span.end], "children": children })
}

fn leaf(kind: &str, span: Span, text: String) -> serde_json::Value {
    serde_json::json!({ "kind": kind, "span": [span.start, span.end], "text": text })
}

fn query_json(q: &Query) -> serde_json::Value {
    let mut children = Vec::new();
    for cte in &q.ctes {
        children.push(node("cte", cte.span, vec![query_json(&cte.query)]));
    }
    children.push(select_json(&q.select));
    for item in &q.order_by {
        children.push(node("order-by", item.span, vec![expr_json(&item.expr)]));
    }
    if let Some(l) = &q.limit {
        children.push(node("limit", l.span(), vec![expr_json(l)]));
    }
    if let Some(o) = &q.offset {
        children.push(node("offset", o.span(), vec![expr_json(o)]));
    }
    node("query", q.span, children)
}

fn select_json(s: &Select) -> serde_json::Value {
    let mut children = Vec::new();
    for item in &s.items {
        children.push(match item {
            SelectItem::Wildcard { span } => leaf("wildcard", *span, "*".to_string()),
            SelectItem::TableWildcard { table, span } => {
                leaf("table-wildcard", *span, format!("{}.*", table.value))
            }
            SelectItem::Expr { expr, span, .. } => {
                node("select-item", *span, vec![expr_json(expr)])
            }
        });
    }
    for t in &s.from {
        children.push(table_json(t));
    }
    if let Some(w) = &s.where_clause {
        children.push(node("where", w.span(), vec![expr_json(w)]));
    }
    for e in &s.group_by {
        children.push(node("group-by", e.span(), vec![expr_json(e)]));
    }
    if let Some(h) = &s.having {
        children.push(node("having", h.span(), vec![expr_json(h)]));
    }
    node("select", s.span, children)
}

fn table_json(t: &TableRef) -> serde_json::Value {
    match t {
        TableRef::Named { name, span, .. } => leaf("table", *span, name.value.clone()),
        TableRef::Subquery { query, span, .. } => {
            node("derived-table", *span, vec![query_json(query)])
        }
        TableRef::Join { left, right, constraint, span, .. } => {
            let mut children = vec![table_json(left), table_json(right)];
            if let Some(JoinConstraint::On(e)) = constraint {
                children.push(node("on", e.span(), vec![expr_json(e)]));
            }
            node("join", *span, children)
        }
        TableRef::Ingredient { call, span } => node("ingredient-table", *span, vec![call_json(call)]),
    }
}

fn expr_json(e: &Expr) -> serde_json::Value {
    match e {
        Expr::Literal { value, span } => {
            let text = match value {
                Literal::Null => "NULL".to_string(),
                Literal::Boolean(b) => b.to_string().to_uppercase(),
                Literal::Number(n) => n.clone(),
                Literal::String(s) => s.clone(),
            };
            leaf("literal", *span, text)
        }
        Expr::Column { table, column, span } => {
            let text = match table {
                Some(t) => format!("{}.{}", t.value, column.value),
                None => column.value.clone(),
            };
            leaf("column", *span, text)
        }
        Expr::Unary { operand, span, .. } => node("unary", *span, vec![expr_json(operand)]),
        Expr::Binary { left, op, right, span } => serde_json::json!({
            "kind": "binary",
            "op": op.sql(),
            "span": [span.start, span.end],
            "children": [expr_json(left), expr_json(right)],
        }),
        Expr::IsNull { operand, span, .. } => node("is-null", *span, vec![expr_json(operand)]),
        Expr::InList { operand, list, span, .. } => {
            let mut children = vec![expr_json(operand)];
            children.extend(list.iter().map(expr_json));
            node("in-list", *span, children)
        }
        Expr::InSubquery { operand, query, span, .. } => {
            node("in-subquery", *span, vec![expr_json(operand), query_json(query)])
        }
        Expr::Between { operand, low, high, span, .. } => node(
            "between",
            *span,
            vec![expr_json(operand), expr_json(low), expr_json(high)],
        ),
        Expr::Like { operand, pattern, span, .. } => {
            node("like", *span, vec![expr_json(operand), expr_json(pattern)])
        }
        Expr::Function { name, args, span, .. } => {
            let children: Vec<serde_json::Value> = args
                .iter()
                .map(|a| match a {
                    FunctionArg::Star => leaf("star", *span, "*".to_string()),
                    FunctionArg::Expr(e) => expr_json(e),
                })
                .collect();
            serde_json::json!({
                "kind": "function",
                "name": name.value,
                "span": [span.start, span.end],
                "children": children,
            })
        }
        Expr::Case { branches, else_expr, span, .. } => {
            let mut children = Vec::new();
            for b in branches {
                children.push(expr_json(&b.when));
                children.push(expr_json(&b.then));
            }
            if let Some(e) = else_expr {
                children.push(expr_json(e));
            }
            node("case", *span, children)
        }
        Expr::Exists { query, span, .. } => node("exists", *span, vec![query_json(query)]),
        Expr::Subquery { query, span } => node("subquery", *span, vec![query_json(query)]),
        Expr::Cast { operand, span, .. } => node("cast", *span, vec![expr_json(operand)]),
        Expr::Paren { inner, span } => node("paren", *span, vec![expr_json(inner)]),
        Expr::Ingredient { call, span } => node("ingredient", *span, vec![call_json(call)]),
    }
}

fn call_json(call: &IngredientCall) -> serde_json::Value {
    let children: Vec<serde_json::Value> = call
        .raw_args
        .iter()
        .map(|arg| match arg {
            RawArg::Str { value, span } => leaf("string-arg", *span, value.clone()),
            RawArg::Subquery { query, span } => node("subquery-arg", *span, vec![query_json(query)]),
            RawArg::Keyword { name, value, span } => serde_json::json!({
                "kind": "keyword-arg",
                "name": name,
                "span": [span.start, span.end],
                "children": [match &**value {
                    RawArg::Str { value, span } => leaf("string-arg", *span, value.clone()),
                    RawArg::Subquery { query, span } => node("subquery-arg", *span, vec![query_json(query)]),
                    RawArg::Keyword { .. } => serde_json::Value::Null,
                }],
            }),
        })
        .collect();
    serde_json::json!({
        "kind": "ingredient-call",
        "name": call.name,
        "id": call.id,
        "context": call.context,
        "span": [call.span.start, call.span.end],
        "children": children,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEAM_EVENT: &str =
        "SELECT * FROM w WHERE {{LLMMap('Is this a team event?', 'w::event')}} = TRUE";

    const CITY_STATE: &str =
        "SELECT * FROM w WHERE {{LLMMap('What state is this city in?', 'w::city')}} = 'CA'";

    const MARINERS: &str = "SELECT {{LLMQA('Which teams has the player played for in the MLB?', \
         (SELECT title, content FROM documents JOIN {{LLMJoin((SELECT name FROM w WHERE school \
         = 'university of georgia'), options='documents::title')}}))}}";

    #[test]
    fn map_in_comparison_context() {
        let ast = parse_query(TEAM_EVENT).unwrap();
        let calls = extract_ingredients(&ast);
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].kind, IngredientKind::Map);
        assert_eq!(calls[0].context, SyntacticContext::ComparisonOperand);
        assert_eq!(calls[0].question(), Some("Is this a team event?"));
        let pair = calls[0].target_column().unwrap();
        assert_eq!((pair.table.as_str(), pair.column.as_str()), ("w", "event"));
    }

    #[test]
    fn pure_sql_has_no_ingredients() {
        let ast = parse_query("SELECT 1").unwrap();
        assert!(extract_ingredients(&ast).is_empty());
    }

    #[test]
    fn nested_join_inside_qa_context() {
        let ast = parse_query(MARINERS).unwrap();
        let calls = extract_ingredients(&ast);
        assert_eq!(calls.len(), 2);
        // Innermost-first: the join nested in the QA context precedes it.
        assert_eq!(calls[0].kind, IngredientKind::Join);
        assert_eq!(calls[0].context, SyntacticContext::TableExpression);
        assert_eq!(calls[1].kind, IngredientKind::Qa);
        assert_eq!(calls[1].context, SyntacticContext::SelectItem);
        // The QA context subquery reads from documents.
        let ctx = calls[1].context_subquery().unwrap();
        let from_names: Vec<String> = ctx
            .select
            .from
            .iter()
            .map(|t| match t {
                TableRef::Join { left, .. } => match &**left {
                    TableRef::Named { name, .. } => name.value.clone(),
                    _ => String::new(),
                },
                TableRef::Named { name, .. } => name.value.clone(),
                _ => String::new(),
            })
            .collect();
        assert_eq!(from_names, vec!["documents".to_string()]);
    }

    #[test]
    fn doubly_nested_extraction_order() {
        let q = "SELECT {{LLMQA('q', (SELECT x FROM t WHERE {{LLMMap('m', 't::x')}} = 'a'))}}";
        let ast = parse_query(q).unwrap();
        let calls = extract_ingredients(&ast);
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[0].kind, IngredientKind::Map);
        assert_eq!(calls[1].kind, IngredientKind::Qa);
        assert!(calls[0].id < calls[1].id);
    }

    #[test]
    fn hint_example_literal() {
        let ast = parse_query(CITY_STATE).unwrap();
        let call = &extract_ingredients(&ast)[0];
        match infer_output_hint(&ast, call) {
            OutputHint::ExampleLiteral { example, .. } => assert_eq!(example, "CA"),
            other => panic!("expected ExampleLiteral, got {other:?}"),
        }
    }

    #[test]
    fn hint_boolean() {
        let ast = parse_query(TEAM_EVENT).unwrap();
        let call = &extract_ingredients(&ast)[0];
        assert!(infer_output_hint(&ast, call).is_boolean());
    }

    #[test]
    fn hint_none_for_bare_select_item() {
        let ast = parse_query("SELECT {{LLMQA('what?', (SELECT * FROM t))}}").unwrap();
        let call = &extract_ingredients(&ast)[0];
        assert_eq!(infer_output_hint(&ast, call), OutputHint::None);
    }

    #[test]
    fn hint_boolean_only_for_true_false() {
        // 1 is truthy in SQLite but is not the TRUE keyword.
        let ast =
            parse_query("SELECT * FROM w WHERE {{LLMMap('q', 'w::x')}} = 1").unwrap();
        let call = &extract_ingredients(&ast)[0];
        match infer_output_hint(&ast, call) {
            OutputHint::ExampleLiteral { example, .. } => assert_eq!(example, "1"),
            other => panic!("expected ExampleLiteral, got {other:?}"),
        }
    }

    #[test]
    fn hint_numeric_in_arithmetic() {
        let ast =
            parse_query("SELECT {{LLMMap('how many?', 'w::x')}} + 2 FROM w").unwrap();
        let call = &extract_ingredients(&ast)[0];
        assert!(matches!(infer_output_hint(&ast, call), OutputHint::Numeric { .. }));
    }

    #[test]
    fn round_trip_fingerprints() {
        for q in [
            TEAM_EVENT,
            CITY_STATE,
            MARINERS,
            "SELECT 1",
            "SELECT DISTINCT a, b AS c FROM t1 JOIN t2 ON t1.x = t2.y WHERE z > 3 \
             GROUP BY a HAVING COUNT(*) > 1 ORDER BY b DESC LIMIT 10 OFFSET 2",
            "WITH s AS (SELECT * FROM w) SELECT * FROM s WHERE x IN ('a', 'b')",
            "SELECT CASE WHEN x = 1 THEN 'one' ELSE 'many' END FROM t",
            "SELECT * FROM documents WHERE documents MATCH 'nba OR covid' ORDER BY rank LIMIT 1",
            "SELECT CAST(x AS INTEGER) FROM t WHERE y IS NOT NULL AND z NOT IN (1, 2)",
            "SELECT * FROM (SELECT a FROM t) sub WHERE NOT EXISTS (SELECT 1 FROM u WHERE u.a = sub.a)",
        ] {
            let ast = parse_query(q).unwrap();
            let rendered = render(&ast.root);
            assert_eq!(
                token_fingerprint(q).unwrap(),
                token_fingerprint(&rendered).unwrap(),
                "round-trip mismatch:\n  input:    {q}\n  rendered: {rendered}"
            );
            // Reparsing the rendered text is stable.
            let ast2 = parse_query(&rendered).unwrap();
            assert_eq!(render(&ast2.root), rendered);
        }
    }

    #[test]
    fn render_native_substitutes_fragments() {
        let ast = parse_query(TEAM_EVENT).unwrap();
        let id = extract_ingredients(&ast)[0].id;
        let subs = std::collections::BTreeMap::from([(id, "\"__sess_0\".\"output\"".to_string())]);
        let sql = render_native(&ast.root, &subs).unwrap();
        assert_eq!(sql, "SELECT * FROM w WHERE \"__sess_0\".\"output\" = TRUE");
        assert!(!sql.contains("{{"));
    }

    #[test]
    fn render_native_reports_missing_substitution() {
        let ast = parse_query(TEAM_EVENT).unwrap();
        let err = render_native(&ast.root, &Default::default()).unwrap_err();
        assert_eq!(err.name, "LLMMap");
    }

    #[test]
    fn render_native_identity_for_pure_sql() {
        let q = "SELECT a FROM t WHERE b = 'x'";
        let ast = parse_query(q).unwrap();
        let sql = render_native(&ast.root, &Default::default()).unwrap();
        assert_eq!(sql, q);
    }

    #[test]
    fn unknown_ingredient_rejected() {
        let err = parse_query("SELECT {{Bogus('q')}}").unwrap_err();
        assert!(err.message.contains("unknown ingredient"), "{err}");
    }

    #[test]
    fn ingredient_names_case_insensitive() {
        let ast = parse_query("SELECT * FROM w WHERE {{llmmap('q', 'w::x')}} = 'y'").unwrap();
        assert_eq!(extract_ingredients(&ast)[0].kind, IngredientKind::Map);
    }

    #[test]
    fn join_only_in_table_position() {
        let err = parse_query(
            "SELECT * FROM w WHERE {{LLMJoin((SELECT a FROM t), options='u::b')}} = 1",
        )
        .unwrap_err();
        assert!(err.message.contains("table function"), "{err}");

        let err = parse_query("SELECT * FROM {{LLMMap('q', 'w::x')}}").unwrap_err();
        assert!(err.message.contains("cannot appear in a FROM clause"), "{err}");
    }

    #[test]
    fn map_requires_column_pair() {
        let err = parse_query("SELECT * FROM w WHERE {{LLMMap('q', 'no-separator')}} = 1")
            .unwrap_err();
        assert!(err.message.contains("table::column"), "{err}");
    }

    #[test]
    fn join_requires_options() {
        let err =
            parse_query("SELECT * FROM w JOIN {{LLMJoin((SELECT a FROM t))}}").unwrap_err();
        assert!(err.message.contains("options"), "{err}");
    }

    #[test]
    fn mutation_statements_rejected() {
        for q in ["INSERT INTO t VALUES (1)", "DROP TABLE t", "UPDATE t SET a = 1"] {
            let err = parse_query(q).unwrap_err();
            assert!(err.message.contains("not supported"), "{q}: {err}");
        }
    }

    #[test]
    fn set_operations_rejected() {
        let err = parse_query("SELECT 1 UNION SELECT 2").unwrap_err();
        assert!(err.message.contains("set operation"), "{err}");
    }

    #[test]
    fn nested_quotes_in_question() {
        let q = "SELECT * FROM w WHERE {{LLMMap('What''s the state?', 'w::city')}} = 'CA'";
        let ast = parse_query(q).unwrap();
        assert_eq!(extract_ingredients(&ast)[0].question(), Some("What's the state?"));
        let rendered = render(&ast.root);
        assert_eq!(token_fingerprint(q).unwrap(), token_fingerprint(&rendered).unwrap());
    }

    #[test]
    fn empty_query_rejected() {
        assert!(parse_query("").is_err());
        assert!(parse_query("   \n\t ").is_err());
    }

    #[test]
    fn debug_json_shape() {
        let ast = parse_query(TEAM_EVENT).unwrap();
        let json = debug_json(&ast);
        assert_eq!(json["kind"], "query");
        let dumped = json.to_string();
        assert!(dumped.contains("ingredient-call"));
        assert!(dumped.contains("LLMMap"));
    }

    #[test]
    fn spans_cover_ingredient_regions() {
        let ast = parse_query(TEAM_EVENT).unwrap();
        let call = &extract_ingredients(&ast)[0];
        let text = &TEAM_EVENT[call.span.start..call.span.end];
        assert!(text.starts_with("{{LLMMap"));
        assert!(text.ends_with("}}"));
    }
}
