//! Scope analysis for push-down: which select encloses an ingredient call,
//! which tables its FROM clause makes visible, and which WHERE conjuncts
//! can soundly move into the call's input subquery.

use crate::parser::{
    extract_from_query, BinaryOp, Expr, Ident, IngredientCall, NodeId, Query, RawArg, Select,
    TableRef,
};
use crate::storage::DatabaseContext;

/// One table made visible by a FROM clause.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    /// Name predicates use: the alias when present, else the table name.
    pub visible: String,
    /// Underlying base table; None for subquery aliases.
    pub real: Option<String>,
}

/// Collects the bindings of one FROM clause, left to right.
pub fn from_bindings(from: &[TableRef], out: &mut Vec<Binding>) {
    for table in from {
        table_bindings(table, out);
    }
}

fn table_bindings(table: &TableRef, out: &mut Vec<Binding>) {
    match table {
        TableRef::Named { name, alias, .. } => out.push(Binding {
            visible: alias.as_ref().map_or_else(|| name.value.clone(), |a| a.name.value.clone()),
            real: Some(name.value.clone()),
        }),
        TableRef::Subquery { alias, .. } => {
            if let Some(alias) = alias {
                out.push(Binding { visible: alias.name.value.clone(), real: None });
            }
        }
        TableRef::Join { left, right, .. } => {
            table_bindings(left, out);
            table_bindings(right, out);
        }
        TableRef::Ingredient { .. } => {}
    }
}

fn query_contains(query: &Query, id: NodeId) -> bool {
    extract_from_query(query).iter().any(|call| call.id == id)
}

/// The innermost select whose scope contains the call. Calls inside an
/// ingredient argument subquery belong to that subquery's select.
pub fn enclosing_select(query: &Query, id: NodeId) -> Option<&Select> {
    if !query_contains(query, id) {
        return None;
    }
    for child in child_queries(query) {
        if let Some(select) = enclosing_select(child, id) {
            return Some(select);
        }
    }
    Some(&query.select)
}

/// Queries nested directly under `query` (not crossing further query
/// boundaries): CTEs, subqueries in expressions, FROM subqueries, and
/// ingredient argument subqueries.
pub fn child_queries(query: &Query) -> Vec<&Query> {
    let mut out: Vec<&Query> = Vec::new();
    for cte in &query.ctes {
        out.push(&cte.query);
    }
    let select = &query.select;
    for item in &select.items {
        if let crate::parser::SelectItem::Expr { expr, .. } = item {
            expr_child_queries(expr, &mut out);
        }
    }
    for table in &select.from {
        table_child_queries(table, &mut out);
    }
    for expr in select
        .where_clause
        .iter()
        .chain(&select.group_by)
        .chain(&select.having)
        .chain(query.order_by.iter().map(|o| &o.expr))
        .chain(&query.limit)
        .chain(&query.offset)
    {
        expr_child_queries(expr, &mut out);
    }
    out
}

fn table_child_queries<'a>(table: &'a TableRef, out: &mut Vec<&'a Query>) {
    match table {
        TableRef::Named { .. } => {}
        TableRef::Subquery { query, .. } => out.push(query),
        TableRef::Join { left, right, constraint, .. } => {
            table_child_queries(left, out);
            table_child_queries(right, out);
            if let Some(crate::parser::JoinConstraint::On(expr)) = constraint {
                expr_child_queries(expr, out);
            }
        }
        TableRef::Ingredient { call, .. } => call_child_queries(call, out),
    }
}

fn call_child_queries<'a>(call: &'a IngredientCall, out: &mut Vec<&'a Query>) {
    for arg in &call.raw_args {
        if let Some(query) = arg_subquery(arg) {
            out.push(query);
        }
    }
}

fn arg_subquery(arg: &RawArg) -> Option<&Query> {
    match arg {
        RawArg::Subquery { query, .. } => Some(query),
        RawArg::Keyword { value, .. } => arg_subquery(value),
        RawArg::Str { .. } => None,
    }
}

fn expr_child_queries<'a>(expr: &'a Expr, out: &mut Vec<&'a Query>) {
    match expr {
        Expr::Literal { .. } | Expr::Column { .. } => {}
        Expr::Unary { operand, .. } | Expr::IsNull { operand, .. } => {
            expr_child_queries(operand, out)
        }
        Expr::Binary { left, right, .. } => {
            expr_child_queries(left, out);
            expr_child_queries(right, out);
        }
        Expr::InList { operand, list, .. } => {
            expr_child_queries(operand, out);
            for item in list {
                expr_child_queries(item, out);
            }
        }
        Expr::InSubquery { operand, query, .. } => {
            expr_child_queries(operand, out);
            out.push(query);
        }
        Expr::Between { operand, low, high, .. } => {
            expr_child_queries(operand, out);
            expr_child_queries(low, out);
            expr_child_queries(high, out);
        }
        Expr::Like { operand, pattern, .. } => {
            expr_child_queries(operand, out);
            expr_child_queries(pattern, out);
        }
        Expr::Function { args, .. } => {
            for arg in args {
                if let crate::parser::FunctionArg::Expr(expr) = arg {
                    expr_child_queries(expr, out);
                }
            }
        }
        Expr::Case { operand, branches, else_expr, .. } => {
            if let Some(operand) = operand {
                expr_child_queries(operand, out);
            }
            for branch in branches {
                expr_child_queries(&branch.when, out);
                expr_child_queries(&branch.then, out);
            }
            if let Some(else_expr) = else_expr {
                expr_child_queries(else_expr, out);
            }
        }
        Expr::Exists { query, .. } | Expr::Subquery { query, .. } => out.push(query),
        Expr::Cast { operand, .. } => expr_child_queries(operand, out),
        Expr::Paren { inner, .. } => expr_child_queries(inner, out),
        Expr::Ingredient { call, .. } => call_child_queries(call, out),
    }
}

/// Splits a WHERE clause into its top-level AND conjuncts.
pub fn conjuncts(expr: &Expr) -> Vec<&Expr> {
    let mut out = Vec::new();
    split_and(expr, &mut out);
    out
}

fn split_and<'a>(expr: &'a Expr, out: &mut Vec<&'a Expr>) {
    match expr {
        Expr::Binary { left, op: BinaryOp::And, right, .. } => {
            split_and(left, out);
            split_and(right, out);
        }
        Expr::Paren { inner, .. } => split_and(inner, out),
        other => out.push(other),
    }
}

/// Whether the expression tree contains any ingredient call.
pub fn has_ingredient(expr: &Expr) -> bool {
    let mut found = false;
    walk_expr(expr, &mut |e| {
        if matches!(e, Expr::Ingredient { .. }) {
            found = true;
        }
    });
    found
}

/// Whether the expression tree contains any subquery (correlation risk).
pub fn has_subquery(expr: &Expr) -> bool {
    let mut found = false;
    walk_expr(expr, &mut |e| {
        if matches!(e, Expr::InSubquery { .. } | Expr::Exists { .. } | Expr::Subquery { .. }) {
            found = true;
        }
    });
    found
}

fn walk_expr<'a>(expr: &'a Expr, visit: &mut impl FnMut(&'a Expr)) {
    visit(expr);
    match expr {
        Expr::Literal { .. } | Expr::Column { .. } => {}
        Expr::Unary { operand, .. }
        | Expr::IsNull { operand, .. }
        | Expr::Cast { operand, .. } => walk_expr(operand, visit),
        Expr::Paren { inner, .. } => walk_expr(inner, visit),
        Expr::Binary { left, right, .. } => {
            walk_expr(left, visit);
            walk_expr(right, visit);
        }
        Expr::InList { operand, list, .. } => {
            walk_expr(operand, visit);
            for item in list {
                walk_expr(item, visit);
            }
        }
        Expr::InSubquery { operand, .. } => walk_expr(operand, visit),
        Expr::Between { operand, low, high, .. } => {
            walk_expr(operand, visit);
            walk_expr(low, visit);
            walk_expr(high, visit);
        }
        Expr::Like { operand, pattern, .. } => {
            walk_expr(operand, visit);
            walk_expr(pattern, visit);
        }
        Expr::Function { args, .. } => {
            for arg in args {
                if let crate::parser::FunctionArg::Expr(expr) = arg {
                    walk_expr(expr, visit);
                }
            }
        }
        Expr::Case { operand, branches, else_expr, .. } => {
            if let Some(operand) = operand {
                walk_expr(operand, visit);
            }
            for branch in branches {
                walk_expr(&branch.when, visit);
                walk_expr(&branch.then, visit);
            }
            if let Some(else_expr) = else_expr {
                walk_expr(else_expr, visit);
            }
        }
        Expr::Exists { .. } | Expr::Subquery { .. } => {}
        Expr::Ingredient { .. } => {}
    }
}

/// Column references in the expression (table qualifier, column name).
pub fn column_refs(expr: &Expr) -> Vec<(Option<&Ident>, &Ident)> {
    let mut out = Vec::new();
    walk_expr(expr, &mut |e| {
        if let Expr::Column { table, column, .. } = e {
            out.push((table.as_ref(), column));
        }
    });
    out
}

/// True when every column reference in the conjunct resolves to `target`
/// (a visible binding) and to no other visible table. Unqualified names
/// must exist in the target's schema and be unambiguous among bindings.
pub fn references_only(
    expr: &Expr,
    target: &Binding,
    bindings: &[Binding],
    ctx: &DatabaseContext,
) -> bool {
    let columns_of = |real: &str| -> Option<&[String]> {
        ctx.tables.iter().find(|t| t.name.eq_ignore_ascii_case(real)).map(|t| t.columns.as_slice())
    };
    let Some(target_real) = target.real.as_deref() else { return false };
    let Some(target_columns) = columns_of(target_real) else { return false };

    let refs = column_refs(expr);
    if refs.is_empty() {
        // Constant conjuncts are harmless but filter nothing; keep them.
        return true;
    }
    refs.iter().all(|(qualifier, column)| match qualifier {
        Some(q) => q.value.eq_ignore_ascii_case(&target.visible),
        None => {
            let in_target =
                target_columns.iter().any(|c| c.eq_ignore_ascii_case(&column.value));
            let ambiguous = bindings.iter().any(|b| {
                !b.visible.eq_ignore_ascii_case(&target.visible)
                    && b.real
                        .as_deref()
                        .and_then(columns_of)
                        .is_some_and(|cols| {
                            cols.iter().any(|c| c.eq_ignore_ascii_case(&column.value))
                        })
            });
            in_target && !ambiguous
        }
    })
}
