//! AST-to-SQL rendering.
//!
//! `render` prints ingredient calls back in `{{...}}` form and reproduces
//! the parsed input token-for-token (whitespace normalized to single
//! spaces; `LIMIT a, b` re-renders as `LIMIT b OFFSET a`). `render_native`
//! instead splices a replacement fragment for every ingredient node,
//! yielding plain SQLite. Grouping relies on preserved `Paren` nodes, so
//! programmatically built trees must parenthesize explicitly.

use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::*;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("no substitution provided for ingredient node {id} ({name})")]
pub struct MissingSubstitution {
    pub id: NodeId,
    pub name: String,
}

/// Renders the query with ingredient calls printed as written.
pub fn render(query: &Query) -> String {
    let mut r = Renderer { out: String::new(), subs: None, missing: None };
    r.query(query);
    debug_assert!(r.missing.is_none());
    r.out
}

/// Renders plain SQLite, replacing each ingredient node with its fragment.
pub fn render_native(
    query: &Query,
    substitutions: &BTreeMap<NodeId, String>,
) -> Result<String, MissingSubstitution> {
    let mut r = Renderer { out: String::new(), subs: Some(substitutions), missing: None };
    r.query(query);
    match r.missing {
        Some(missing) => Err(missing),
        None => Ok(r.out),
    }
}

/// Renders a single expression with ingredient calls printed as written.
pub fn render_expr(expr: &Expr) -> String {
    let mut r = Renderer { out: String::new(), subs: None, missing: None };
    r.expr(expr);
    r.out
}

struct Renderer<'a> {
    out: String,
    /// None renders `{{...}}` as written; Some substitutes fragments.
    subs: Option<&'a BTreeMap<NodeId, String>>,
    missing: Option<MissingSubstitution>,
}

impl<'a> Renderer<'a> {
    fn push(&mut self, s: &str) {
        self.out.push_str(s);
    }

    fn query(&mut self, q: &Query) {
        if !q.ctes.is_empty() {
            self.push("WITH ");
            for (i, cte) in q.ctes.iter().enumerate() {
                if i > 0 {
                    self.push(", ");
                }
                self.ident(&cte.name);
                self.push(" AS (");
                self.query(&cte.query);
                self.push(")");
            }
            self.push(" ");
        }
        self.select(&q.select);
        if !q.order_by.is_empty() {
            self.push(" ORDER BY ");
            for (i, item) in q.order_by.iter().enumerate() {
                if i > 0 {
                    self.push(", ");
                }
                self.expr(&item.expr);
                if item.explicit_direction {
                    self.push(if item.descending { " DESC" } else { " ASC" });
                }
            }
        }
        if let Some(limit) = &q.limit {
            self.push(" LIMIT ");
            self.expr(limit);
        }
        if let Some(offset) = &q.offset {
            self.push(" OFFSET ");
            self.expr(offset);
        }
    }

    fn select(&mut self, s: &Select) {
        self.push("SELECT ");
        if s.distinct {
            self.push("DISTINCT ");
        }
        for (i, item) in s.items.iter().enumerate() {
            if i > 0 {
                self.push(", ");
            }
            match item {
                SelectItem::Wildcard { .. } => self.push("*"),
                SelectItem::TableWildcard { table, .. } => {
                    self.ident(table);
                    self.push(".*");
                }
                SelectItem::Expr { expr, alias, .. } => {
                    self.expr(expr);
                    self.alias(alias);
                }
            }
        }
        if !s.from.is_empty() {
            self.push(" FROM ");
            for (i, t) in s.from.iter().enumerate() {
                if i > 0 {
                    self.push(", ");
                }
                self.table_ref(t);
            }
        }
        if let Some(w) = &s.where_clause {
            self.push(" WHERE ");
            self.expr(w);
        }
        if !s.group_by.is_empty() {
            self.push(" GROUP BY ");
            for (i, e) in s.group_by.iter().enumerate() {
                if i > 0 {
                    self.push(", ");
                }
                self.expr(e);
            }
        }
        if let Some(h) = &s.having {
            self.push(" HAVING ");
            self.expr(h);
        }
    }

    fn alias(&mut self, alias: &Option<Alias>) {
        if let Some(a) = alias {
            if a.explicit_as {
                self.push(" AS ");
            } else {
                self.push(" ");
            }
            self.ident(&a.name);
        }
    }

    fn table_ref(&mut self, t: &TableRef) {
        match t {
            TableRef::Named { name, alias, .. } => {
                self.ident(name);
                self.alias(alias);
            }
            TableRef::Subquery { query, alias, .. } => {
                self.push("(");
                self.query(query);
                self.push(")");
                self.alias(alias);
            }
            TableRef::Join { left, op, right, constraint, .. } => {
                self.table_ref(left);
                let opstr = match op {
                    JoinOp::Join => " JOIN ",
                    JoinOp::Inner => " INNER JOIN ",
                    JoinOp::Left => " LEFT JOIN ",
                    JoinOp::LeftOuter => " LEFT OUTER JOIN ",
                    JoinOp::Cross => " CROSS JOIN ",
                };
                self.push(opstr);
                self.table_ref(right);
                match constraint {
                    Some(JoinConstraint::On(e)) => {
                        self.push(" ON ");
                        self.expr(e);
                    }
                    Some(JoinConstraint::Using(cols)) => {
                        self.push(" USING (");
                        for (i, c) in cols.iter().enumerate() {
                            if i > 0 {
                                self.push(", ");
                            }
                            self.ident(c);
                        }
                        self.push(")");
                    }
                    None => {}
                }
            }
            TableRef::Ingredient { call, .. } => self.ingredient(call),
        }
    }

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Literal { value, .. } => self.literal(value),
            Expr::Column { table, column, .. } => {
                if let Some(t) = table {
                    self.ident(t);
                    self.push(".");
                }
                self.ident(column);
            }
            Expr::Unary { op, operand, .. } => {
                match op {
                    UnaryOp::Not => self.push("NOT "),
                    UnaryOp::Neg => self.push("-"),
                    UnaryOp::Pos => self.push("+"),
                }
                self.expr(operand);
            }
            Expr::Binary { left, op, right, .. } => {
                self.expr(left);
                self.push(" ");
                self.push(op.sql());
                self.push(" ");
                self.expr(right);
            }
            Expr::IsNull { operand, negated, .. } => {
                self.expr(operand);
                self.push(if *negated { " IS NOT NULL" } else { " IS NULL" });
            }
            Expr::InList { operand, list, negated, .. } => {
                self.expr(operand);
                self.push(if *negated { " NOT IN (" } else { " IN (" });
                for (i, item) in list.iter().enumerate() {
                    if i > 0 {
                        self.push(", ");
                    }
                    self.expr(item);
                }
                self.push(")");
            }
            Expr::InSubquery { operand, query, negated, .. } => {
                self.expr(operand);
                self.push(if *negated { " NOT IN (" } else { " IN (" });
                self.query(query);
                self.push(")");
            }
            Expr::Between { operand, low, high, negated, .. } => {
                self.expr(operand);
                self.push(if *negated { " NOT BETWEEN " } else { " BETWEEN " });
                self.expr(low);
                self.push(" AND ");
                self.expr(high);
            }
            Expr::Like { operand, pattern, negated, .. } => {
                self.expr(operand);
                self.push(if *negated { " NOT LIKE " } else { " LIKE " });
                self.expr(pattern);
            }
            Expr::Function { name, args, distinct, .. } => {
                self.ident(name);
                self.push("(");
                if *distinct {
                    self.push("DISTINCT ");
                }
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        self.push(", ");
                    }
                    match arg {
                        FunctionArg::Star => self.push("*"),
                        FunctionArg::Expr(e) => self.expr(e),
                    }
                }
                self.push(")");
            }
            Expr::Case { operand, branches, else_expr, .. } => {
                self.push("CASE");
                if let Some(op) = operand {
                    self.push(" ");
                    self.expr(op);
                }
                for b in branches {
                    self.push(" WHEN ");
                    self.expr(&b.when);
                    self.push(" THEN ");
                    self.expr(&b.then);
                }
                if let Some(e) = else_expr {
                    self.push(" ELSE ");
                    self.expr(e);
                }
                self.push(" END");
            }
            Expr::Exists { query, negated, .. } => {
                self.push(if *negated { "NOT EXISTS (" } else { "EXISTS (" });
                self.query(query);
                self.push(")");
            }
            Expr::Subquery { query, .. } => {
                self.push("(");
                self.query(query);
                self.push(")");
            }
            Expr::Cast { operand, type_name, .. } => {
                self.push("CAST(");
                self.expr(operand);
                self.push(" AS ");
                self.ident(type_name);
                self.push(")");
            }
            Expr::Paren { inner, .. } => {
                self.push("(");
                self.expr(inner);
                self.push(")");
            }
            Expr::Ingredient { call, .. } => self.ingredient(call),
        }
    }

    fn ingredient(&mut self, call: &IngredientCall) {
        if let Some(subs) = self.subs {
            match subs.get(&call.id) {
                Some(fragment) => self.push(fragment),
                None => {
                    if self.missing.is_none() {
                        self.missing =
                            Some(MissingSubstitution { id: call.id, name: call.name.clone() });
                    }
                }
            }
            return;
        }
        self.push("{{");
        self.push(&call.name);
        self.push("(");
        for (i, arg) in call.raw_args.iter().enumerate() {
            if i > 0 {
                self.push(", ");
            }
            self.raw_arg(arg);
        }
        self.push(")}}");
    }

    fn raw_arg(&mut self, arg: &RawArg) {
        match arg {
            RawArg::Str { value, .. } => {
                self.push(&quote_string(value));
            }
            RawArg::Subquery { query, .. } => {
                self.push("(");
                self.query(query);
                self.push(")");
            }
            RawArg::Keyword { name, value, .. } => {
                self.push(name);
                self.push("=");
                self.raw_arg(value);
            }
        }
    }

    fn literal(&mut self, lit: &Literal) {
        match lit {
            Literal::Null => self.push("NULL"),
            Literal::Boolean(true) => self.push("TRUE"),
            Literal::Boolean(false) => self.push("FALSE"),
            Literal::Number(raw) => self.push(raw),
            Literal::String(s) => self.push(&quote_string(s)),
        }
    }

    fn ident(&mut self, ident: &Ident) {
        match ident.quote {
            QuoteStyle::None => self.push(&ident.value),
            QuoteStyle::Double => {
                self.push("\"");
                self.push(&ident.value.replace('"', "\"\""));
                self.push("\"");
            }
            QuoteStyle::Backtick => {
                self.push("`");
                self.push(&ident.value.replace('`', "``"));
                self.push("`");
            }
            QuoteStyle::Bracket => {
                self.push("[");
                self.push(&ident.value);
                self.push("]");
            }
        }
    }
}

/// Single-quotes a string, doubling embedded quotes.
pub fn quote_string(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}
