//! Recursive-descent parser with Pratt-style expression precedence.
//!
//! Accepts the SQLite core (SELECT/FROM/WHERE/JOIN/GROUP BY/HAVING/
//! ORDER BY/LIMIT, CTEs, aliases, subqueries, MATCH) extended with
//! `{{Function(...)}}` calls in expression and table positions.
//! Unsupported constructs fail with a targeted SyntaxError rather than
//! mis-parsing.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::IngredientNames;
use crate::error::SyntaxError;

/// Statement heads we refuse outright: the dialect is query-only.
const MUTATION_HEADS: &[&str] = &[
    "INSERT", "UPDATE", "DELETE", "CREATE", "DROP", "ALTER", "REPLACE", "PRAGMA", "ATTACH",
    "DETACH", "VACUUM", "BEGIN", "COMMIT", "ROLLBACK", "VALUES", "EXPLAIN",
];

/// Words that cannot serve as bare identifiers or implicit aliases.
const RESERVED: &[&str] = &[
    "SELECT", "FROM", "WHERE", "GROUP", "HAVING", "ORDER", "LIMIT", "OFFSET", "JOIN", "INNER",
    "LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "NATURAL", "ON", "USING", "AND", "OR", "NOT",
    "AS", "UNION", "INTERSECT", "EXCEPT", "WITH", "WHEN", "THEN", "ELSE", "END", "CASE", "CAST",
    "EXISTS", "IS", "IN", "LIKE", "BETWEEN", "MATCH", "DISTINCT", "ALL", "BY", "ASC", "DESC",
    "NULL", "TRUE", "FALSE",
];

pub struct Parser<'a> {
    source: &'a str,
    tokens: Vec<Token>,
    pos: usize,
    names: &'a dyn IngredientNames,
}

/// Where an ingredient call appears, which constrains the allowed kinds.
#[derive(Clone, Copy, PartialEq)]
enum CallPosition {
    Expression,
    Table,
}

impl<'a> Parser<'a> {
    pub fn new(source: &'a str, names: &'a dyn IngredientNames) -> Result<Self, SyntaxError> {
        let tokens = tokenize(source)?;
        Ok(Parser { source, tokens, pos: 0, names })
    }

    pub fn parse_statement(&mut self) -> Result<Query, SyntaxError> {
        if self.tokens.is_empty() {
            return Err(SyntaxError::eof("empty query", self.source));
        }
        if let Some(head) = self.peek_word_upper() {
            if MUTATION_HEADS.contains(&head.as_str()) {
                return Err(SyntaxError::at(
                    &format!("'{head}' statements are not supported: the dialect is query-only"),
                    self.source,
                    self.cur_offset(),
                ));
            }
        }
        let query = self.parse_query_node()?;
        self.eat(&Tok::Semicolon);
        if self.pos < self.tokens.len() {
            return Err(self.err("unexpected trailing input after query"));
        }
        Ok(query)
    }

    // ---- queries ----

    fn parse_query_node(&mut self) -> Result<Query, SyntaxError> {
        let start = self.cur_offset();
        let mut ctes = Vec::new();
        if self.eat_word("WITH") {
            loop {
                let cte_start = self.cur_offset();
                let name = self.parse_ident("CTE name")?;
                self.expect_word("AS")?;
                self.expect(&Tok::LParen, "'(' before CTE query")?;
                let query = self.parse_query_node()?;
                self.expect(&Tok::RParen, "')' after CTE query")?;
                ctes.push(Cte { name, query, span: Span::new(cte_start, self.prev_end()) });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }

        let select = self.parse_select()?;

        let mut order_by = Vec::new();
        if self.eat_word("ORDER") {
            self.expect_word("BY")?;
            loop {
                let item_start = self.cur_offset();
                let expr = self.parse_expr()?;
                let (descending, explicit_direction) = if self.eat_word("DESC") {
                    (true, true)
                } else if self.eat_word("ASC") {
                    (false, true)
                } else {
                    (false, false)
                };
                order_by.push(OrderItem {
                    expr,
                    descending,
                    explicit_direction,
                    span: Span::new(item_start, self.prev_end()),
                });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }

        let mut limit = None;
        let mut offset = None;
        if self.eat_word("LIMIT") {
            let first = self.parse_expr()?;
            if self.eat(&Tok::Comma) {
                // LIMIT <offset>, <count>
                offset = Some(first);
                limit = Some(self.parse_expr()?);
            } else if self.eat_word("OFFSET") {
                limit = Some(first);
                offset = Some(self.parse_expr()?);
            } else {
                limit = Some(first);
            }
        }

        if let Some(word) = self.peek_word_upper() {
            if matches!(word.as_str(), "UNION" | "INTERSECT" | "EXCEPT") {
                return Err(SyntaxError::at(
                    &format!("set operation '{word}' is not supported"),
                    self.source,
                    self.cur_offset(),
                ));
            }
        }

        Ok(Query {
            ctes,
            select,
            order_by,
            limit,
            offset,
            span: Span::new(start, self.prev_end()),
        })
    }

    fn parse_select(&mut self) -> Result<Select, SyntaxError> {
        let start = self.cur_offset();
        self.expect_word("SELECT")?;
        let distinct = if self.eat_word("DISTINCT") {
            true
        } else {
            self.eat_word("ALL");
            false
        };

        let mut items = Vec::new();
        loop {
            items.push(self.parse_select_item()?);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }

        let mut from = Vec::new();
        if self.eat_word("FROM") {
            loop {
                from.push(self.parse_table_with_joins()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }

        let where_clause = if self.eat_word("WHERE") { Some(self.parse_expr()?) } else { None };

        let mut group_by = Vec::new();
        if self.eat_word("GROUP") {
            self.expect_word("BY")?;
            loop {
                group_by.push(self.parse_expr()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }

        let having = if self.eat_word("HAVING") { Some(self.parse_expr()?) } else { None };

        Ok(Select {
            distinct,
            items,
            from,
            where_clause,
            group_by,
            having,
            span: Span::new(start, self.prev_end()),
        })
    }

    fn parse_select_item(&mut self) -> Result<SelectItem, SyntaxError> {
        let start = self.cur_offset();
        if self.eat(&Tok::Star) {
            return Ok(SelectItem::Wildcard { span: Span::new(start, self.prev_end()) });
        }
        // `table.*`
        if self.peek_is_ident()
            && self.tok_at(self.pos + 1) == Some(&Tok::Dot)
            && self.tok_at(self.pos + 2) == Some(&Tok::Star)
        {
            let table = self.parse_ident("table name")?;
            self.bump();
            self.bump();
            return Ok(SelectItem::TableWildcard { table, span: Span::new(start, self.prev_end()) });
        }
        let expr = self.parse_expr()?;
        let alias = self.parse_alias()?;
        Ok(SelectItem::Expr { expr, alias, span: Span::new(start, self.prev_end()) })
    }

    /// Optional `[AS] name` alias.
    fn parse_alias(&mut self) -> Result<Option<Alias>, SyntaxError> {
        if self.eat_word("AS") {
            let name = self.parse_ident("alias name")?;
            return Ok(Some(Alias { name, explicit_as: true }));
        }
        match self.peek_tok() {
            Some(Tok::Word(w)) if !RESERVED.contains(&w.to_ascii_uppercase().as_str()) => {
                let name = self.parse_ident("alias name")?;
                Ok(Some(Alias { name, explicit_as: false }))
            }
            Some(Tok::QuotedIdent { .. }) => {
                let name = self.parse_ident("alias name")?;
                Ok(Some(Alias { name, explicit_as: false }))
            }
            _ => Ok(None),
        }
    }

    // ---- table references ----

    fn parse_table_with_joins(&mut self) -> Result<TableRef, SyntaxError> {
        let start = self.cur_offset();
        let mut left = self.parse_table_primary()?;
        loop {
            let op = if self.eat_word("JOIN") {
                JoinOp::Join
            } else if self.at_word("INNER") {
                self.bump();
                self.expect_word("JOIN")?;
                JoinOp::Inner
            } else if self.at_word("LEFT") {
                self.bump();
                let outer = self.eat_word("OUTER");
                self.expect_word("JOIN")?;
                if outer { JoinOp::LeftOuter } else { JoinOp::Left }
            } else if self.at_word("CROSS") {
                self.bump();
                self.expect_word("JOIN")?;
                JoinOp::Cross
            } else if self.at_word("RIGHT") || self.at_word("FULL") || self.at_word("NATURAL") {
                let word = self.peek_word_upper().unwrap_or_default();
                return Err(SyntaxError::at(
                    &format!("'{word}' joins are not supported"),
                    self.source,
                    self.cur_offset(),
                ));
            } else {
                break;
            };
            let right = self.parse_table_primary()?;
            let constraint = if self.eat_word("ON") {
                Some(JoinConstraint::On(self.parse_expr()?))
            } else if self.eat_word("USING") {
                self.expect(&Tok::LParen, "'(' after USING")?;
                let mut cols = vec![self.parse_ident("column name")?];
                while self.eat(&Tok::Comma) {
                    cols.push(self.parse_ident("column name")?);
                }
                self.expect(&Tok::RParen, "')' after USING columns")?;
                Some(JoinConstraint::Using(cols))
            } else {
                None
            };
            left = TableRef::Join {
                left: Box::new(left),
                op,
                right: Box::new(right),
                constraint,
                span: Span::new(start, self.prev_end()),
            };
        }
        Ok(left)
    }

    fn parse_table_primary(&mut self) -> Result<TableRef, SyntaxError> {
        let start = self.cur_offset();
        if self.eat(&Tok::LParen) {
            if !self.at_word("SELECT") && !self.at_word("WITH") {
                return Err(self.err("expected a subquery after '(' in FROM clause"));
            }
            let query = self.parse_query_node()?;
            self.expect(&Tok::RParen, "')' after subquery")?;
            let alias = self.parse_alias()?;
            return Ok(TableRef::Subquery {
                query: Box::new(query),
                alias,
                span: Span::new(start, self.prev_end()),
            });
        }
        if self.peek_tok() == Some(&Tok::OpenIngredient) {
            let call = self.parse_ingredient(CallPosition::Table)?;
            return Ok(TableRef::Ingredient {
                call: Box::new(call),
                span: Span::new(start, self.prev_end()),
            });
        }
        let name = self.parse_ident("table name")?;
        let alias = self.parse_alias()?;
        Ok(TableRef::Named { name, alias, span: Span::new(start, self.prev_end()) })
    }

    // ---- expressions, loosest binding first ----

    pub fn parse_expr(&mut self) -> Result<Expr, SyntaxError> {
        self.parse_or()
    }

    fn parse_or(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.cur_offset();
        let mut left = self.parse_and()?;
        while self.eat_word("OR") {
            let right = self.parse_and()?;
            left = Expr::Binary {
                left: Box::new(left),
                op: BinaryOp::Or,
                right: Box::new(right),
                span: Span::new(start, self.prev_end()),
            };
        }
        Ok(left)
    }

    fn parse_and(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.cur_offset();
        let mut left = self.parse_not()?;
        while self.eat_word("AND") {
            let right = self.parse_not()?;
            left = Expr::Binary {
                left: Box::new(left),
                op: BinaryOp::And,
                right: Box::new(right),
                span: Span::new(start, self.prev_end()),
            };
        }
        Ok(left)
    }

    fn parse_not(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.cur_offset();
        if self.at_word("NOT") && !self.word_at_upper(self.pos + 1).is_some_and(|w| w == "EXISTS")
        {
            self.bump();
            let operand = self.parse_not()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Not,
                operand: Box::new(operand),
                span: Span::new(start, self.prev_end()),
            });
        }
        if self.at_word("NOT") {
            // NOT EXISTS (...)
            self.bump();
            self.bump();
            let query = self.parse_exists_body()?;
            return Ok(Expr::Exists {
                query: Box::new(query),
                negated: true,
                span: Span::new(start, self.prev_end()),
            });
        }
        self.parse_comparison()
    }

    fn parse_comparison(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.cur_offset();
        let mut left = self.parse_relational()?;
        loop {
            if self.eat_word("IS") {
                let negated = self.eat_word("NOT");
                self.expect_word("NULL")?;
                left = Expr::IsNull {
                    operand: Box::new(left),
                    negated,
                    span: Span::new(start, self.prev_end()),
                };
                continue;
            }

            let negated = if self.at_word("NOT")
                && self
                    .word_at_upper(self.pos + 1)
                    .is_some_and(|w| matches!(w.as_str(), "IN" | "LIKE" | "BETWEEN"))
            {
                self.bump();
                true
            } else {
                false
            };

            if self.eat_word("IN") {
                left = self.parse_in_rhs(left, negated, start)?;
                continue;
            }
            if self.eat_word("LIKE") {
                let pattern = self.parse_relational()?;
                left = Expr::Like {
                    operand: Box::new(left),
                    pattern: Box::new(pattern),
                    negated,
                    span: Span::new(start, self.prev_end()),
                };
                continue;
            }
            if self.eat_word("BETWEEN") {
                let low = self.parse_relational()?;
                self.expect_word("AND")?;
                let high = self.parse_relational()?;
                left = Expr::Between {
                    operand: Box::new(left),
                    low: Box::new(low),
                    high: Box::new(high),
                    negated,
                    span: Span::new(start, self.prev_end()),
                };
                continue;
            }
            if negated {
                return Err(self.err("expected IN, LIKE, or BETWEEN after NOT"));
            }
            if self.eat_word("MATCH") {
                let right = self.parse_relational()?;
                left = Expr::Binary {
                    left: Box::new(left),
                    op: BinaryOp::Match,
                    right: Box::new(right),
                    span: Span::new(start, self.prev_end()),
                };
                continue;
            }

            let op = match self.peek_tok() {
                Some(Tok::Eq) => BinaryOp::Eq,
                Some(Tok::EqEq) => BinaryOp::EqEq,
                Some(Tok::NotEq) => BinaryOp::NotEq,
                Some(Tok::NotEqAngle) => BinaryOp::NotEqAngle,
                _ => break,
            };
            self.bump();
            let right = self.parse_relational()?;
            left = Expr::Binary {
                left: Box::new(left),
                op,
                right: Box::new(right),
                span: Span::new(start, self.prev_end()),
            };
        }
        Ok(left)
    }

    fn parse_in_rhs(&mut self, operand: Expr, negated: bool, start: usize) -> Result<Expr, SyntaxError> {
        self.expect(&Tok::LParen, "'(' after IN")?;
        if self.at_word("SELECT") || self.at_word("WITH") {
            let query = self.parse_query_node()?;
            self.expect(&Tok::RParen, "')' after IN subquery")?;
            return Ok(Expr::InSubquery {
                operand: Box::new(operand),
                query: Box::new(query),
                negated,
                span: Span::new(start, self.prev_end()),
            });
        }
        let mut list = Vec::new();
        if self.peek_tok() != Some(&Tok::RParen) {
            loop {
                list.push(self.parse_expr()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen, "')' after IN list")?;
        Ok(Expr::InList {
            operand: Box::new(operand),
            list,
            negated,
            span: Span::new(start, self.prev_end()),
        })
    }

    fn parse_relational(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.cur_offset();
        let mut left = self.parse_additive()?;
        loop {
            let op = match self.peek_tok() {
                Some(Tok::Lt) => BinaryOp::Lt,
                Some(Tok::Gt) => BinaryOp::Gt,
                Some(Tok::LtEq) => BinaryOp::LtEq,
                Some(Tok::GtEq) => BinaryOp::GtEq,
                _ => break,
            };
            self.bump();
            let right = self.parse_additive()?;
            left = Expr::Binary {
                left: Box::new(left),
                op,
                right: Box::new(right),
                span: Span::new(start, self.prev_end()),
            };
        }
        Ok(left)
    }

    fn parse_additive(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.cur_offset();
        let mut left = self.parse_multiplicative()?;
        loop {
            let op = match self.peek_tok() {
                Some(Tok::Plus) => BinaryOp::Plus,
                Some(Tok::Minus) => BinaryOp::Minus,
                _ => break,
            };
            self.bump();
            let right = self.parse_multiplicative()?;
            left = Expr::Binary {
                left: Box::new(left),
                op,
                right: Box::new(right),
                span: Span::new(start, self.prev_end()),
            };
        }
        Ok(left)
    }

    fn parse_multiplicative(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.cur_offset();
        let mut left = self.parse_concat()?;
        loop {
            let op = match self.peek_tok() {
                Some(Tok::Star) => BinaryOp::Multiply,
                Some(Tok::Slash) => BinaryOp::Divide,
                Some(Tok::Percent) => BinaryOp::Modulo,
                _ => break,
            };
            self.bump();
            let right = self.parse_concat()?;
            left = Expr::Binary {
                left: Box::new(left),
                op,
                right: Box::new(right),
                span: Span::new(start, self.prev_end()),
            };
        }
        Ok(left)
    }

    fn parse_concat(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.cur_offset();
        let mut left = self.parse_unary()?;
        while self.eat(&Tok::Concat) {
            let right = self.parse_unary()?;
            left = Expr::Binary {
                left: Box::new(left),
                op: BinaryOp::Concat,
                right: Box::new(right),
                span: Span::new(start, self.prev_end()),
            };
        }
        Ok(left)
    }

    fn parse_unary(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.cur_offset();
        if self.eat(&Tok::Minus) {
            let operand = self.parse_unary()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Neg,
                operand: Box::new(operand),
                span: Span::new(start, self.prev_end()),
            });
        }
        if self.eat(&Tok::Plus) {
            let operand = self.parse_unary()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Pos,
                operand: Box::new(operand),
                span: Span::new(start, self.prev_end()),
            });
        }
        self.parse_primary()
    }

    fn parse_primary(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.cur_offset();
        let Some(token) = self.peek() else {
            return Err(SyntaxError::eof("unexpected end of query", self.source));
        };
        let token = token.clone();

        match &token.tok {
            Tok::Number(raw) => {
                let raw = raw.clone();
                self.bump();
                Ok(Expr::Literal { value: Literal::Number(raw), span: token.span })
            }
            Tok::Str(s) => {
                let s = s.clone();
                self.bump();
                Ok(Expr::Literal { value: Literal::String(s), span: token.span })
            }
            Tok::OpenIngredient => {
                let call = self.parse_ingredient(CallPosition::Expression)?;
                Ok(Expr::Ingredient {
                    call: Box::new(call),
                    span: Span::new(start, self.prev_end()),
                })
            }
            Tok::LParen => {
                self.bump();
                if self.at_word("SELECT") || self.at_word("WITH") {
                    let query = self.parse_query_node()?;
                    self.expect(&Tok::RParen, "')' after subquery")?;
                    return Ok(Expr::Subquery {
                        query: Box::new(query),
                        span: Span::new(start, self.prev_end()),
                    });
                }
                let inner = self.parse_expr()?;
                self.expect(&Tok::RParen, "')' after expression")?;
                Ok(Expr::Paren { inner: Box::new(inner), span: Span::new(start, self.prev_end()) })
            }
            Tok::Word(w) => {
                let upper = w.to_ascii_uppercase();
                match upper.as_str() {
                    "NULL" => {
                        self.bump();
                        Ok(Expr::Literal { value: Literal::Null, span: token.span })
                    }
                    "TRUE" => {
                        self.bump();
                        Ok(Expr::Literal { value: Literal::Boolean(true), span: token.span })
                    }
                    "FALSE" => {
                        self.bump();
                        Ok(Expr::Literal { value: Literal::Boolean(false), span: token.span })
                    }
                    "CASE" => self.parse_case(),
                    "CAST" => self.parse_cast(),
                    "EXISTS" => {
                        self.bump();
                        let query = self.parse_exists_body()?;
                        Ok(Expr::Exists {
                            query: Box::new(query),
                            negated: false,
                            span: Span::new(start, self.prev_end()),
                        })
                    }
                    "SELECT" | "WITH" => Err(self.err("subqueries must be parenthesized")),
                    _ if RESERVED.contains(&upper.as_str()) => {
                        Err(self.err(&format!("unexpected keyword '{w}'")))
                    }
                    _ => self.parse_identifier_expr(),
                }
            }
            Tok::QuotedIdent { .. } => self.parse_identifier_expr(),
            other => Err(self.err(&format!("unexpected {}", other.describe()))),
        }
    }

    fn parse_exists_body(&mut self) -> Result<Query, SyntaxError> {
        self.expect(&Tok::LParen, "'(' after EXISTS")?;
        let query = self.parse_query_node()?;
        self.expect(&Tok::RParen, "')' after EXISTS subquery")?;
        Ok(query)
    }

    /// Column reference, qualified column, or function call.
    fn parse_identifier_expr(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.cur_offset();
        let first = self.parse_ident("identifier")?;

        if self.eat(&Tok::Dot) {
            let column = self.parse_ident("column name")?;
            return Ok(Expr::Column {
                table: Some(first),
                column,
                span: Span::new(start, self.prev_end()),
            });
        }

        if self.eat(&Tok::LParen) {
            let mut args = Vec::new();
            let mut distinct = false;
            if self.peek_tok() != Some(&Tok::RParen) {
                distinct = self.eat_word("DISTINCT");
                loop {
                    if self.eat(&Tok::Star) {
                        args.push(FunctionArg::Star);
                    } else {
                        args.push(FunctionArg::Expr(self.parse_expr()?));
                    }
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
            }
            self.expect(&Tok::RParen, "')' after function arguments")?;
            return Ok(Expr::Function {
                name: first,
                args,
                distinct,
                span: Span::new(start, self.prev_end()),
            });
        }

        Ok(Expr::Column { table: None, column: first, span: Span::new(start, self.prev_end()) })
    }

    fn parse_case(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.cur_offset();
        self.bump();
        let operand = if self.at_word("WHEN") { None } else { Some(Box::new(self.parse_expr()?)) };
        let mut branches = Vec::new();
        while self.eat_word("WHEN") {
            let when = self.parse_expr()?;
            self.expect_word("THEN")?;
            let then = self.parse_expr()?;
            branches.push(CaseBranch { when, then });
        }
        if branches.is_empty() {
            return Err(self.err("CASE requires at least one WHEN branch"));
        }
        let else_expr =
            if self.eat_word("ELSE") { Some(Box::new(self.parse_expr()?)) } else { None };
        self.expect_word("END")?;
        Ok(Expr::Case { operand, branches, else_expr, span: Span::new(start, self.prev_end()) })
    }

    fn parse_cast(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.cur_offset();
        self.bump();
        self.expect(&Tok::LParen, "'(' after CAST")?;
        let operand = self.parse_expr()?;
        self.expect_word("AS")?;
        let type_name = self.parse_ident("type name")?;
        self.expect(&Tok::RParen, "')' after CAST")?;
        Ok(Expr::Cast {
            operand: Box::new(operand),
            type_name,
            span: Span::new(start, self.prev_end()),
        })
    }

    // ---- ingredient calls ----

    fn parse_ingredient(&mut self, position: CallPosition) -> Result<IngredientCall, SyntaxError> {
        let start = self.cur_offset();
        self.expect(&Tok::OpenIngredient, "'{{'")?;
        let name_span_start = self.cur_offset();
        let name = match self.peek_tok() {
            Some(Tok::Word(w)) => {
                let w = w.clone();
                self.bump();
                w
            }
            _ => return Err(self.err("expected ingredient name after '{{'")),
        };
        let Some((kind, class)) = self.names.resolve(&name) else {
            return Err(SyntaxError::at(
                &format!(
                    "unknown ingredient '{name}': built-ins are LLMMap, LLMQA, LLMJoin, \
                     LLMValidate; custom ingredients must be registered first"
                ),
                self.source,
                name_span_start,
            ));
        };

        self.expect(&Tok::LParen, "'(' after ingredient name")?;
        let mut raw_args = Vec::new();
        if self.peek_tok() != Some(&Tok::RParen) {
            loop {
                raw_args.push(self.parse_ingredient_arg()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        // `}}` unambiguously ends the call, so tolerate an omitted final `)`.
        if self.peek_tok() != Some(&Tok::CloseIngredient) {
            self.expect(&Tok::RParen, "')' after ingredient arguments")?;
        }
        self.expect(&Tok::CloseIngredient, "'}}' closing the ingredient call")?;
        let span = Span::new(start, self.prev_end());

        self.assemble_call(name, kind, class, raw_args, span, position)
    }

    fn parse_ingredient_arg(&mut self) -> Result<RawArg, SyntaxError> {
        let start = self.cur_offset();
        match self.peek_tok() {
            Some(Tok::Str(s)) => {
                let value = s.clone();
                self.bump();
                Ok(RawArg::Str { value, span: Span::new(start, self.prev_end()) })
            }
            Some(Tok::LParen) => {
                self.bump();
                if !self.at_word("SELECT") && !self.at_word("WITH") {
                    return Err(self.err("expected a subquery inside '(...)' ingredient argument"));
                }
                let query = self.parse_query_node()?;
                self.expect(&Tok::RParen, "')' after ingredient subquery")?;
                Ok(RawArg::Subquery { query, span: Span::new(start, self.prev_end()) })
            }
            Some(Tok::Word(w)) if self.tok_at(self.pos + 1) == Some(&Tok::Eq) => {
                let keyword = w.clone();
                self.bump();
                self.bump();
                if !keyword.eq_ignore_ascii_case("options") {
                    return Err(SyntaxError::at(
                        &format!("unknown keyword argument '{keyword}' (supported: options)"),
                        self.source,
                        start,
                    ));
                }
                let value = self.parse_ingredient_arg()?;
                if matches!(value, RawArg::Keyword { .. }) {
                    return Err(self.err("keyword arguments cannot nest"));
                }
                Ok(RawArg::Keyword {
                    name: keyword.to_ascii_lowercase(),
                    value: Box::new(value),
                    span: Span::new(start, self.prev_end()),
                })
            }
            _ => Err(self.err(
                "expected a quoted string, a parenthesized subquery, or options=... \
                 as ingredient argument",
            )),
        }
    }

    /// Validates argument shape for the resolved ingredient class and
    /// records the semantic argument indices.
    fn assemble_call(
        &self,
        name: String,
        kind: IngredientKind,
        class: IngredientClass,
        raw_args: Vec<RawArg>,
        span: Span,
        position: CallPosition,
    ) -> Result<IngredientCall, SyntaxError> {
        let fail = |msg: &str, at: usize| -> SyntaxError { SyntaxError::at(msg, self.source, at) };
        let label = kind.label().to_string();

        if class == IngredientClass::JoinSets && position != CallPosition::Table {
            return Err(fail(
                &format!("{label} is a table function: it may only appear in a FROM or JOIN clause"),
                span.start,
            ));
        }
        if class != IngredientClass::JoinSets && position == CallPosition::Table {
            return Err(fail(
                &format!("{label} is not a table function and cannot appear in a FROM clause"),
                span.start,
            ));
        }

        let mut options_idx = None;
        let mut positional = Vec::new();
        for (i, arg) in raw_args.iter().enumerate() {
            match arg {
                RawArg::Keyword { name, .. } if name == "options" => {
                    if options_idx.is_some() {
                        return Err(fail("duplicate options argument", arg.span().start));
                    }
                    if arg.as_str().and_then(ColumnPair::parse).is_none() {
                        return Err(fail(
                            "options expects a 'table::column' string",
                            arg.span().start,
                        ));
                    }
                    options_idx = Some(i);
                }
                RawArg::Keyword { .. } => unreachable!("unknown keywords rejected at parse"),
                _ => positional.push(i),
            }
        }

        let mut question_idx = None;
        let mut source_idx = None;
        let mut context_idx = None;

        match class {
            IngredientClass::Scalar => {
                if positional.len() != 2 {
                    return Err(fail(
                        &format!("{label} takes (question, 'table::column') plus optional options="),
                        span.start,
                    ));
                }
                let q = positional[0];
                let src = positional[1];
                if raw_args[q].as_str().is_none() {
                    return Err(fail(
                        &format!("{label} question must be a quoted string"),
                        raw_args[q].span().start,
                    ));
                }
                let src_ok = raw_args[src].as_str().and_then(ColumnPair::parse).is_some();
                if !src_ok {
                    return Err(fail(
                        &format!("{label} source must be a 'table::column' string"),
                        raw_args[src].span().start,
                    ));
                }
                question_idx = Some(q);
                source_idx = Some(src);
            }
            IngredientClass::Aggregate | IngredientClass::Validate => {
                if positional.is_empty() || positional.len() > 2 {
                    return Err(fail(
                        &format!("{label} takes (question[, (subquery)]) plus optional options="),
                        span.start,
                    ));
                }
                let q = positional[0];
                if raw_args[q].as_str().is_none() {
                    return Err(fail(
                        &format!("{label} question must be a quoted string"),
                        raw_args[q].span().start,
                    ));
                }
                question_idx = Some(q);
                if let Some(&ctx) = positional.get(1) {
                    if raw_args[ctx].as_subquery().is_none() {
                        return Err(fail(
                            &format!("{label} context must be a parenthesized subquery"),
                            raw_args[ctx].span().start,
                        ));
                    }
                    context_idx = Some(ctx);
                }
                if class == IngredientClass::Validate && options_idx.is_some() {
                    return Err(fail(
                        &format!("{label} takes no options: its output is already boolean"),
                        span.start,
                    ));
                }
            }
            IngredientClass::JoinSets => {
                // Optional leading instruction string, then one value-set
                // source (subquery or 'table::column'), plus options=.
                let mut rest = positional.as_slice();
                if let Some(&first) = rest.first() {
                    let first_is_pair =
                        raw_args[first].as_str().and_then(ColumnPair::parse).is_some();
                    let first_is_subquery = raw_args[first].as_subquery().is_some();
                    if !first_is_pair && !first_is_subquery {
                        if raw_args[first].as_str().is_some() && rest.len() >= 2 {
                            question_idx = Some(first);
                            rest = &rest[1..];
                        } else {
                            return Err(fail(
                                &format!(
                                    "{label} source must be a subquery or 'table::column' string"
                                ),
                                raw_args[first].span().start,
                            ));
                        }
                    }
                }
                match rest {
                    [src] => {
                        let ok = raw_args[*src].as_subquery().is_some()
                            || raw_args[*src].as_str().and_then(ColumnPair::parse).is_some();
                        if !ok {
                            return Err(fail(
                                &format!(
                                    "{label} source must be a subquery or 'table::column' string"
                                ),
                                raw_args[*src].span().start,
                            ));
                        }
                        source_idx = Some(*src);
                    }
                    [] => {
                        return Err(fail(
                            &format!("{label} requires a value-set source argument"),
                            span.start,
                        ));
                    }
                    _ => {
                        return Err(fail(
                            &format!("{label} takes at most (instruction, source, options=...)"),
                            span.start,
                        ));
                    }
                }
                if options_idx.is_none() {
                    return Err(fail(
                        &format!("{label} requires options='table::column' naming the join target"),
                        span.start,
                    ));
                }
            }
        }

        Ok(IngredientCall {
            id: 0,
            name,
            kind,
            class,
            raw_args,
            question_idx,
            source_idx,
            options_idx,
            context_idx,
            context: SyntacticContext::Other,
            comparison: None,
            arithmetic_operand: false,
            span,
        })
    }

    // ---- token plumbing ----

    fn parse_ident(&mut self, what: &str) -> Result<Ident, SyntaxError> {
        match self.peek_tok().cloned() {
            Some(Tok::Word(w)) => {
                if RESERVED.contains(&w.to_ascii_uppercase().as_str()) {
                    return Err(self.err(&format!("expected {what}, found keyword '{w}'")));
                }
                let span = self.peek().map(|t| t.span).unwrap_or_default();
                self.bump();
                Ok(Ident { value: w, quote: QuoteStyle::None, span })
            }
            Some(Tok::QuotedIdent { value, quote }) => {
                let span = self.peek().map(|t| t.span).unwrap_or_default();
                self.bump();
                let style = match quote {
                    '"' => QuoteStyle::Double,
                    '`' => QuoteStyle::Backtick,
                    _ => QuoteStyle::Bracket,
                };
                Ok(Ident { value, quote: style, span })
            }
            Some(other) => Err(self.err(&format!("expected {what}, found {}", other.describe()))),
            None => Err(SyntaxError::eof(&format!("expected {what}"), self.source)),
        }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_tok(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn tok_at(&self, idx: usize) -> Option<&Tok> {
        self.tokens.get(idx).map(|t| &t.tok)
    }

    fn peek_is_ident(&self) -> bool {
        matches!(
            self.peek_tok(),
            Some(Tok::QuotedIdent { .. })
                | Some(Tok::Word(_))
        )
    }

    fn peek_word_upper(&self) -> Option<String> {
        self.word_at_upper(self.pos)
    }

    fn word_at_upper(&self, idx: usize) -> Option<String> {
        match self.tok_at(idx) {
            Some(Tok::Word(w)) => Some(w.to_ascii_uppercase()),
            _ => None,
        }
    }

    fn at_word(&self, kw: &str) -> bool {
        self.peek_word_upper().is_some_and(|w| w == kw)
    }

    fn eat_word(&mut self, kw: &str) -> bool {
        if self.at_word(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, kw: &str) -> Result<(), SyntaxError> {
        if self.eat_word(kw) {
            Ok(())
        } else {
            Err(self.err(&format!("expected '{kw}'")))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek_tok() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<(), SyntaxError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.err(&format!("expected {what}")))
        }
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn cur_offset(&self) -> usize {
        self.peek().map_or(self.source.len(), |t| t.span.start)
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.tokens[self.pos - 1].span.end
        }
    }

    fn err(&self, msg: &str) -> SyntaxError {
        match self.peek() {
            Some(t) => SyntaxError::at(
                &format!("{msg}, found {}", t.tok.describe()),
                self.source,
                t.span.start,
            ),
            None => SyntaxError::eof(msg, self.source),
        }
    }
}
