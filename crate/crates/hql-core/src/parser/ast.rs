//! AST for the hybrid SQL dialect: native SQLite nodes plus ingredient
//! call nodes (`{{LLMMap(...)}}` and friends) interleaved in expression
//! and table positions.

use serde::Serialize;

/// Byte-offset range into the original query text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    /// Span for nodes built programmatically (substitutions, rewrites).
    pub fn synthetic() -> Self {
        Span { start: 0, end: 0 }
    }
}

/// Unique id of an ingredient node within one parsed query tree.
pub type NodeId = u32;

/// A parsed query plus the text it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryAst {
    pub root: Query,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub ctes: Vec<Cte>,
    pub select: Select,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<Expr>,
    pub offset: Option<Expr>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cte {
    pub name: Ident,
    pub query: Query,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub distinct: bool,
    pub items: Vec<SelectItem>,
    pub from: Vec<TableRef>,
    pub where_clause: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub having: Option<Expr>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Wildcard {
        span: Span,
    },
    TableWildcard {
        table: Ident,
        span: Span,
    },
    Expr {
        expr: Expr,
        alias: Option<Alias>,
        span: Span,
    },
}

/// An alias, remembering whether `AS` was written.
#[derive(Debug, Clone, PartialEq)]
pub struct Alias {
    pub name: Ident,
    pub explicit_as: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderItem {
    pub expr: Expr,
    pub descending: bool,
    /// Whether ASC/DESC was written out (for faithful rendering).
    pub explicit_direction: bool,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableRef {
    Named {
        name: Ident,
        alias: Option<Alias>,
        span: Span,
    },
    Subquery {
        query: Box<Query>,
        alias: Option<Alias>,
        span: Span,
    },
    Join {
        left: Box<TableRef>,
        op: JoinOp,
        right: Box<TableRef>,
        constraint: Option<JoinConstraint>,
        span: Span,
    },
    /// A table-valued ingredient, e.g. `{{LLMJoin(...)}}` in a FROM clause.
    Ingredient { call: Box<IngredientCall>, span: Span },
}

impl TableRef {
    pub fn span(&self) -> Span {
        match self {
            TableRef::Named { span, .. }
            | TableRef::Subquery { span, .. }
            | TableRef::Join { span, .. }
            | TableRef::Ingredient { span, .. } => *span,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinOp {
    /// Plain `JOIN` as written; semantically inner.
    Join,
    Inner,
    Left,
    LeftOuter,
    Cross,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JoinConstraint {
    On(Expr),
    Using(Vec<Ident>),
}

/// Identifier with its original quoting, so rendering round-trips.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ident {
    pub value: String,
    pub quote: QuoteStyle,
    pub span: Span,
}

impl Ident {
    pub fn bare(value: impl Into<String>) -> Self {
        Ident {
            value: value.into(),
            quote: QuoteStyle::None,
            span: Span::synthetic(),
        }
    }

    pub fn quoted(value: impl Into<String>) -> Self {
        Ident {
            value: value.into(),
            quote: QuoteStyle::Double,
            span: Span::synthetic(),
        }
    }

    /// Case-insensitive comparison, the SQL identifier convention.
    pub fn eq_ignore_case(&self, other: &str) -> bool {
        self.value.eq_ignore_ascii_case(other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuoteStyle {
    None,
    Double,
    Backtick,
    Bracket,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Null,
    Boolean(bool),
    /// Numeric literal kept as written to preserve formatting.
    Number(String),
    String(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
    Neg,
    Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Or,
    And,
    /// `=`
    Eq,
    /// `==`
    EqEq,
    /// `!=`
    NotEq,
    /// `<>`
    NotEqAngle,
    Lt,
    Gt,
    LtEq,
    GtEq,
    Plus,
    Minus,
    Multiply,
    Divide,
    Modulo,
    Concat,
    /// FTS5 full-text match, passed through verbatim to the engine.
    Match,
}

impl BinaryOp {
    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinaryOp::Eq
                | BinaryOp::EqEq
                | BinaryOp::NotEq
                | BinaryOp::NotEqAngle
                | BinaryOp::Lt
                | BinaryOp::Gt
                | BinaryOp::LtEq
                | BinaryOp::GtEq
        )
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(
            self,
            BinaryOp::Plus | BinaryOp::Minus | BinaryOp::Multiply | BinaryOp::Divide | BinaryOp::Modulo
        )
    }

    pub fn sql(self) -> &'static str {
        match self {
            BinaryOp::Or => "OR",
            BinaryOp::And => "AND",
            BinaryOp::Eq => "=",
            BinaryOp::EqEq => "==",
            BinaryOp::NotEq => "!=",
            BinaryOp::NotEqAngle => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::Gt => ">",
            BinaryOp::LtEq => "<=",
            BinaryOp::GtEq => ">=",
            BinaryOp::Plus => "+",
            BinaryOp::Minus => "-",
            BinaryOp::Multiply => "*",
            BinaryOp::Divide => "/",
            BinaryOp::Modulo => "%",
            BinaryOp::Concat => "||",
            BinaryOp::Match => "MATCH",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionArg {
    Star,
    Expr(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseBranch {
    pub when: Expr,
    pub then: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal {
        value: Literal,
        span: Span,
    },
    Column {
        table: Option<Ident>,
        column: Ident,
        span: Span,
    },
    Unary {
        op: UnaryOp,
        operand: Box<Expr>,
        span: Span,
    },
    Binary {
        left: Box<Expr>,
        op: BinaryOp,
        right: Box<Expr>,
        span: Span,
    },
    IsNull {
        operand: Box<Expr>,
        negated: bool,
        span: Span,
    },
    InList {
        operand: Box<Expr>,
        list: Vec<Expr>,
        negated: bool,
        span: Span,
    },
    InSubquery {
        operand: Box<Expr>,
        query: Box<Query>,
        negated: bool,
        span: Span,
    },
    Between {
        operand: Box<Expr>,
        low: Box<Expr>,
        high: Box<Expr>,
        negated: bool,
        span: Span,
    },
    Like {
        operand: Box<Expr>,
        pattern: Box<Expr>,
        negated: bool,
        span: Span,
    },
    Function {
        name: Ident,
        args: Vec<FunctionArg>,
        distinct: bool,
        span: Span,
    },
    Case {
        operand: Option<Box<Expr>>,
        branches: Vec<CaseBranch>,
        else_expr: Option<Box<Expr>>,
        span: Span,
    },
    Exists {
        query: Box<Query>,
        negated: bool,
        span: Span,
    },
    Subquery {
        query: Box<Query>,
        span: Span,
    },
    Cast {
        operand: Box<Expr>,
        type_name: Ident,
        span: Span,
    },
    /// Explicit grouping parentheses, preserved for faithful rendering.
    Paren {
        inner: Box<Expr>,
        span: Span,
    },
    Ingredient {
        call: Box<IngredientCall>,
        span: Span,
    },
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Literal { span, .. }
            | Expr::Column { span, .. }
            | Expr::Unary { span, .. }
            | Expr::Binary { span, .. }
            | Expr::IsNull { span, .. }
            | Expr::InList { span, .. }
            | Expr::InSubquery { span, .. }
            | Expr::Between { span, .. }
            | Expr::Like { span, .. }
            | Expr::Function { span, .. }
            | Expr::Case { span, .. }
            | Expr::Exists { span, .. }
            | Expr::Subquery { span, .. }
            | Expr::Cast { span, .. }
            | Expr::Paren { span, .. }
            | Expr::Ingredient { span, .. } => *span,
        }
    }

    /// Strips grouping parentheses.
    pub fn unwrap_parens(&self) -> &Expr {
        match self {
            Expr::Paren { inner, .. } => inner.unwrap_parens(),
            other => other,
        }
    }
}

/// Which built-in (or user-registered) function an ingredient call names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngredientKind {
    Map,
    Qa,
    Join,
    Validate,
    Custom(String),
}

impl IngredientKind {
    pub fn label(&self) -> &str {
        match self {
            IngredientKind::Map => "LLMMap",
            IngredientKind::Qa => "LLMQA",
            IngredientKind::Join => "LLMJoin",
            IngredientKind::Validate => "LLMValidate",
            IngredientKind::Custom(name) => name,
        }
    }
}

/// Behavioural class that decides argument shape and execution routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngredientClass {
    /// Unary per-value function over a column (LLMMap-like).
    Scalar,
    /// Table-subset to scalar aggregate (LLMQA-like).
    Aggregate,
    /// Value-set alignment (LLMJoin).
    JoinSets,
    /// Claim check over a table subset (LLMValidate).
    Validate,
}

/// A `'table::column'` reference as written in ingredient arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnPair {
    pub table: String,
    pub column: String,
}

impl ColumnPair {
    /// Splits on the first `::`. Returns None when the separator is missing
    /// or either side is empty.
    pub fn parse(raw: &str) -> Option<ColumnPair> {
        let (table, column) = raw.split_once("::")?;
        if table.is_empty() || column.is_empty() {
            return None;
        }
        Some(ColumnPair {
            table: table.to_string(),
            column: column.to_string(),
        })
    }
}

impl std::fmt::Display for ColumnPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}::{}", self.table, self.column)
    }
}

/// Ingredient argument exactly as written, in order.
#[derive(Debug, Clone, PartialEq)]
pub enum RawArg {
    Str { value: String, span: Span },
    Subquery { query: Query, span: Span },
    Keyword { name: String, value: Box<RawArg>, span: Span },
}

impl RawArg {
    pub fn span(&self) -> Span {
        match self {
            RawArg::Str { span, .. } | RawArg::Subquery { span, .. } | RawArg::Keyword { span, .. } => *span,
        }
    }

    fn unwrap_keyword(&self) -> &RawArg {
        match self {
            RawArg::Keyword { value, .. } => value,
            other => other,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self.unwrap_keyword() {
            RawArg::Str { value, .. } => Some(value),
            _ => None,
        }
    }

    pub fn as_subquery(&self) -> Option<&Query> {
        match self.unwrap_keyword() {
            RawArg::Subquery { query, .. } => Some(query),
            _ => None,
        }
    }

    pub fn as_subquery_mut(&mut self) -> Option<&mut Query> {
        match self {
            RawArg::Subquery { query, .. } => Some(query),
            RawArg::Keyword { value, .. } => value.as_subquery_mut(),
            _ => None,
        }
    }
}

/// Where in the surrounding SQL an ingredient call sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SyntacticContext {
    SelectItem,
    ComparisonOperand,
    /// From-clause table expression.
    TableExpression,
    JoinCondition,
    GroupBy,
    OrderBy,
    Other,
}

/// A literal the ingredient is directly compared against (via =, ==, !=,
/// <>, <, >, <=, >= or IN), recorded so output hints can be inferred.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSite {
    pub literal: Literal,
    /// Span of the literal operand that justified the hint.
    pub literal_span: Span,
}

/// One `{{...}}` invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct IngredientCall {
    pub id: NodeId,
    /// Function name as written (`LLMMap`, `llmqa`, `VQA`, ...).
    pub name: String,
    pub kind: IngredientKind,
    pub class: IngredientClass,
    pub raw_args: Vec<RawArg>,
    pub question_idx: Option<usize>,
    /// First value source: a `'table::column'` for Map, a subquery or
    /// column pair for Join.
    pub source_idx: Option<usize>,
    /// `options='table::column'` keyword argument.
    pub options_idx: Option<usize>,
    /// Positional subquery used as QA/Validate context.
    pub context_idx: Option<usize>,
    pub context: SyntacticContext,
    /// Filled when the call is directly compared against a literal.
    pub comparison: Option<ComparisonSite>,
    /// True when the call is an operand of an arithmetic expression.
    pub arithmetic_operand: bool,
    pub span: Span,
}

impl IngredientCall {
    pub fn question(&self) -> Option<&str> {
        self.question_idx.and_then(|i| self.raw_args[i].as_str())
    }

    pub fn target_column(&self) -> Option<ColumnPair> {
        self.source_idx
            .and_then(|i| self.raw_args[i].as_str())
            .and_then(ColumnPair::parse)
    }

    pub fn source_subquery(&self) -> Option<&Query> {
        self.source_idx.and_then(|i| self.raw_args[i].as_subquery())
    }

    pub fn options(&self) -> Option<ColumnPair> {
        self.options_idx
            .and_then(|i| self.raw_args[i].as_str())
            .and_then(ColumnPair::parse)
    }

    pub fn context_subquery(&self) -> Option<&Query> {
        self.context_idx.and_then(|i| self.raw_args[i].as_subquery())
    }
}

/// Inferred output shape for an ingredient, read off the surrounding SQL.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputHint {
    /// Compared against the keyword TRUE or FALSE.
    Boolean { source: Span },
    /// Compared against a literal; the literal is forwarded as an example.
    ExampleLiteral { example: String, source: Span },
    /// Used arithmetically, so a number is expected.
    Numeric { source: Span },
    None,
}

impl OutputHint {
    pub fn is_boolean(&self) -> bool {
        matches!(self, OutputHint::Boolean { .. })
    }
}
