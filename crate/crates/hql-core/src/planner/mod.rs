//! Planning and execution. A query's ingredient calls run innermost-first;
//! each call's input is narrowed by pushing eligible native predicates into
//! the subquery that feeds it, and each artifact is substituted back so the
//! final query is plain SQL.

mod scope;
mod smoothie;

pub use smoothie::{Outcome, ResultRows, Smoothie, StepKind, Totals, TraceStep, PREVIEW_CAP};

use std::collections::BTreeMap;
use std::time::Instant;

use crate::blender::Blender;
use crate::error::{ExecError, PlanError};
use crate::ingredients::{
    exec_join, exec_map, exec_qa, exec_validate, prompts, CustomIngredient, IngredientError,
    JoinTask, MapTask, QaTask, Registry, RunStats, ValidateTask, MAP_BATCH,
};
use crate::parser::{
    extract_from_query, extract_ingredients, infer_output_hint, render, render_expr,
    render_native, BinaryOp, ColumnPair, Expr, FunctionArg, Ident, IngredientCall,
    IngredientClass, JoinConstraint, JoinOp, NodeId, Query, QueryAst, RawArg, Select, SelectItem,
    Span, TableRef,
};
use crate::storage::{quote_ident, DatabaseContext, DatabaseHandle, ResultTable};
use crate::value::Value;
use scope::Binding;

/// Execution knobs; the defaults are what production uses.
#[derive(Debug, Clone)]
pub struct PlannerConfig {
    /// Push eligible native predicates into ingredient input subqueries.
    pub pushdown: bool,
    /// Abort on a failed Map batch instead of filling NULLs.
    pub strict_map: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig { pushdown: true, strict_map: false }
    }
}

/// One step of a descriptive plan, in execution order.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanStep {
    /// Native SQL that produces an ingredient's input subset.
    NativeSubquery { call_id: NodeId, sql: String },
    /// The model-backed call itself.
    Ingredient { call_id: NodeId, label: String },
    /// Splicing the call's artifact back into the query.
    Substitute { call_id: NodeId },
    /// The final, fully native query.
    FinalQuery { sql: String },
}

/// What one ingredient call needs at execution time.
#[derive(Debug, Clone)]
struct CallPlan {
    class: IngredientClass,
    label: String,
    /// Narrowed input SQL for column-sourced calls (Map, join pair source).
    input_sql: Option<String>,
    /// Visible table name the correlated substitution qualifies with.
    qualifier: Option<String>,
    /// Source column for the correlated substitution.
    column: Option<String>,
    /// SQL reading the options column, in table order.
    options_sql: Option<String>,
    /// Option column name, used when the options double as QA context.
    options_column: Option<String>,
    /// Join anchor for the source side: (visible table, column).
    left_anchor: Option<(String, String)>,
    /// Join anchor for the options side: (visible table, column).
    right_anchor: Option<(String, String)>,
}

/// Ordered steps plus per-call execution details.
#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub steps: Vec<PlanStep>,
    calls: BTreeMap<NodeId, CallPlan>,
}

impl ExecutionPlan {
    /// The planned input subquery for one call, when it has one.
    pub fn input_sql(&self, call_id: NodeId) -> Option<&str> {
        self.calls.get(&call_id).and_then(|c| c.input_sql.as_deref())
    }
}

/// What an executed ingredient leaves behind.
#[derive(Debug, Clone)]
pub enum IngredientArtifact {
    /// Session table of (value, output) rows, correlated with a source column.
    Mapped { table: String, qualifier: String, column: String },
    /// One scalar answer.
    Scalar(Value),
    /// Boolean verdict.
    Verdict(bool),
    /// Session table of (lhs, rhs) alignment pairs; spliced as a join.
    Pairs { table: String },
}

impl IngredientArtifact {
    fn kind_name(&self) -> &'static str {
        match self {
            IngredientArtifact::Mapped { .. } => "mapped column",
            IngredientArtifact::Scalar(_) => "scalar",
            IngredientArtifact::Verdict(_) => "verdict",
            IngredientArtifact::Pairs { .. } => "alignment pairs",
        }
    }
}

/// The SQL fragment that replaces an ingredient call of `class`.
pub fn substitution_fragment(
    class: IngredientClass,
    artifact: &IngredientArtifact,
) -> Result<String, PlanError> {
    match (class, artifact) {
        (IngredientClass::Scalar, IngredientArtifact::Mapped { table, qualifier, column }) => {
            let t = quote_ident(table);
            Ok(format!(
                "(SELECT {t}.\"output\" FROM {t} WHERE {t}.\"value\" = {}.{})",
                quote_ident(qualifier),
                quote_ident(column),
            ))
        }
        (IngredientClass::Aggregate, IngredientArtifact::Scalar(value)) => Ok(value.sql_literal()),
        (IngredientClass::Validate, IngredientArtifact::Verdict(v)) => {
            Ok(if *v { "TRUE" } else { "FALSE" }.to_string())
        }
        (IngredientClass::JoinSets, IngredientArtifact::Pairs { .. }) => Err(PlanError(
            "alignment pairs splice into the FROM clause, not an expression".to_string(),
        )),
        (class, artifact) => Err(PlanError(format!(
            "a {} artifact does not fit a {class:?} ingredient",
            artifact.kind_name()
        ))),
    }
}

/// Drops every session table when execution ends, on success and error alike.
struct SessionGuard<'a> {
    db: &'a DatabaseHandle,
}

impl Drop for SessionGuard<'_> {
    fn drop(&mut self) {
        let _ = self.db.drop_all_session_tables();
    }
}

/// Plans and executes parsed queries against one database.
pub struct Planner<'a> {
    db: &'a DatabaseHandle,
    registry: &'a Registry,
    config: PlannerConfig,
}

impl<'a> Planner<'a> {
    pub fn new(db: &'a DatabaseHandle, registry: &'a Registry) -> Self {
        Planner { db, registry, config: PlannerConfig::default() }
    }

    pub fn with_config(db: &'a DatabaseHandle, registry: &'a Registry, config: PlannerConfig) -> Self {
        Planner { db, registry, config }
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    /// Builds the descriptive plan without running anything.
    pub fn plan(&self, ast: &QueryAst) -> Result<ExecutionPlan, PlanError> {
        let ctx = self
            .db
            .context()
            .map_err(|e| PlanError(format!("schema unavailable: {e}")))?;
        self.plan_with(ast, &ctx)
    }

    /// The narrowed input subquery planned for one call.
    pub fn pushdown_predicates(
        &self,
        ast: &QueryAst,
        call_id: NodeId,
    ) -> Result<String, PlanError> {
        let plan = self.plan(ast)?;
        plan.calls
            .get(&call_id)
            .and_then(|c| c.input_sql.clone())
            .ok_or_else(|| PlanError("call has no column-sourced input subquery".to_string()))
    }

    /// Runs the query end to end, returning the result with trace and totals.
    pub fn execute(&self, ast: &QueryAst, blender: &dyn Blender) -> Result<Smoothie, ExecError> {
        let _guard = SessionGuard { db: self.db };
        let ctx = self.db.context().map_err(ExecError::Storage)?;
        let plan = self.plan_with(ast, &ctx)?;
        let mut exec = Execution {
            planner: self,
            ast,
            plan: &plan,
            working: ast.root.clone(),
            subs: BTreeMap::new(),
            steps: Vec::new(),
            totals: Totals::default(),
            map_cache: BTreeMap::new(),
            scalar_memo: BTreeMap::new(),
            verdict_memo: BTreeMap::new(),
            join_memo: BTreeMap::new(),
        };
        exec.run(blender)
    }

    fn plan_with(
        &self,
        ast: &QueryAst,
        ctx: &DatabaseContext,
    ) -> Result<ExecutionPlan, PlanError> {
        let mut steps = Vec::new();
        let mut calls = BTreeMap::new();
        for call in extract_ingredients(ast) {
            let cp = match call.class {
                IngredientClass::Scalar => self.plan_scalar(ast, &call, ctx, &mut steps)?,
                IngredientClass::Aggregate => self.plan_aggregate(&call, ctx, &mut steps)?,
                IngredientClass::Validate => plan_validate(&call, &mut steps),
                IngredientClass::JoinSets => self.plan_join(ast, &call, ctx, &mut steps)?,
            };
            calls.insert(call.id, cp);
        }
        steps.push(PlanStep::FinalQuery { sql: render(&ast.root) });
        Ok(ExecutionPlan { steps, calls })
    }

    fn plan_scalar(
        &self,
        ast: &QueryAst,
        call: &IngredientCall,
        ctx: &DatabaseContext,
        steps: &mut Vec<PlanStep>,
    ) -> Result<CallPlan, PlanError> {
        let pair = call.target_column().ok_or_else(|| {
            PlanError(format!("{} expects a 'table::column' source", call.name))
        })?;
        let select = enclosing_select_of(ast, call)?;
        let bindings = bindings_of(select);
        let binding = bindings
            .iter()
            .find(|b| b.visible.eq_ignore_ascii_case(&pair.table))
            .ok_or_else(|| {
                PlanError(format!(
                    "table '{}' used by {} is not in the enclosing FROM clause",
                    pair.table, call.name
                ))
            })?;
        let real = binding.real.as_deref().ok_or_else(|| {
            PlanError(format!(
                "'{}' names a subquery; {} needs a base table column",
                pair.table, call.name
            ))
        })?;
        check_column(ctx, real, &pair.column)?;
        let conjuncts = self.pushable_conjuncts(select, binding, &bindings, ctx);
        let input_sql = build_input_sql(real, &binding.visible, &pair.column, &conjuncts);
        steps.push(PlanStep::NativeSubquery { call_id: call.id, sql: input_sql.clone() });
        steps.push(PlanStep::Ingredient { call_id: call.id, label: call.name.clone() });
        steps.push(PlanStep::Substitute { call_id: call.id });
        Ok(CallPlan {
            class: IngredientClass::Scalar,
            label: call.name.clone(),
            input_sql: Some(input_sql),
            qualifier: Some(binding.visible.clone()),
            column: Some(pair.column.clone()),
            options_sql: None,
            options_column: None,
            left_anchor: None,
            right_anchor: None,
        })
    }

    fn plan_aggregate(
        &self,
        call: &IngredientCall,
        ctx: &DatabaseContext,
        steps: &mut Vec<PlanStep>,
    ) -> Result<CallPlan, PlanError> {
        let mut options_sql = None;
        let mut options_column = None;
        if let Some(pair) = call.options() {
            if self.registry.custom(&call.name).is_some() {
                return Err(PlanError(format!(
                    "custom ingredient {} does not accept options",
                    call.name
                )));
            }
            let table = ctx
                .tables
                .iter()
                .find(|t| t.name.eq_ignore_ascii_case(&pair.table))
                .ok_or_else(|| {
                    PlanError(format!("unknown table '{}' in options", pair.table))
                })?;
            check_column(ctx, &table.name, &pair.column)?;
            options_sql = Some(format!(
                "SELECT {} FROM {}",
                quote_ident(&pair.column),
                quote_ident(&table.name)
            ));
            options_column = Some(pair.column.clone());
        }
        if let Some(context) = call.context_subquery() {
            steps.push(PlanStep::NativeSubquery { call_id: call.id, sql: render(context) });
        } else if let Some(sql) = &options_sql {
            steps.push(PlanStep::NativeSubquery { call_id: call.id, sql: sql.clone() });
        }
        steps.push(PlanStep::Ingredient { call_id: call.id, label: call.name.clone() });
        steps.push(PlanStep::Substitute { call_id: call.id });
        Ok(CallPlan {
            class: IngredientClass::Aggregate,
            label: call.name.clone(),
            input_sql: None,
            qualifier: None,
            column: None,
            options_sql,
            options_column,
            left_anchor: None,
            right_anchor: None,
        })
    }

    fn plan_join(
        &self,
        ast: &QueryAst,
        call: &IngredientCall,
        ctx: &DatabaseContext,
        steps: &mut Vec<PlanStep>,
    ) -> Result<CallPlan, PlanError> {
        let options = call.options().ok_or_else(|| {
            PlanError(format!("{} requires options='table::column'", call.name))
        })?;
        let select = enclosing_select_of(ast, call)?;
        let bindings = bindings_of(select);
        let (opt_real, opt_visible) = resolve_pair_table(&options, &bindings, ctx, &call.name)?;
        check_column(ctx, &opt_real, &options.column)?;
        let options_sql = format!(
            "SELECT {} FROM {}",
            quote_ident(&options.column),
            quote_ident(&opt_real)
        );

        let (input_sql, left_anchor) = if let Some(pair) = call.target_column() {
            let (src_real, src_visible) = resolve_pair_table(&pair, &bindings, ctx, &call.name)?;
            check_column(ctx, &src_real, &pair.column)?;
            let conjuncts = match &src_visible {
                Some(visible) => {
                    let binding = bindings
                        .iter()
                        .find(|b| b.visible.eq_ignore_ascii_case(visible))
                        .expect("visible binding resolved above");
                    self.pushable_conjuncts(select, binding, &bindings, ctx)
                }
                None => Vec::new(),
            };
            let shown = src_visible.as_deref().unwrap_or(&src_real);
            let sql = build_input_sql(&src_real, shown, &pair.column, &conjuncts);
            let anchor = src_visible.map(|v| (v, pair.column.clone()));
            (Some(sql), anchor)
        } else if call.source_subquery().is_some() {
            (None, None)
        } else {
            return Err(PlanError(format!(
                "{} needs a value source: a subquery or 'table::column'",
                call.name
            )));
        };
        let right_anchor = opt_visible.map(|v| (v, options.column.clone()));
        if left_anchor.is_none() && right_anchor.is_none() {
            return Err(PlanError(format!(
                "{} cannot be anchored: neither side's table is in the enclosing FROM clause",
                call.name
            )));
        }
        if using_join_on_call(&ast.root, call.id) {
            return Err(PlanError(
                "join ingredients take their condition from the alignment; USING is not supported"
                    .to_string(),
            ));
        }
        let source_sql = input_sql
            .clone()
            .unwrap_or_else(|| render(call.source_subquery().expect("source checked above")));
        steps.push(PlanStep::NativeSubquery { call_id: call.id, sql: source_sql });
        steps.push(PlanStep::Ingredient { call_id: call.id, label: call.name.clone() });
        steps.push(PlanStep::Substitute { call_id: call.id });
        Ok(CallPlan {
            class: IngredientClass::JoinSets,
            label: call.name.clone(),
            input_sql,
            qualifier: None,
            column: None,
            options_sql: Some(options_sql),
            options_column: Some(options.column.clone()),
            left_anchor,
            right_anchor,
        })
    }

    /// WHERE conjuncts safe to evaluate inside the call's input subquery:
    /// ingredient-free, subquery-free, and touching only the target table.
    fn pushable_conjuncts(
        &self,
        select: &Select,
        target: &Binding,
        bindings: &[Binding],
        ctx: &DatabaseContext,
    ) -> Vec<String> {
        if !self.config.pushdown {
            return Vec::new();
        }
        let Some(where_clause) = &select.where_clause else {
            return Vec::new();
        };
        scope::conjuncts(where_clause)
            .into_iter()
            .filter(|c| {
                !scope::has_ingredient(c)
                    && !scope::has_subquery(c)
                    && scope::references_only(c, target, bindings, ctx)
            })
            .map(render_expr)
            .collect()
    }
}

fn enclosing_select_of<'q>(
    ast: &'q QueryAst,
    call: &IngredientCall,
) -> Result<&'q Select, PlanError> {
    scope::enclosing_select(&ast.root, call.id)
        .ok_or_else(|| PlanError(format!("cannot locate the select enclosing {}", call.name)))
}

fn bindings_of(select: &Select) -> Vec<Binding> {
    let mut bindings = Vec::new();
    scope::from_bindings(&select.from, &mut bindings);
    bindings
}

/// Resolves a pair's table through the visible bindings first, then the
/// schema. Returns (real table, visible name when bound in the FROM clause).
fn resolve_pair_table(
    pair: &ColumnPair,
    bindings: &[Binding],
    ctx: &DatabaseContext,
    caller: &str,
) -> Result<(String, Option<String>), PlanError> {
    if let Some(binding) = bindings.iter().find(|b| b.visible.eq_ignore_ascii_case(&pair.table)) {
        let real = binding.real.clone().ok_or_else(|| {
            PlanError(format!(
                "'{}' names a subquery; {caller} needs base table columns",
                pair.table
            ))
        })?;
        return Ok((real, Some(binding.visible.clone())));
    }
    ctx.tables
        .iter()
        .find(|t| t.name.eq_ignore_ascii_case(&pair.table))
        .map(|t| (t.name.clone(), None))
        .ok_or_else(|| PlanError(format!("unknown table '{}'", pair.table)))
}

fn check_column(ctx: &DatabaseContext, table: &str, column: &str) -> Result<(), PlanError> {
    let schema = ctx
        .tables
        .iter()
        .find(|t| t.name.eq_ignore_ascii_case(table))
        .ok_or_else(|| PlanError(format!("unknown table '{table}'")))?;
    if schema.columns.iter().any(|c| c.eq_ignore_ascii_case(column)) {
        Ok(())
    } else {
        Err(PlanError(format!("table '{table}' has no column '{column}'")))
    }
}

fn build_input_sql(real: &str, visible: &str, column: &str, conjuncts: &[String]) -> String {
    let mut sql = format!("SELECT DISTINCT {} FROM {}", quote_ident(column), quote_ident(real));
    if !visible.eq_ignore_ascii_case(real) {
        sql.push_str(" AS ");
        sql.push_str(&quote_ident(visible));
    }
    if !conjuncts.is_empty() {
        sql.push_str(" WHERE ");
        sql.push_str(&conjuncts.join(" AND "));
    }
    sql
}

fn plan_validate(call: &IngredientCall, steps: &mut Vec<PlanStep>) -> CallPlan {
    if let Some(context) = call.context_subquery() {
        steps.push(PlanStep::NativeSubquery { call_id: call.id, sql: render(context) });
    }
    steps.push(PlanStep::Ingredient { call_id: call.id, label: call.name.clone() });
    steps.push(PlanStep::Substitute { call_id: call.id });
    CallPlan {
        class: IngredientClass::Validate,
        label: call.name.clone(),
        input_sql: None,
        qualifier: None,
        column: None,
        options_sql: None,
        options_column: None,
        left_anchor: None,
        right_anchor: None,
    }
}

/// True when the call sits on a side of a JOIN constrained with USING.
fn using_join_on_call(query: &Query, id: NodeId) -> bool {
    fn table_hit(table: &TableRef, id: NodeId) -> bool {
        if let TableRef::Join { left, right, constraint, .. } = table {
            let on_side = matches!(left.as_ref(), TableRef::Ingredient { call, .. } if call.id == id)
                || matches!(right.as_ref(), TableRef::Ingredient { call, .. } if call.id == id);
            if on_side && matches!(constraint, Some(JoinConstraint::Using(_))) {
                return true;
            }
            return table_hit(left, id) || table_hit(right, id);
        }
        false
    }
    if query.select.from.iter().any(|t| table_hit(t, id)) {
        return true;
    }
    scope::child_queries(query).into_iter().any(|q| using_join_on_call(q, id))
}

/// How one call's execution directs the overall run.
enum Flow {
    Continue,
    /// Stop early: an ingredient had nothing to read.
    NoResult(String),
}

/// Mutable state threaded through one execution.
struct Execution<'e, 'a> {
    planner: &'e Planner<'a>,
    ast: &'e QueryAst,
    plan: &'e ExecutionPlan,
    /// The query tree being rewritten as joins resolve.
    working: Query,
    /// Expression substitutions keyed by call id.
    subs: BTreeMap<NodeId, String>,
    steps: Vec<TraceStep>,
    totals: Totals,
    /// Per-value Map outputs: (label, question, value literal) -> output.
    map_cache: BTreeMap<String, Value>,
    /// Whole-call QA/aggregate memo: prompt identity -> answer.
    scalar_memo: BTreeMap<String, Value>,
    /// Whole-call Validate memo.
    verdict_memo: BTreeMap<String, bool>,
    /// Whole-call Join memo.
    join_memo: BTreeMap<String, Vec<(String, String)>>,
}

impl Execution<'_, '_> {
    fn run(&mut self, blender: &dyn Blender) -> Result<Smoothie, ExecError> {
        for original in extract_ingredients(self.ast) {
            let id = original.id;
            let cp = self
                .plan
                .calls
                .get(&id)
                .ok_or_else(|| ExecError::Other("call missing from plan".to_string()))?
                .clone();
            // Re-read the call from the working tree so inner substitutions
            // and join rewrites are visible in its argument subqueries.
            let call = extract_from_query(&self.working)
                .into_iter()
                .find(|c| c.id == id)
                .ok_or_else(|| {
                    ExecError::Other("ingredient disappeared during rewriting".to_string())
                })?;
            let flow = match cp.class {
                IngredientClass::Scalar => self.run_scalar(&call, &cp, blender)?,
                IngredientClass::Aggregate => self.run_aggregate(&call, &cp, blender)?,
                IngredientClass::Validate => self.run_validate(&call, &cp, blender)?,
                IngredientClass::JoinSets => self.run_join(&call, &cp, blender)?,
            };
            if let Flow::NoResult(reason) = flow {
                return Ok(self.finish_no_result(reason));
            }
        }
        let t0 = Instant::now();
        let final_sql = render_native(&self.working, &self.subs)
            .map_err(|e| ExecError::Other(format!("unsubstituted ingredient: {e}")))?;
        let table = self.planner.db.execute_native(&final_sql)?;
        let mut step = new_step(StepKind::FinalQuery, "final", final_sql, t0);
        step.output_summary = format!("{} rows", table.rows.len());
        self.steps.push(step);
        let outcome = if table.rows.is_empty() { Outcome::NoResult } else { Outcome::Answered };
        Ok(Smoothie {
            outcome,
            result: ResultRows { columns: table.columns, rows: table.rows },
            steps: std::mem::take(&mut self.steps),
            totals: self.totals,
        })
    }

    fn finish_no_result(&mut self, reason: String) -> Smoothie {
        let mut step = new_step(StepKind::FinalQuery, "final", String::new(), Instant::now());
        step.output_summary = "0 rows".to_string();
        step.warnings.push(reason);
        self.steps.push(step);
        Smoothie {
            outcome: Outcome::NoResult,
            result: ResultRows { columns: Vec::new(), rows: Vec::new() },
            steps: std::mem::take(&mut self.steps),
            totals: self.totals,
        }
    }

    /// Materializes `sql` into a session table, traces it, and returns its rows.
    fn materialize_input(
        &mut self,
        label: &str,
        sql: &str,
    ) -> Result<ResultTable, ExecError> {
        let t0 = Instant::now();
        let session = self.planner.db.materialize(sql)?;
        let table = self
            .planner
            .db
            .execute_native(&format!("SELECT * FROM {}", quote_ident(&session.name)))?;
        let mut step = new_step(StepKind::NativeSubquery, label, sql.to_string(), t0);
        step.output_summary = format!("{} rows into {}", table.rows.len(), session.name);
        self.steps.push(step);
        Ok(table)
    }

    /// Reads an options column: distinct non-null values in table order.
    fn read_options(&mut self, cp: &CallPlan, sql: &str) -> Result<Vec<String>, ExecError> {
        let t0 = Instant::now();
        let table = self.planner.db.execute_native(sql)?;
        let mut seen = std::collections::BTreeSet::new();
        let mut options = Vec::new();
        for row in &table.rows {
            let value = &row[0];
            if value.is_null() {
                continue;
            }
            let text = value.display();
            if seen.insert(text.clone()) {
                options.push(text);
            }
        }
        let mut step = new_step(StepKind::NativeSubquery, "options", sql.to_string(), t0);
        step.output_summary = format!("{} distinct options for {}", options.len(), cp.label);
        self.steps.push(step);
        Ok(options)
    }

    /// Renders and materializes a call's context subquery from the working tree.
    fn read_context(
        &mut self,
        call: &IngredientCall,
        cp: &CallPlan,
        options: Option<&[String]>,
    ) -> Result<Option<ResultTable>, ExecError> {
        if let Some(context) = call.context_subquery() {
            let sql = render_native(context, &self.subs)
                .map_err(|e| ExecError::Other(format!("unsubstituted ingredient: {e}")))?;
            return Ok(Some(self.materialize_input("context", &sql)?));
        }
        if let (Some(options), Some(column)) = (options, cp.options_column.as_ref()) {
            if !options.is_empty() {
                // With no subquery, the option column itself is the context.
                let rows = options.iter().map(|o| vec![Value::Text(o.clone())]).collect();
                return Ok(Some(ResultTable { columns: vec![column.clone()], rows }));
            }
        }
        Ok(None)
    }

    fn absorb_stats(&mut self, stats: &RunStats) {
        self.totals.ingredient_calls += stats.calls;
        self.totals.prompt_chars += stats.usage.prompt_chars;
    }

    fn push_substitute(&mut self, cp: &CallPlan, fragment: String, summary: &str) {
        let mut step = new_step(StepKind::Substitute, &cp.label, fragment, Instant::now());
        step.output_summary = summary.to_string();
        self.steps.push(step);
    }

    fn run_scalar(
        &mut self,
        call: &IngredientCall,
        cp: &CallPlan,
        blender: &dyn Blender,
    ) -> Result<Flow, ExecError> {
        let input_sql = cp.input_sql.as_deref().expect("scalar calls plan an input");
        let input = self.materialize_input("input", input_sql)?;
        let values: Vec<Value> = input
            .rows
            .iter()
            .map(|row| row[0].clone())
            .filter(|v| !v.is_null())
            .collect();
        let question = call.question().unwrap_or_default().to_string();
        let hint = infer_output_hint(self.ast, call);

        let mut fresh: Vec<Value> = Vec::new();
        for value in &values {
            let key = memo_key(&[&cp.label, &question, &value.sql_literal()]);
            if !self.map_cache.contains_key(&key) && !fresh.contains(value) {
                fresh.push(value.clone());
            }
        }

        let t0 = Instant::now();
        let (outputs, stats) = if let Some(CustomIngredient::Scalar(handler)) =
            self.planner.registry.custom(&call.name)
        {
            let outputs = handler(&question, &fresh, blender).map_err(lift_ingredient_error)?;
            if outputs.len() != fresh.len() {
                return Err(ExecError::Other(format!(
                    "custom ingredient {} returned {} outputs for {} values",
                    call.name,
                    outputs.len(),
                    fresh.len()
                )));
            }
            (outputs, RunStats::default())
        } else {
            let task = MapTask { question: question.clone(), values: fresh.clone(), hint: hint.clone() };
            let run = exec_map(&task, blender, self.planner.config.strict_map)
                .map_err(lift_ingredient_error)?;
            (run.outputs, run.stats)
        };
        for (value, output) in fresh.iter().zip(&outputs) {
            let key = memo_key(&[&cp.label, &question, &value.sql_literal()]);
            self.map_cache.insert(key, output.clone());
        }
        let all_outputs: Vec<Value> = values
            .iter()
            .map(|v| {
                self.map_cache[&memo_key(&[&cp.label, &question, &v.sql_literal()])].clone()
            })
            .collect();

        self.absorb_stats(&stats);
        self.totals.values_passed += values.len();
        let detail = if fresh.is_empty() {
            "(all values cached)".to_string()
        } else {
            let first = prompts::map_request(&question, &fresh[..fresh.len().min(MAP_BATCH)], &hint);
            let more = fresh.len().div_ceil(MAP_BATCH) - 1;
            if more > 0 {
                format!("{}\n(+{} more batches)", first.user_prompt, more)
            } else {
                first.user_prompt
            }
        };
        let mut step = new_step(StepKind::Ingredient, &cp.label, detail, t0);
        step.input_count = Some(values.len());
        step.input_preview = preview(values.iter().map(Value::display));
        step.output_summary = format!("{} outputs, {} model calls", all_outputs.len(), stats.calls);
        step.warnings = stats.warnings;
        self.steps.push(step);

        let rows: Vec<Vec<Value>> = values
            .iter()
            .cloned()
            .zip(all_outputs)
            .map(|(v, o)| vec![v, o])
            .collect();
        let artifact_table = self.planner.db.materialize_rows(
            &["value", "output"],
            &rows,
            &format!("{} outputs", cp.label),
        )?;
        let artifact = IngredientArtifact::Mapped {
            table: artifact_table.name,
            qualifier: cp.qualifier.clone().expect("scalar calls plan a qualifier"),
            column: cp.column.clone().expect("scalar calls plan a column"),
        };
        let fragment = substitution_fragment(IngredientClass::Scalar, &artifact)?;
        self.subs.insert(call.id, fragment.clone());
        self.push_substitute(cp, fragment, "correlated scalar subquery");
        Ok(Flow::Continue)
    }

    fn run_aggregate(
        &mut self,
        call: &IngredientCall,
        cp: &CallPlan,
        blender: &dyn Blender,
    ) -> Result<Flow, ExecError> {
        let options = match &cp.options_sql {
            Some(sql) => Some(self.read_options(cp, &sql.clone())?),
            None => None,
        };
        let Some(context) = self.read_context(call, cp, options.as_deref())? else {
            return Ok(Flow::NoResult(format!("{} has no context to read", cp.label)));
        };
        if context.rows.is_empty() {
            return Ok(Flow::NoResult(format!("{} received an empty context", cp.label)));
        }
        let question = call.question().unwrap_or_default().to_string();
        let rendered = prompts::render_context(&context, prompts::CELL_CAP);
        let memo = memo_key(&[
            &cp.label,
            &question,
            &rendered,
            &options.as_deref().unwrap_or_default().join("\u{1e}"),
        ]);

        let t0 = Instant::now();
        let (answer, stats, cached) = match self.scalar_memo.get(&memo) {
            Some(hit) => (hit.clone(), RunStats::default(), true),
            None => {
                let result = if let Some(CustomIngredient::Aggregate(handler)) =
                    self.planner.registry.custom(&call.name)
                {
                    handler(&question, &context, blender).map(|v| (v, RunStats::default()))
                } else {
                    let task = QaTask {
                        question: question.clone(),
                        context: context.clone(),
                        options: options.clone(),
                    };
                    exec_qa(&task, blender).map(|run| (run.answer, run.stats))
                };
                match result {
                    Ok((answer, stats)) => {
                        self.scalar_memo.insert(memo, answer.clone());
                        (answer, stats, false)
                    }
                    Err(IngredientError::EmptyContext) => {
                        return Ok(Flow::NoResult(format!(
                            "{} received an empty context",
                            cp.label
                        )));
                    }
                    Err(e) => return Err(lift_ingredient_error(e)),
                }
            }
        };

        self.absorb_stats(&stats);
        let cells = context.rows.len() * context.columns.len();
        self.totals.values_passed += cells;
        let detail = if cached {
            "(cached)".to_string()
        } else {
            prompts::qa_request(&question, &rendered, options.as_deref()).user_prompt
        };
        let mut step = new_step(StepKind::Ingredient, &cp.label, detail, t0);
        step.input_count = Some(cells);
        step.input_preview = preview(context.rows.iter().flatten().map(Value::display));
        step.output_summary = format!("answer: {}", answer.display());
        step.warnings = stats.warnings;
        self.steps.push(step);

        let fragment =
            substitution_fragment(IngredientClass::Aggregate, &IngredientArtifact::Scalar(answer))?;
        self.subs.insert(call.id, fragment.clone());
        self.push_substitute(cp, fragment, "scalar literal");
        Ok(Flow::Continue)
    }

    fn run_validate(
        &mut self,
        call: &IngredientCall,
        cp: &CallPlan,
        blender: &dyn Blender,
    ) -> Result<Flow, ExecError> {
        let Some(context) = self.read_context(call, cp, None)? else {
            return Ok(Flow::NoResult(format!("{} has no context to read", cp.label)));
        };
        if context.rows.is_empty() {
            return Ok(Flow::NoResult(format!("{} received an empty context", cp.label)));
        }
        let claim = call.question().unwrap_or_default().to_string();
        let rendered = prompts::render_context(&context, prompts::CELL_CAP);
        let memo = memo_key(&[&cp.label, &claim, &rendered]);

        let t0 = Instant::now();
        let (verdict, stats, cached) = match self.verdict_memo.get(&memo) {
            Some(hit) => (*hit, RunStats::default(), true),
            None => {
                let task = ValidateTask { claim: claim.clone(), context: context.clone() };
                match exec_validate(&task, blender) {
                    Ok(run) => {
                        self.verdict_memo.insert(memo, run.verdict);
                        (run.verdict, run.stats, false)
                    }
                    Err(IngredientError::EmptyContext) => {
                        return Ok(Flow::NoResult(format!(
                            "{} received an empty context",
                            cp.label
                        )));
                    }
                    Err(e) => return Err(lift_ingredient_error(e)),
                }
            }
        };

        self.absorb_stats(&stats);
        let cells = context.rows.len() * context.columns.len();
        self.totals.values_passed += cells;
        let detail = if cached {
            "(cached)".to_string()
        } else {
            prompts::validate_request(&claim, &rendered).user_prompt
        };
        let mut step = new_step(StepKind::Ingredient, &cp.label, detail, t0);
        step.input_count = Some(cells);
        step.input_preview = preview(context.rows.iter().flatten().map(Value::display));
        step.output_summary = format!("verdict: {verdict}");
        step.warnings = stats.warnings;
        self.steps.push(step);

        let fragment = substitution_fragment(
            IngredientClass::Validate,
            &IngredientArtifact::Verdict(verdict),
        )?;
        self.subs.insert(call.id, fragment.clone());
        self.push_substitute(cp, fragment, "boolean literal");
        Ok(Flow::Continue)
    }

    fn run_join(
        &mut self,
        call: &IngredientCall,
        cp: &CallPlan,
        blender: &dyn Blender,
    ) -> Result<Flow, ExecError> {
        let left_table = match &cp.input_sql {
            Some(sql) => self.materialize_input("input", &sql.clone())?,
            None => {
                let source = call.source_subquery().expect("join source checked at plan time");
                let sql = render_native(source, &self.subs)
                    .map_err(|e| ExecError::Other(format!("unsubstituted ingredient: {e}")))?;
                self.materialize_input("input", &sql)?
            }
        };
        let mut seen = std::collections::BTreeSet::new();
        let mut left: Vec<String> = Vec::new();
        for row in &left_table.rows {
            let value = &row[0];
            if value.is_null() {
                continue;
            }
            let text = value.display();
            if seen.insert(text.clone()) {
                left.push(text);
            }
        }
        let options_sql = cp.options_sql.clone().expect("join calls plan options");
        let right = self.read_options(cp, &options_sql)?;
        let question = call.question().unwrap_or_default().to_string();
        let memo = memo_key(&[
            &cp.label,
            &question,
            &left.join("\u{1e}"),
            &right.join("\u{1e}"),
        ]);

        let t0 = Instant::now();
        let (pairs, stats, cached) = match self.join_memo.get(&memo) {
            Some(hit) => (hit.clone(), RunStats::default(), true),
            None => {
                let task = JoinTask {
                    left: left.clone(),
                    right: right.clone(),
                    question: question.clone(),
                };
                let run = exec_join(&task, blender).map_err(lift_ingredient_error)?;
                self.join_memo.insert(memo, run.pairs.clone());
                (run.pairs, run.stats, false)
            }
        };

        self.absorb_stats(&stats);
        self.totals.values_passed += left.len();
        let detail = if cached {
            "(cached)".to_string()
        } else if stats.calls == 0 {
            "(aligned by exact match only)".to_string()
        } else {
            prompts::join_request(&question, &left, &right).user_prompt
        };
        let mut step = new_step(StepKind::Ingredient, &cp.label, detail, t0);
        step.input_count = Some(left.len());
        step.input_preview = preview(left.iter().cloned());
        step.output_summary = format!("{} pairs", pairs.len());
        step.warnings = stats.warnings;
        self.steps.push(step);

        let rows: Vec<Vec<Value>> = pairs
            .iter()
            .map(|(l, r)| vec![Value::Text(l.clone()), Value::Text(r.clone())])
            .collect();
        let pair_table = self.planner.db.materialize_rows(
            &["lhs", "rhs"],
            &rows,
            &format!("{} pairs", cp.label),
        )?;

        let mut anchors = Vec::new();
        if let Some((table, column)) = &cp.left_anchor {
            anchors.push(anchor_expr(table, column, &pair_table.name, "lhs"));
        }
        if let Some((table, column)) = &cp.right_anchor {
            anchors.push(anchor_expr(table, column, &pair_table.name, "rhs"));
        }
        let rewrite = JoinRewrite { id: call.id, pair_table: &pair_table.name, anchors };
        if !rewrite_join_query(&mut self.working, &rewrite) {
            return Err(ExecError::Other(
                "join ingredient not found in the query tree".to_string(),
            ));
        }
        let described = describe_rewrite(&pair_table.name, cp);
        self.push_substitute(cp, described, "inner join on alignment pairs");
        Ok(Flow::Continue)
    }
}

fn describe_rewrite(pair_table: &str, cp: &CallPlan) -> String {
    let mut conditions = Vec::new();
    if let Some((table, column)) = &cp.left_anchor {
        conditions.push(format!(
            "{}.{} = {}.\"lhs\"",
            quote_ident(table),
            quote_ident(column),
            quote_ident(pair_table)
        ));
    }
    if let Some((table, column)) = &cp.right_anchor {
        conditions.push(format!(
            "{}.{} = {}.\"rhs\"",
            quote_ident(table),
            quote_ident(column),
            quote_ident(pair_table)
        ));
    }
    format!("INNER JOIN {} ON {}", quote_ident(pair_table), conditions.join(" AND "))
}

fn lift_ingredient_error(e: IngredientError) -> ExecError {
    match e {
        IngredientError::Blender(b) => ExecError::Blender(b),
        IngredientError::EmptyContext => {
            ExecError::Other("ingredient received an empty context".to_string())
        }
    }
}

fn memo_key(parts: &[&str]) -> String {
    parts.join("\u{1f}")
}

fn new_step(kind: StepKind, label: &str, detail: String, t0: Instant) -> TraceStep {
    TraceStep {
        kind,
        label: label.to_string(),
        detail,
        input_count: None,
        input_preview: Vec::new(),
        output_summary: String::new(),
        warnings: Vec::new(),
        wall_ms: t0.elapsed().as_secs_f64() * 1000.0,
    }
}

fn preview(values: impl Iterator<Item = String>) -> Vec<String> {
    values.take(PREVIEW_CAP).collect()
}

fn anchor_expr(table: &str, column: &str, pair_table: &str, side: &str) -> Expr {
    Expr::Binary {
        left: Box::new(Expr::Column {
            table: Some(Ident::quoted(table)),
            column: Ident::quoted(column),
            span: Span::synthetic(),
        }),
        op: BinaryOp::Eq,
        right: Box::new(Expr::Column {
            table: Some(Ident::quoted(pair_table)),
            column: Ident::quoted(side),
            span: Span::synthetic(),
        }),
        span: Span::synthetic(),
    }
}

fn and2(left: Expr, right: Expr) -> Expr {
    Expr::Binary {
        left: Box::new(left),
        op: BinaryOp::And,
        right: Box::new(right),
        span: Span::synthetic(),
    }
}

fn and_all(mut exprs: Vec<Expr>) -> Expr {
    let first = exprs.remove(0);
    exprs.into_iter().fold(first, and2)
}

fn paren(expr: Expr) -> Expr {
    Expr::Paren { inner: Box::new(expr), span: Span::synthetic() }
}

fn pair_table_ref(name: &str) -> TableRef {
    TableRef::Named { name: Ident::quoted(name), alias: None, span: Span::synthetic() }
}

struct JoinRewrite<'a> {
    id: NodeId,
    pair_table: &'a str,
    anchors: Vec<Expr>,
}

enum TableHit {
    Miss,
    Done,
    /// Replaced a bare FROM element; these conjuncts belong in WHERE.
    NeedsWhere(Vec<Expr>),
}

fn rewrite_join_query(query: &mut Query, rw: &JoinRewrite) -> bool {
    for cte in &mut query.ctes {
        if rewrite_join_query(&mut cte.query, rw) {
            return true;
        }
    }
    if rewrite_join_select(&mut query.select, rw) {
        return true;
    }
    for item in &mut query.order_by {
        if rewrite_join_expr(&mut item.expr, rw) {
            return true;
        }
    }
    if let Some(e) = &mut query.limit {
        if rewrite_join_expr(e, rw) {
            return true;
        }
    }
    if let Some(e) = &mut query.offset {
        if rewrite_join_expr(e, rw) {
            return true;
        }
    }
    false
}

fn rewrite_join_select(select: &mut Select, rw: &JoinRewrite) -> bool {
    let mut hit: Option<Vec<Expr>> = None;
    for table in &mut select.from {
        match rewrite_table(table, rw) {
            TableHit::Miss => {}
            TableHit::Done => {
                hit = Some(Vec::new());
                break;
            }
            TableHit::NeedsWhere(conjuncts) => {
                hit = Some(conjuncts);
                break;
            }
        }
    }
    if let Some(conjuncts) = hit {
        if !conjuncts.is_empty() {
            let mut clause = and_all(conjuncts);
            if let Some(existing) = select.where_clause.take() {
                clause = and2(clause, paren(existing));
            }
            select.where_clause = Some(clause);
        }
        return true;
    }
    for item in &mut select.items {
        if let SelectItem::Expr { expr, .. } = item {
            if rewrite_join_expr(expr, rw) {
                return true;
            }
        }
    }
    if let Some(e) = &mut select.where_clause {
        if rewrite_join_expr(e, rw) {
            return true;
        }
    }
    for e in &mut select.group_by {
        if rewrite_join_expr(e, rw) {
            return true;
        }
    }
    if let Some(e) = &mut select.having {
        if rewrite_join_expr(e, rw) {
            return true;
        }
    }
    false
}

fn rewrite_table(table: &mut TableRef, rw: &JoinRewrite) -> TableHit {
    if matches!(table, TableRef::Ingredient { call, .. } if call.id == rw.id) {
        *table = pair_table_ref(rw.pair_table);
        return TableHit::NeedsWhere(rw.anchors.clone());
    }
    match table {
        TableRef::Ingredient { call, .. } => {
            for arg in &mut call.raw_args {
                if rewrite_join_raw_arg(arg, rw) {
                    return TableHit::Done;
                }
            }
            TableHit::Miss
        }
        TableRef::Join { left, op, right, constraint, .. } => {
            let right_is =
                matches!(right.as_ref(), TableRef::Ingredient { call, .. } if call.id == rw.id);
            let left_is =
                matches!(left.as_ref(), TableRef::Ingredient { call, .. } if call.id == rw.id);
            if right_is || left_is {
                let side = if right_is { right } else { left };
                **side = pair_table_ref(rw.pair_table);
                *op = JoinOp::Inner;
                let mut on = and_all(rw.anchors.clone());
                if let Some(JoinConstraint::On(existing)) = constraint.take() {
                    on = and2(on, paren(existing));
                }
                *constraint = Some(JoinConstraint::On(on));
                return TableHit::Done;
            }
            match rewrite_table(left, rw) {
                TableHit::Miss => {}
                hit => return hit,
            }
            match rewrite_table(right, rw) {
                TableHit::Miss => {}
                hit => return hit,
            }
            if let Some(JoinConstraint::On(e)) = constraint {
                if rewrite_join_expr(e, rw) {
                    return TableHit::Done;
                }
            }
            TableHit::Miss
        }
        TableRef::Subquery { query, .. } => {
            if rewrite_join_query(query, rw) {
                TableHit::Done
            } else {
                TableHit::Miss
            }
        }
        _ => TableHit::Miss,
    }
}

fn rewrite_join_expr(expr: &mut Expr, rw: &JoinRewrite) -> bool {
    match expr {
        Expr::Literal { .. } | Expr::Column { .. } => false,
        Expr::Unary { operand, .. }
        | Expr::IsNull { operand, .. }
        | Expr::Cast { operand, .. }
        | Expr::Paren { inner: operand, .. } => rewrite_join_expr(operand, rw),
        Expr::Binary { left, right, .. } => {
            rewrite_join_expr(left, rw) || rewrite_join_expr(right, rw)
        }
        Expr::InList { operand, list, .. } => {
            rewrite_join_expr(operand, rw) || list.iter_mut().any(|e| rewrite_join_expr(e, rw))
        }
        Expr::InSubquery { operand, query, .. } => {
            rewrite_join_expr(operand, rw) || rewrite_join_query(query, rw)
        }
        Expr::Between { operand, low, high, .. } => {
            rewrite_join_expr(operand, rw)
                || rewrite_join_expr(low, rw)
                || rewrite_join_expr(high, rw)
        }
        Expr::Like { operand, pattern, .. } => {
            rewrite_join_expr(operand, rw) || rewrite_join_expr(pattern, rw)
        }
        Expr::Function { args, .. } => args.iter_mut().any(|arg| match arg {
            FunctionArg::Expr(e) => rewrite_join_expr(e, rw),
            FunctionArg::Star => false,
        }),
        Expr::Case { operand, branches, else_expr, .. } => {
            operand.as_deref_mut().is_some_and(|e| rewrite_join_expr(e, rw))
                || branches.iter_mut().any(|b| {
                    rewrite_join_expr(&mut b.when, rw) || rewrite_join_expr(&mut b.then, rw)
                })
                || else_expr.as_deref_mut().is_some_and(|e| rewrite_join_expr(e, rw))
        }
        Expr::Exists { query, .. } | Expr::Subquery { query, .. } => {
            rewrite_join_query(query, rw)
        }
        Expr::Ingredient { call, .. } => {
            call.raw_args.iter_mut().any(|arg| rewrite_join_raw_arg(arg, rw))
        }
    }
}

fn rewrite_join_raw_arg(arg: &mut RawArg, rw: &JoinRewrite) -> bool {
    match arg {
        RawArg::Str { .. } => false,
        RawArg::Subquery { query, .. } => rewrite_join_query(query, rw),
        RawArg::Keyword { value, .. } => rewrite_join_raw_arg(value, rw),
    }
}
