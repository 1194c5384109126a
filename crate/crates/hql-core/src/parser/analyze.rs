//! Post-parse analysis: assigns each ingredient call a postorder id
//! (nested calls numbered before their enclosing call), records the
//! syntactic context it occupies, and captures the literal it is compared
//! against so output hints can be inferred.

use super::ast::*;

pub fn finalize(query: &mut Query) {
    Finalizer { next_id: 0 }.query(query);
}

/// Coarse position in the surrounding SQL, refined to a
/// `SyntacticContext` when an ingredient is found there.
#[derive(Clone, Copy)]
enum Site {
    SelectItem,
    JoinOn,
    GroupBy,
    OrderBy,
    Comparison,
    Other,
}

impl Site {
    fn context(self) -> SyntacticContext {
        match self {
            Site::SelectItem => SyntacticContext::SelectItem,
            Site::JoinOn => SyntacticContext::JoinCondition,
            Site::GroupBy => SyntacticContext::GroupBy,
            Site::OrderBy => SyntacticContext::OrderBy,
            Site::Comparison => SyntacticContext::ComparisonOperand,
            Site::Other => SyntacticContext::Other,
        }
    }
}

struct Finalizer {
    next_id: NodeId,
}

impl Finalizer {
    fn query(&mut self, q: &mut Query) {
        for cte in &mut q.ctes {
            self.query(&mut cte.query);
        }
        self.select(&mut q.select);
        for item in &mut q.order_by {
            self.expr(&mut item.expr, Site::OrderBy, None, false);
        }
        if let Some(limit) = &mut q.limit {
            self.expr(limit, Site::Other, None, false);
        }
        if let Some(offset) = &mut q.offset {
            self.expr(offset, Site::Other, None, false);
        }
    }

    fn select(&mut self, s: &mut Select) {
        for item in &mut s.items {
            if let SelectItem::Expr { expr, .. } = item {
                self.expr(expr, Site::SelectItem, None, false);
            }
        }
        for t in &mut s.from {
            self.table_ref(t);
        }
        if let Some(w) = &mut s.where_clause {
            self.expr(w, Site::Other, None, false);
        }
        for e in &mut s.group_by {
            self.expr(e, Site::GroupBy, None, false);
        }
        if let Some(h) = &mut s.having {
            self.expr(h, Site::Other, None, false);
        }
    }

    fn table_ref(&mut self, t: &mut TableRef) {
        match t {
            TableRef::Named { .. } => {}
            TableRef::Subquery { query, .. } => self.query(query),
            TableRef::Join { left, right, constraint, .. } => {
                self.table_ref(left);
                self.table_ref(right);
                if let Some(JoinConstraint::On(e)) = constraint {
                    self.expr(e, Site::JoinOn, None, false);
                }
            }
            TableRef::Ingredient { call, .. } => {
                self.call(call, SyntacticContext::TableExpression, None, false);
            }
        }
    }

    fn expr(&mut self, e: &mut Expr, site: Site, cmp: Option<ComparisonSite>, arith: bool) {
        match e {
            Expr::Ingredient { call, .. } => self.call(call, site.context(), cmp, arith),
            Expr::Paren { inner, .. } => self.expr(inner, site, cmp, arith),
            Expr::Literal { .. } | Expr::Column { .. } => {}
            Expr::Unary { op, operand, .. } => {
                let is_arith = matches!(op, UnaryOp::Neg | UnaryOp::Pos);
                self.expr(operand, site, None, is_arith);
            }
            Expr::Binary { left, op, right, .. } => {
                let hint_op = matches!(
                    op,
                    BinaryOp::Eq
                        | BinaryOp::EqEq
                        | BinaryOp::NotEq
                        | BinaryOp::NotEqAngle
                        | BinaryOp::Lt
                        | BinaryOp::Gt
                        | BinaryOp::LtEq
                        | BinaryOp::GtEq
                );
                let comparison = op.is_comparison() || *op == BinaryOp::Match;
                let child_site = if comparison { Site::Comparison } else { site };
                let is_arith = op.is_arithmetic();
                let cmp_for_left = if hint_op { comparison_site(right) } else { None };
                let cmp_for_right = if hint_op { comparison_site(left) } else { None };
                self.expr(left, child_site, cmp_for_left, is_arith);
                self.expr(right, child_site, cmp_for_right, is_arith);
            }
            Expr::IsNull { operand, .. } => self.expr(operand, Site::Comparison, None, false),
            Expr::InList { operand, list, .. } => {
                // IN counts as a comparison; the first listed literal
                // serves as the example.
                let first_literal = list.iter().find_map(|item| comparison_site(item));
                self.expr(operand, Site::Comparison, first_literal, false);
                for item in list {
                    self.expr(item, Site::Comparison, None, false);
                }
            }
            Expr::InSubquery { operand, query, .. } => {
                self.expr(operand, Site::Comparison, None, false);
                self.query(query);
            }
            Expr::Between { operand, low, high, .. } => {
                self.expr(operand, Site::Comparison, None, false);
                self.expr(low, Site::Comparison, None, false);
                self.expr(high, Site::Comparison, None, false);
            }
            Expr::Like { operand, pattern, .. } => {
                self.expr(operand, Site::Comparison, None, false);
                self.expr(pattern, Site::Comparison, None, false);
            }
            Expr::Function { args, .. } => {
                for arg in args {
                    if let FunctionArg::Expr(e) = arg {
                        self.expr(e, site, None, false);
                    }
                }
            }
            Expr::Case { operand, branches, else_expr, .. } => {
                if let Some(op) = operand {
                    self.expr(op, site, None, false);
                }
                for b in branches {
                    self.expr(&mut b.when, site, None, false);
                    self.expr(&mut b.then, site, None, false);
                }
                if let Some(e) = else_expr {
                    self.expr(e, site, None, false);
                }
            }
            Expr::Exists { query, .. } => self.query(query),
            Expr::Subquery { query, .. } => self.query(query),
            Expr::Cast { operand, .. } => self.expr(operand, site, None, false),
        }
    }

    fn call(
        &mut self,
        call: &mut IngredientCall,
        context: SyntacticContext,
        cmp: Option<ComparisonSite>,
        arith: bool,
    ) {
        // Nested calls inside argument subqueries get smaller ids, giving
        // postorder (innermost-first) numbering.
        for arg in &mut call.raw_args {
            if let Some(q) = arg.as_subquery_mut() {
                self.query(q);
            }
        }
        call.id = self.next_id;
        self.next_id += 1;
        call.context = context;
        call.comparison = cmp;
        call.arithmetic_operand = arith;
    }
}

/// The literal an ingredient on the other side of a comparison would be
/// compared against, looking through grouping parentheses.
fn comparison_site(e: &Expr) -> Option<ComparisonSite> {
    match e.unwrap_parens() {
        Expr::Literal { value, span } => {
            Some(ComparisonSite { literal: value.clone(), literal_span: *span })
        }
        _ => None,
    }
}
