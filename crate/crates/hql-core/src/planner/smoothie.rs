//! The result object a query execution returns: final table, ordered trace
//! of every step taken, and aggregate cost totals.

use serde::{Deserialize, Serialize};

use crate::value::Value;

/// How the execution ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// The final table has at least one row.
    Answered,
    /// The final table is empty, or an ingredient received an empty
    /// context; callers may fall back to another answering strategy.
    NoResult,
}

/// What a trace step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Ran native SQL and materialized a session table.
    NativeSubquery,
    /// Ran one ingredient over its prepared input.
    Ingredient,
    /// Spliced an ingredient's artifact back into the query.
    Substitute,
    /// Ran the fully substituted native query.
    FinalQuery,
}

/// One entry in the execution trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub kind: StepKind,
    /// Short label: ingredient name, "materialize", "final".
    pub label: String,
    /// The SQL text or prompt text the step ran.
    pub detail: String,
    /// Rows or values consumed, when meaningful.
    pub input_count: Option<usize>,
    /// Up to [`PREVIEW_CAP`] of the values consumed.
    pub input_preview: Vec<String>,
    pub output_summary: String,
    /// Anomalies observed during the step.
    pub warnings: Vec<String>,
    pub wall_ms: f64,
}

/// Most values a trace step previews.
pub const PREVIEW_CAP: usize = 20;

/// Aggregate model-call cost of one execution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    /// Model calls issued.
    pub ingredient_calls: usize,
    /// Values/cells handed to ingredients, summed over steps.
    pub values_passed: usize,
    /// Bytes of rendered prompts sent.
    pub prompt_chars: usize,
}

/// Final result table in serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRows {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

/// Everything a query execution produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Smoothie {
    pub outcome: Outcome,
    pub result: ResultRows,
    pub steps: Vec<TraceStep>,
    pub totals: Totals,
}

impl Smoothie {
    /// Stable JSON form; field order fixed by the struct definitions.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("smoothie serializes")
    }

    /// The single cell of a 1x1 result, if that is the shape.
    pub fn scalar(&self) -> Option<&Value> {
        match (self.result.rows.len(), self.result.rows.first().map(|r| r.len())) {
            (1, Some(1)) => Some(&self.result.rows[0][0]),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape_is_stable() {
        let smoothie = Smoothie {
            outcome: Outcome::Answered,
            result: ResultRows {
                columns: vec!["x".to_string()],
                rows: vec![vec![Value::Integer(1)]],
            },
            steps: vec![TraceStep {
                kind: StepKind::FinalQuery,
                label: "final".to_string(),
                detail: "SELECT 1".to_string(),
                input_count: None,
                input_preview: Vec::new(),
                output_summary: "1 row".to_string(),
                warnings: Vec::new(),
                wall_ms: 0.0,
            }],
            totals: Totals::default(),
        };
        let json = smoothie.to_json();
        let parsed: Smoothie = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.outcome, Outcome::Answered);
        assert_eq!(parsed.result.rows, smoothie.result.rows);
        assert!(json.contains("\"outcome\": \"answered\""));
        assert!(json.contains("\"kind\": \"final_query\""));
        assert!(json.contains("\"ingredient_calls\": 0"));
    }
}
