//! Dynamically typed cell values, mirroring SQLite's storage classes
//! (minus BLOB, which the dialect never produces).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Human-readable form used in prompts and traces. NULL renders empty.
    pub fn display(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Integer(n) => n.to_string(),
            Value::Real(f) => format_real(*f),
            Value::Text(s) => s.clone(),
        }
    }

    /// SQL literal form, safe to splice into a statement.
    pub fn sql_literal(&self) -> String {
        match self {
            Value::Null => "NULL".to_string(),
            Value::Integer(n) => n.to_string(),
            Value::Real(f) => format_real(*f),
            Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
        }
    }

    /// Parses model output into the most specific value: integer, then
    /// real, then text. Empty input becomes NULL.
    pub fn from_model_text(text: &str) -> Value {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Value::Null;
        }
        if let Ok(n) = trimmed.parse::<i64>() {
            return Value::Integer(n);
        }
        if let Ok(f) = trimmed.parse::<f64>() {
            if f.is_finite() {
                return Value::Real(f);
            }
        }
        Value::Text(trimmed.to_string())
    }
}

/// Renders a float so integral values keep a trailing `.0`, matching
/// SQLite's presentation of REAL.
fn format_real(f: f64) -> String {
    if f == f.trunc() && f.is_finite() && f.abs() < 1e15 {
        format!("{f:.1}")
    } else {
        f.to_string()
    }
}

impl From<rusqlite::types::Value> for Value {
    fn from(v: rusqlite::types::Value) -> Self {
        use rusqlite::types::Value as Sq;
        match v {
            Sq::Null => Value::Null,
            Sq::Integer(n) => Value::Integer(n),
            Sq::Real(f) => Value::Real(f),
            Sq::Text(s) => Value::Text(s),
            Sq::Blob(b) => Value::Text(String::from_utf8_lossy(&b).into_owned()),
        }
    }
}

impl rusqlite::types::ToSql for Value {
    fn to_sql(&self) -> rusqlite::Result<rusqlite::types::ToSqlOutput<'_>> {
        use rusqlite::types::{ToSqlOutput, ValueRef};
        Ok(match self {
            Value::Null => ToSqlOutput::Borrowed(ValueRef::Null),
            Value::Integer(n) => ToSqlOutput::Owned(rusqlite::types::Value::Integer(*n)),
            Value::Real(f) => ToSqlOutput::Owned(rusqlite::types::Value::Real(*f)),
            Value::Text(s) => ToSqlOutput::Borrowed(ValueRef::Text(s.as_bytes())),
        })
    }
}

impl From<Value> for serde_json::Value {
    fn from(v: Value) -> Self {
        match v {
            Value::Null => serde_json::Value::Null,
            Value::Integer(n) => serde_json::Value::from(n),
            Value::Real(f) => serde_json::Number::from_f64(f)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Value::Text(s) => serde_json::Value::String(s),
        }
    }
}

impl From<&serde_json::Value> for Value {
    fn from(v: &serde_json::Value) -> Self {
        match v {
            serde_json::Value::Null => Value::Null,
            serde_json::Value::Bool(b) => Value::Integer(i64::from(*b)),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Value::Integer(i)
                } else {
                    Value::Real(n.as_f64().unwrap_or(0.0))
                }
            }
            serde_json::Value::String(s) => Value::Text(s.clone()),
            other => Value::Text(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_escaping() {
        assert_eq!(Value::Text("it's".into()).sql_literal(), "'it''s'");
        assert_eq!(Value::Null.sql_literal(), "NULL");
        assert_eq!(Value::Integer(-3).sql_literal(), "-3");
        assert_eq!(Value::Real(2.0).sql_literal(), "2.0");
        assert_eq!(Value::Real(2.5).sql_literal(), "2.5");
    }

    #[test]
    fn model_text_parsing() {
        assert_eq!(Value::from_model_text("42"), Value::Integer(42));
        assert_eq!(Value::from_model_text(" 3.5 "), Value::Real(3.5));
        assert_eq!(Value::from_model_text("CA"), Value::Text("CA".into()));
        assert_eq!(Value::from_model_text(""), Value::Null);
        assert_eq!(Value::from_model_text("  "), Value::Null);
    }

    #[test]
    fn json_round_trip() {
        let v = Value::Text("abc".into());
        let j: serde_json::Value = v.clone().into();
        assert_eq!(Value::from(&j), v);

        let v = Value::Integer(7);
        let j: serde_json::Value = v.clone().into();
        assert_eq!(Value::from(&j), v);
    }
}
