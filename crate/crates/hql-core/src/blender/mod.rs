//! Model-call abstraction: a `Blender` turns prompts into text, optionally
//! under a value-set or regex constraint, with deterministic offline
//! implementations for testing and a remote chat-completions client.

mod lookup;
mod remote;

pub use lookup::{EchoBlender, FnBlender, LookupBlender, RuleBlender};
pub use remote::{parse_chat_completion, RemoteBlender, RemoteConfig};

use regex::Regex;

use crate::error::BlenderError;

/// Output constraint attached to a request.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Constraint {
    #[default]
    None,
    /// Output must be exactly one member of the set. Non-empty.
    ValueSet(Vec<String>),
    /// Output must fully match the pattern.
    Regex(String),
}

impl Constraint {
    pub fn is_none(&self) -> bool {
        matches!(self, Constraint::None)
    }
}

/// One prompt sent to a model backend.
#[derive(Debug, Clone, PartialEq)]
pub struct BlenderRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub constraint: Constraint,
    pub temperature: f64,
    /// Output budget in characters; backends may truncate beyond it.
    pub max_output: usize,
}

impl BlenderRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        BlenderRequest {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            constraint: Constraint::None,
            temperature: 0.0,
            max_output: 4096,
        }
    }

    pub fn with_constraint(mut self, constraint: Constraint) -> Self {
        self.constraint = constraint;
        self
    }

    /// Total byte length of the rendered prompts.
    pub fn prompt_chars(&self) -> usize {
        self.system_prompt.len() + self.user_prompt.len()
    }
}

/// Character accounting for one call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct BlenderUsage {
    pub prompt_chars: usize,
    pub output_chars: usize,
}

/// One model answer.
#[derive(Debug, Clone, PartialEq)]
pub struct BlenderResponse {
    pub text: String,
    pub usage: BlenderUsage,
    /// True when the constraint was enforced at decode time rather than
    /// checked after the fact.
    pub constrained: bool,
}

impl BlenderResponse {
    pub fn unconstrained(text: String, prompt_chars: usize) -> Self {
        let output_chars = text.len();
        BlenderResponse { text, usage: BlenderUsage { prompt_chars, output_chars }, constrained: false }
    }
}

/// A model backend. Implementations must be safe for concurrent calls and
/// idempotent at temperature 0.
pub trait Blender: Send + Sync {
    fn complete(&self, req: &BlenderRequest) -> Result<BlenderResponse, BlenderError>;

    /// Short implementation name for traces.
    fn name(&self) -> &str;
}

/// Validates `text` against `constraint`; Err carries the reason.
fn check_constraint(text: &str, constraint: &Constraint) -> Result<(), String> {
    match constraint {
        Constraint::None => Ok(()),
        Constraint::ValueSet(options) => {
            if options.iter().any(|o| o == text) {
                Ok(())
            } else {
                Err(format!("{text:?} is not one of the {} allowed values", options.len()))
            }
        }
        Constraint::Regex(pattern) => {
            let re = Regex::new(&format!("^(?:{pattern})$"))
                .map_err(|e| format!("invalid constraint pattern: {e}"))?;
            if re.is_match(text) {
                Ok(())
            } else {
                Err(format!("{text:?} does not match the required pattern {pattern:?}"))
            }
        }
    }
}

/// Completes a request that carries a constraint. Backends that constrain at
/// decode time pass through; otherwise the output is validated, retried once
/// with the violation appended, and rejected after that.
pub fn complete_constrained(
    blender: &dyn Blender,
    req: &BlenderRequest,
) -> Result<BlenderResponse, BlenderError> {
    match &req.constraint {
        Constraint::None => {
            return Err(BlenderError::Request("complete_constrained requires a constraint".into()))
        }
        Constraint::ValueSet(options) if options.is_empty() => {
            return Err(BlenderError::Request("empty value set".into()))
        }
        // Size-one sets have only one answer; no call is needed.
        Constraint::ValueSet(options) if options.len() == 1 => {
            return Ok(BlenderResponse {
                text: options[0].clone(),
                usage: BlenderUsage::default(),
                constrained: true,
            });
        }
        _ => {}
    }

    let first = blender.complete(req)?;
    if first.constrained {
        // Decode-time enforcement is trusted but still verified for sets.
        if let Constraint::ValueSet(_) = &req.constraint {
            check_constraint(&first.text, &req.constraint)
                .map_err(BlenderError::ConstraintViolation)?;
        }
        return Ok(first);
    }
    let violation = match check_constraint(&first.text, &req.constraint) {
        Ok(()) => return Ok(first),
        Err(v) => v,
    };

    let mut retry = req.clone();
    retry.user_prompt = format!(
        "{}\n\nYour previous answer was invalid: {violation}. Answer again with a valid value only.",
        req.user_prompt
    );
    let second = blender.complete(&retry)?;
    let mut usage = second.usage;
    usage.prompt_chars += first.usage.prompt_chars;
    usage.output_chars += first.usage.output_chars;
    match check_constraint(&second.text, &req.constraint) {
        Ok(()) => Ok(BlenderResponse { usage, ..second }),
        Err(v) => Err(BlenderError::ConstraintViolation(v)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn set(items: &[&str]) -> Constraint {
        Constraint::ValueSet(items.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn value_set_member_passes() {
        let blender = FnBlender::new(|_req| Ok("2019-20".to_string()));
        let req = BlenderRequest::new("sys", "user")
            .with_constraint(set(&["2018-19", "2019-20", "2020-21"]));
        let resp = complete_constrained(&blender, &req).unwrap();
        assert_eq!(resp.text, "2019-20");
    }

    #[test]
    fn value_set_violation_retries_once_then_errors() {
        let calls = AtomicUsize::new(0);
        let blender = FnBlender::new(move |_req| {
            calls.fetch_add(1, Ordering::SeqCst);
            Ok(format!("bogus {}", calls.load(Ordering::SeqCst)))
        });
        let req = BlenderRequest::new("sys", "user").with_constraint(set(&["a", "b"]));
        let err = complete_constrained(&blender, &req).unwrap_err();
        assert!(matches!(err, BlenderError::ConstraintViolation(_)));
        assert_eq!(blender.calls(), 2);
    }

    #[test]
    fn retry_prompt_carries_violation() {
        let blender = FnBlender::new(|req: &BlenderRequest| {
            if req.user_prompt.contains("previous answer was invalid") {
                Ok("b".to_string())
            } else {
                Ok("nope".to_string())
            }
        });
        let req = BlenderRequest::new("sys", "user").with_constraint(set(&["a", "b"]));
        let resp = complete_constrained(&blender, &req).unwrap();
        assert_eq!(resp.text, "b");
        // Usage accumulates across the retry.
        assert!(resp.usage.prompt_chars > "sysuser".len());
    }

    #[test]
    fn value_set_of_one_answers_without_a_call() {
        let blender = FnBlender::new(|_req| panic!("must not be called"));
        let req = BlenderRequest::new("sys", "user").with_constraint(set(&["only"]));
        let resp = complete_constrained(&blender, &req).unwrap();
        assert_eq!(resp.text, "only");
        assert!(resp.constrained);
        assert_eq!(blender.calls(), 0);
    }

    #[test]
    fn regex_shape_is_enforced() {
        let blender = FnBlender::new(|_req| Ok("true;true;false;".to_string()));
        let req = BlenderRequest::new("sys", "user")
            .with_constraint(Constraint::Regex("((true|false);)+".to_string()));
        let resp = complete_constrained(&blender, &req).unwrap();
        assert_eq!(resp.text, "true;true;false;");

        let bad = FnBlender::new(|_req| Ok("yes;no;".to_string()));
        let err = complete_constrained(&bad, &req).unwrap_err();
        assert!(matches!(err, BlenderError::ConstraintViolation(_)));
    }

    #[test]
    fn regex_must_match_fully() {
        // A prefix match is not enough.
        assert!(check_constraint("true;", &Constraint::Regex("((true|false);)+".into())).is_ok());
        assert!(
            check_constraint("true; extra", &Constraint::Regex("((true|false);)+".into())).is_err()
        );
    }

    #[test]
    fn constraint_soundness_never_a_third_outcome() {
        let outputs = ["a", "b", "c", "", "A", " a", "a "];
        for out in outputs {
            let blender = FnBlender::new(move |_req| Ok(out.to_string()));
            let req = BlenderRequest::new("s", "u").with_constraint(set(&["a", "b"]));
            match complete_constrained(&blender, &req) {
                Ok(resp) => assert!(resp.text == "a" || resp.text == "b"),
                Err(BlenderError::ConstraintViolation(_)) => {}
                Err(other) => panic!("unexpected error kind: {other:?}"),
            }
        }
    }

    #[test]
    fn usage_counts_prompt_bytes() {
        let blender = EchoBlender::default();
        let req = BlenderRequest::new("sys", "usér");
        let resp = blender.complete(&req).unwrap();
        assert_eq!(resp.usage.prompt_chars, "sys".len() + "usér".len());
        assert_eq!(resp.usage.output_chars, resp.text.len());
    }
}
