//! Deterministic offline blenders: hash-keyed lookup tables, substring
//! rules, echo, and closure-backed test doubles.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use crate::error::BlenderError;

use super::{Blender, BlenderRequest, BlenderResponse, Constraint};

/// Key under which a lenient lookup table stores its fallback answer.
pub const DEFAULT_KEY: &str = "__default__";

/// Hex SHA-256 over both prompts; the lookup key for a request.
pub fn prompt_key(system_prompt: &str, user_prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(system_prompt.as_bytes());
    hasher.update([0u8]);
    hasher.update(user_prompt.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Replays recorded answers keyed by prompt hash. Strict mode errors on an
/// unseen prompt; lenient mode answers with the `__default__` entry.
pub struct LookupBlender {
    table: BTreeMap<String, String>,
    strict: bool,
}

impl LookupBlender {
    pub fn new(strict: bool) -> Self {
        LookupBlender { table: BTreeMap::new(), strict }
    }

    /// Records an answer for a prompt pair.
    pub fn record(&mut self, system_prompt: &str, user_prompt: &str, answer: &str) {
        self.table.insert(prompt_key(system_prompt, user_prompt), answer.to_string());
    }

    pub fn set_default(&mut self, answer: &str) {
        self.table.insert(DEFAULT_KEY.to_string(), answer.to_string());
    }

    /// Loads a JSON object file `{prompt_hash: answer, ...}`.
    pub fn from_json_file(path: impl AsRef<Path>, strict: bool) -> Result<Self, BlenderError> {
        let bytes = std::fs::read(path.as_ref())
            .map_err(|e| BlenderError::Request(format!("cannot read lookup file: {e}")))?;
        let table: BTreeMap<String, String> = serde_json::from_slice(&bytes)
            .map_err(|e| BlenderError::Payload(format!("lookup file is not a JSON map: {e}")))?;
        Ok(LookupBlender { table, strict })
    }
}

impl Blender for LookupBlender {
    fn complete(&self, req: &BlenderRequest) -> Result<BlenderResponse, BlenderError> {
        let key = prompt_key(&req.system_prompt, &req.user_prompt);
        let hit = self.table.get(&key).or_else(|| {
            if self.strict { None } else { self.table.get(DEFAULT_KEY) }
        });
        match hit {
            Some(answer) => Ok(BlenderResponse::unconstrained(answer.clone(), req.prompt_chars())),
            None => Err(BlenderError::NoMatch { key }),
        }
    }

    fn name(&self) -> &str {
        "lookup"
    }
}

/// One substring rule: fires when every `contains` fragment appears in the
/// combined prompt text.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Rule {
    pub contains: Vec<String>,
    pub answer: String,
}

/// Answers from an ordered rule list; first matching rule wins. Rules are
/// human-writable, unlike hash-keyed lookup tables.
pub struct RuleBlender {
    rules: Vec<Rule>,
    default: Option<String>,
}

impl RuleBlender {
    pub fn new(rules: Vec<Rule>, default: Option<String>) -> Self {
        RuleBlender { rules, default }
    }

    pub fn rule(mut self, contains: &[&str], answer: &str) -> Self {
        self.rules.push(Rule {
            contains: contains.iter().map(|s| s.to_string()).collect(),
            answer: answer.to_string(),
        });
        self
    }

    /// Loads `{"rules": [{"contains": [...], "answer": "..."}], "default": "..."}`.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, BlenderError> {
        #[derive(serde::Deserialize)]
        struct File {
            rules: Vec<Rule>,
            #[serde(default)]
            default: Option<String>,
        }
        let bytes = std::fs::read(path.as_ref())
            .map_err(|e| BlenderError::Request(format!("cannot read rules file: {e}")))?;
        let file: File = serde_json::from_slice(&bytes)
            .map_err(|e| BlenderError::Payload(format!("rules file is malformed: {e}")))?;
        Ok(RuleBlender { rules: file.rules, default: file.default })
    }
}

impl Default for RuleBlender {
    fn default() -> Self {
        RuleBlender::new(Vec::new(), None)
    }
}

impl Blender for RuleBlender {
    fn complete(&self, req: &BlenderRequest) -> Result<BlenderResponse, BlenderError> {
        let haystack = format!("{}\n{}", req.system_prompt, req.user_prompt);
        let hit = self
            .rules
            .iter()
            .find(|r| r.contains.iter().all(|frag| haystack.contains(frag.as_str())))
            .map(|r| r.answer.as_str())
            .or(self.default.as_deref());
        match hit {
            Some(answer) => {
                Ok(BlenderResponse::unconstrained(answer.to_string(), req.prompt_chars()))
            }
            None => Err(BlenderError::NoMatch { key: "no rule matched".to_string() }),
        }
    }

    fn name(&self) -> &str {
        "rules"
    }
}

/// Answers with the constraint's most obvious member: first value-set entry,
/// a minimal regex witness, or fixed text.
#[derive(Debug, Clone)]
pub struct EchoBlender {
    pub default_text: String,
}

impl Default for EchoBlender {
    fn default() -> Self {
        EchoBlender { default_text: "echo".to_string() }
    }
}

impl Blender for EchoBlender {
    fn complete(&self, req: &BlenderRequest) -> Result<BlenderResponse, BlenderError> {
        let text = match &req.constraint {
            Constraint::ValueSet(options) if !options.is_empty() => options[0].clone(),
            Constraint::Regex(_) => "true;".to_string(),
            _ => self.default_text.clone(),
        };
        Ok(BlenderResponse::unconstrained(text, req.prompt_chars()))
    }

    fn name(&self) -> &str {
        "echo"
    }
}

/// Closure-backed blender for tests; counts calls.
pub struct FnBlender<F> {
    f: F,
    calls: AtomicUsize,
}

impl<F> FnBlender<F>
where
    F: Fn(&BlenderRequest) -> Result<String, BlenderError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        FnBlender { f, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> Blender for FnBlender<F>
where
    F: Fn(&BlenderRequest) -> Result<String, BlenderError> + Send + Sync,
{
    fn complete(&self, req: &BlenderRequest) -> Result<BlenderResponse, BlenderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.f)(req).map(|text| BlenderResponse::unconstrained(text, req.prompt_chars()))
    }

    fn name(&self) -> &str {
        "fn"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_replays_recorded_answer() {
        let mut blender = LookupBlender::new(true);
        blender.record("sys", "prompt P", "2019-20");
        let resp = blender.complete(&BlenderRequest::new("sys", "prompt P")).unwrap();
        assert_eq!(resp.text, "2019-20");
    }

    #[test]
    fn strict_lookup_errors_on_unseen_prompt() {
        let blender = LookupBlender::new(true);
        let err = blender.complete(&BlenderRequest::new("sys", "unseen")).unwrap_err();
        assert!(matches!(err, BlenderError::NoMatch { .. }));
    }

    #[test]
    fn lenient_lookup_falls_back_to_default() {
        let mut blender = LookupBlender::new(false);
        blender.set_default("fallback");
        let resp = blender.complete(&BlenderRequest::new("sys", "unseen")).unwrap();
        assert_eq!(resp.text, "fallback");
    }

    #[test]
    fn lookup_round_trips_through_json_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.json");
        let key = prompt_key("sys", "user");
        std::fs::write(&path, format!("{{\"{key}\": \"answer\"}}")).unwrap();
        let blender = LookupBlender::from_json_file(&path, true).unwrap();
        let resp = blender.complete(&BlenderRequest::new("sys", "user")).unwrap();
        assert_eq!(resp.text, "answer");
    }

    #[test]
    fn rules_fire_in_order() {
        let blender = RuleBlender::default()
            .rule(&["team event", "medley"], "true")
            .rule(&["team event"], "false");
        let hit =
            blender.complete(&BlenderRequest::new("s", "team event? value: medley relay")).unwrap();
        assert_eq!(hit.text, "true");
        let miss = blender.complete(&BlenderRequest::new("s", "team event? value: sprint")).unwrap();
        assert_eq!(miss.text, "false");
    }

    #[test]
    fn echo_returns_first_member() {
        let blender = EchoBlender::default();
        let req = BlenderRequest::new("s", "u").with_constraint(Constraint::ValueSet(vec![
            "alpha".to_string(),
            "beta".to_string(),
        ]));
        assert_eq!(blender.complete(&req).unwrap().text, "alpha");
    }

    #[test]
    fn prompt_key_is_stable_and_injective_on_boundary() {
        assert_eq!(prompt_key("a", "b"), prompt_key("a", "b"));
        // The separator keeps ("ab","") distinct from ("a","b").
        assert_ne!(prompt_key("ab", ""), prompt_key("a", "b"));
        assert_eq!(prompt_key("a", "b").len(), 64);
    }
}
