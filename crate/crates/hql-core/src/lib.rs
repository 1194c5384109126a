//! Hybrid query engine: a SQLite superset where model-backed functions
//! (`{{LLMMap(...)}}`, `{{LLMQA(...)}}`, `{{LLMJoin(...)}}`,
//! `{{LLMValidate(...)}}`) run inside queries over structured tables and
//! a BM25-indexed `documents` table. A predicate push-down planner keeps
//! the data each model call sees to the minimum the query requires.

pub mod blender;
pub mod context;
pub mod error;
pub mod ingredients;
pub mod parser;
pub mod planner;
pub mod storage;
#[cfg(test)]
pub(crate) mod testutil;
pub mod value;

pub use error::{BlenderError, ExecError, PlanError, StorageError, SyntaxError};
pub use value::Value;
