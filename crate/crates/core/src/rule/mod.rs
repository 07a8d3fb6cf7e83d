//! Trigger rule language.
//!
//! A rule is either a leaf `count:type`, meaning "`count` events of `type`",
//! or a binary condition `AND(rule,rule)` / `OR(rule,rule)`:
//!
//! ```text
//! <rule>      ::= <count> ":" <type> | <condition> "(" <rule> "," <rule> ")"
//! <condition> ::= "AND" | "OR"
//! <count>     ::= [0-9]+
//! <type>      ::= [a-zA-Z]+
//! ```
//!
//! Whitespace between tokens is ignored. Rules are evaluated in disjunctive
//! form: [`normalize`] flattens the tree into an ordered list of cases, each
//! case a mapping from event type to required count.

mod normalize;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::normalize;
pub use parse::parse;

/// Largest count a leaf may demand.
pub const MAX_COUNT: u32 = 1_000_000;

/// Largest number of disjunctive cases a rule may expand into.
pub const MAX_CASES: usize = 1024;

/// Deepest condition nesting the parser accepts.
pub const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    And,
    Or,
}

impl Condition {
    pub fn keyword(self) -> &'static str {
        match self {
            Condition::And => "AND",
            Condition::Or => "OR",
        }
    }
}

/// Parse tree of a trigger rule.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RuleAst {
    Leaf { count: u32, event_type: String },
    Node {
        condition: Condition,
        left: Box<RuleAst>,
        right: Box<RuleAst>,
    },
}

impl RuleAst {
    pub fn leaf(count: u32, event_type: impl Into<String>) -> Self {
        RuleAst::Leaf {
            count,
            event_type: event_type.into(),
        }
    }

    pub fn and(left: RuleAst, right: RuleAst) -> Self {
        RuleAst::Node {
            condition: Condition::And,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn or(left: RuleAst, right: RuleAst) -> Self {
        RuleAst::Node {
            condition: Condition::Or,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Canonical whitespace-free text of the rule.
    pub fn render(&self) -> String {
        self.to_string()
    }

    pub fn depth(&self) -> usize {
        match self {
            RuleAst::Leaf { .. } => 1,
            RuleAst::Node { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Distinct event types mentioned anywhere in the rule.
    pub fn event_types(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_types(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_types(&self, out: &mut Vec<String>) {
        match self {
            RuleAst::Leaf { event_type, .. } => out.push(event_type.clone()),
            RuleAst::Node { left, right, .. } => {
                left.collect_types(out);
                right.collect_types(out);
            }
        }
    }
}

impl fmt::Display for RuleAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleAst::Leaf { count, event_type } => write!(f, "{count}:{event_type}"),
            RuleAst::Node {
                condition,
                left,
                right,
            } => write!(f, "{}({left},{right})", condition.keyword()),
        }
    }
}

/// Renders `ast` as canonical text. `parse(&render(a))` is structurally `a`.
pub fn render(ast: &RuleAst) -> String {
    ast.render()
}

/// One conjunction of the rule's disjunctive form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CaseRequirement {
    pub case_index: usize,
    pub requirements: BTreeMap<String, u32>,
}

impl CaseRequirement {
    /// Whether `available` (event type to count) covers every requirement.
    pub fn satisfied_by<F>(&self, mut available: F) -> bool
    where
        F: FnMut(&str) -> usize,
    {
        self.requirements
            .iter()
            .all(|(t, &n)| available(t) >= n as usize)
    }
}

/// A rule flattened into ordered, deduplicated disjunctive cases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NormalizedRule {
    pub source_text: String,
    pub cases: Vec<CaseRequirement>,
}

impl NormalizedRule {
    /// Parses and normalizes rule text in one step.
    pub fn compile(text: &str) -> Result<Self, RuleError> {
        let ast = parse(text)?;
        let mut rule = normalize(&ast)?;
        rule.source_text = text.to_string();
        Ok(rule)
    }

    /// Event types appearing in any case, sorted.
    pub fn event_types(&self) -> Vec<String> {
        let mut types: Vec<String> = self
            .cases
            .iter()
            .flat_map(|c| c.requirements.keys().cloned())
            .collect();
        types.sort();
        types.dedup();
        types
    }

    /// Index of the first case satisfied by `available`, if any.
    pub fn first_satisfied<F>(&self, mut available: F) -> Option<usize>
    where
        F: FnMut(&str) -> usize,
    {
        self.cases
            .iter()
            .find(|c| c.satisfied_by(&mut available))
            .map(|c| c.case_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("syntax error at offset {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("rule expands into more than {max} cases")]
    CaseExplosion { max: usize },
}

impl RuleError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            RuleError::Syntax { offset, .. } => Some(*offset),
            RuleError::CaseExplosion { .. } => None,
        }
    }
}

/// Whether `s` is a valid event type name (`[a-zA-Z]+`).
pub fn is_valid_event_type(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphabetic())
}
