//! Data tables for the rule-based agents.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Severity;

const DEFAULT_TAINT: &str = include_str!("../../data/taint.json");
const DEFAULT_DEAD: &str = include_str!("../../data/dead_branches.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    /// Arguments the call fills with untrusted data.
    #[serde(default)]
    pub tainted_args: Vec<usize>,
    /// The return value is untrusted.
    #[serde(default)]
    pub returns: bool,
    /// The return value is untrusted when an argument is.
    #[serde(default)]
    pub returns_if_tainted: bool,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SinkKind {
    /// Copies an argument into the destination without a length.
    Copy,
    /// Copies with an explicit length argument.
    Length,
    Format,
    Command,
    Alloc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkSpec {
    pub name: String,
    pub args: Vec<usize>,
    pub issue_type: String,
    pub severity: Severity,
    pub kind: SinkKind,
    /// Argument that receives the data, if the call copies.
    #[serde(default)]
    pub propagates_to: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnboundedSpec {
    pub name: String,
    pub issue_type: String,
    pub severity: Severity,
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaintFile {
    sources: Vec<SourceSpec>,
    source_variables: Vec<String>,
    parameter_confidence: f64,
    caller_confirmed_confidence: f64,
    helper_confidence: f64,
    unbounded: Vec<UnboundedSpec>,
    sinks: Vec<SinkSpec>,
    sanitizers: Vec<String>,
}

/// Sources, sinks and sanitizers for the source-to-sink matcher.
#[derive(Debug, Clone)]
pub struct TaintTable {
    pub sources: Vec<SourceSpec>,
    pub source_variables: Vec<String>,
    pub parameter_confidence: f64,
    pub caller_confirmed_confidence: f64,
    pub helper_confidence: f64,
    pub unbounded: Vec<UnboundedSpec>,
    pub sinks: Vec<SinkSpec>,
    sanitizers: Vec<Regex>,
}

impl TaintTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: TaintFile = serde_json::from_str(text)?;
        let sanitizers = f
            .sanitizers
            .iter()
            .map(|p| {
                Regex::new(p).map_err(|e| Error::Pattern {
                    rule: format!("sanitizer {p}"),
                    source: e,
                })
            })
            .collect::<Result<_>>()?;
        for c in [f.parameter_confidence, f.caller_confirmed_confidence, f.helper_confidence] {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidConfig(format!("taint confidence {c} outside [0, 1]")));
            }
        }
        Ok(TaintTable {
            sources: f.sources,
            source_variables: f.source_variables,
            parameter_confidence: f.parameter_confidence,
            caller_confirmed_confidence: f.caller_confirmed_confidence,
            helper_confidence: f.helper_confidence,
            unbounded: f.unbounded,
            sinks: f.sinks,
            sanitizers,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TaintTable::from_json(&text)
    }

    pub fn builtin() -> Self {
        TaintTable::from_json(DEFAULT_TAINT).expect("built-in taint table is valid")
    }

    pub fn source(&self, name: &str) -> Option<&SourceSpec> {
        self.sources.iter().find(|s| s.name == name)
    }

    pub fn sink(&self, name: &str) -> Option<&SinkSpec> {
        self.sinks.iter().find(|s| s.name == name)
    }

    pub fn unbounded(&self, name: &str) -> Option<&UnboundedSpec> {
        self.unbounded.iter().find(|s| s.name == name)
    }

    pub fn is_sanitizer(&self, name: &str) -> bool {
        self.sanitizers.iter().any(|r| r.is_match(name))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeadFile {
    branch_patterns: Vec<String>,
    preprocessor_patterns: Vec<String>,
    post_return: bool,
}

/// Patterns that open a branch which can never execute.
#[derive(Debug, Clone)]
pub struct DeadBranchTable {
    pub branches: Vec<Regex>,
    pub preprocessor: Vec<Regex>,
    pub post_return: bool,
}

impl DeadBranchTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: DeadFile = serde_json::from_str(text)?;
        let compile = |ps: &[String]| -> Result<Vec<Regex>> {
            ps.iter()
                .map(|p| {
                    Regex::new(p).map_err(|e| Error::Pattern {
                        rule: format!("dead branch {p}"),
                        source: e,
                    })
                })
                .collect()
        };
        Ok(DeadBranchTable {
            branches: compile(&f.branch_patterns)?,
            preprocessor: compile(&f.preprocessor_patterns)?,
            post_return: f.post_return,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DeadBranchTable::from_json(&text)
    }

    pub fn builtin() -> Self {
        DeadBranchTable::from_json(DEFAULT_DEAD).expect("built-in dead-branch table is valid")
    }
}
