//! Harness templates keyed by issue type.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{ArtefactKind, ExpectedSignal};
use crate::agents::cparse::{array_sizes, find_calls, literal_len, root_variable, string_literal, variables};
use crate::agents::sceptic::constant_sink;
use crate::agents::tables::TaintTable;
use crate::error::{Error, Result};
use crate::model::{Finding, Region};

/// Size assumed for a destination whose declaration is out of view.
pub const DEFAULT_DEST_SIZE: usize = 16;
const OVERSIZE: usize = 32;

/// How a template's placeholders are derived from the flagged construct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputStrategy {
    /// Write well past the destination.
    Oversized,
    /// Write one element past the destination.
    Boundary,
    Format,
    Command,
    Multiply,
    None,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSpec {
    pub issue_type: String,
    pub template: String,
    pub artefact_kind: ArtefactKind,
    pub expected_signal: ExpectedSignal,
    pub input: InputStrategy,
}

#[derive(Debug, Clone)]
pub struct TemplateTable {
    specs: BTreeMap<String, (TemplateSpec, String)>,
}

const BUILTIN_TABLE: &str = include_str!("../../data/verify/templates.json");
const BUILTIN_SOURCES: &[(&str, &str)] = &[
    ("canary_write.c", include_str!("../../data/verify/canary_write.c")),
    ("format_probe.c", include_str!("../../data/verify/format_probe.c")),
    ("command_probe.c", include_str!("../../data/verify/command_probe.c")),
    ("size_mul.c", include_str!("../../data/verify/size_mul.c")),
    ("double_free.c", include_str!("../../data/verify/double_free.c")),
];

impl TemplateTable {
    fn from_parts(specs: Vec<TemplateSpec>, source: impl Fn(&str) -> Result<String>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for spec in specs {
            let text = source(&spec.template)?;
            if map.insert(spec.issue_type.clone(), (spec, text)).is_some() {
                return Err(Error::InvalidConfig("duplicate issue_type in template table".into()));
            }
        }
        Ok(TemplateTable { specs: map })
    }

    pub fn builtin() -> Self {
        let specs: Vec<TemplateSpec> = serde_json::from_str(BUILTIN_TABLE).expect("builtin template table parses");
        Self::from_parts(specs, |name| {
            BUILTIN_SOURCES
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, s)| s.to_string())
                .ok_or_else(|| Error::InvalidConfig(format!("unknown builtin template {name}")))
        })
        .expect("builtin templates are consistent")
    }

    /// Loads `templates.json` and the harness files it names from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let table = dir.join("templates.json");
        let text = std::fs::read_to_string(&table).map_err(|e| Error::io(&table, e))?;
        let specs: Vec<TemplateSpec> = serde_json::from_str(&text)?;
        Self::from_parts(specs, |name| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
        })
    }

    pub fn get(&self, issue_type: &str) -> Option<&TemplateSpec> {
        self.specs.get(issue_type).map(|(s, _)| s)
    }

    /// Harness source for `finding`, or `None` when no template matches.
    pub fn instantiate(&self, finding: &Finding, region: &Region, taint: &TaintTable) -> Option<(&TemplateSpec, String)> {
        let (spec, text) = self.specs.get(&finding.issue_type)?;
        let params = parameters(spec.input, finding, region, taint);
        let mut out = text.clone();
        for (k, v) in params {
            out = out.replace(&format!("{{{{{k}}}}}"), &v);
        }
        Some((spec, out))
    }
}

fn c_literal(s: &str) -> String {
    format!("{s:?}")
}

/// Placeholder values for the flagged line. Constant sink arguments give the
/// harness the same constant input, so an impossible overflow is not staged.
fn parameters(strategy: InputStrategy, finding: &Finding, region: &Region, taint: &TaintTable) -> Vec<(&'static str, String)> {
    let code = region.code();
    let sizes = array_sizes(&code);
    let line = region
        .numbered_lines()
        .find(|(n, _)| *n == finding.location.line_start)
        .map(|(_, l)| l.to_string())
        .unwrap_or_default();
    let constant = constant_sink(&line, &sizes, taint).is_some();
    let calls = find_calls(&line);

    match strategy {
        InputStrategy::Oversized | InputStrategy::Boundary => {
            let dest = calls
                .iter()
                .find_map(|c| c.args.first().and_then(|a| root_variable(a)))
                .or_else(|| line.split('[').next().and_then(|l| variables(l).pop()));
            let dest_size = dest.and_then(|d| sizes.get(&d).copied()).unwrap_or(DEFAULT_DEST_SIZE);
            let write_len = if constant {
                calls
                    .iter()
                    .flat_map(|c| c.args.iter().skip(1))
                    .filter_map(|a| string_literal(a))
                    .map(|l| literal_len(&l))
                    .sum::<usize>()
                    + 1
            } else if strategy == InputStrategy::Oversized {
                dest_size + OVERSIZE
            } else {
                dest_size + 1
            };
            vec![("DEST_SIZE", dest_size.to_string()), ("WRITE_LEN", write_len.to_string())]
        }
        InputStrategy::Format => {
            let input = if constant { "constant" } else { "%%" };
            vec![("INPUT", c_literal(input))]
        }
        InputStrategy::Command => {
            let input = if constant { "x" } else { "x; echo VULNAUDIT_CRASH >&2; true" };
            vec![("INPUT", c_literal(input))]
        }
        InputStrategy::Multiply => {
            let n = if constant { 1 } else { 65537 };
            vec![("COUNT", n.to_string()), ("SIZE", n.to_string())]
        }
        InputStrategy::None => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RegionKind, Severity, SourceLocation, Unit};

    fn finding(issue: &str, line: u32) -> Finding {
        Finding {
            issue_type: issue.into(),
            location: SourceLocation::line("f.c", line).unwrap(),
            evidence_summary: String::new(),
            confidence: Unit::HALF,
            severity: Severity::High,
            remediation: None,
            error_tag: None,
        }
    }

    fn region(text: &str) -> Region {
        let n = text.lines().count() as u32;
        Region::new("r", RegionKind::Function, SourceLocation::new("f.c", 1, n).unwrap(), text).unwrap()
    }

    #[test]
    fn sizes_come_from_the_region() {
        let t = TemplateTable::builtin();
        let r = region("void f(char *s) {\n  char name[24];\n  strcpy(name, s);\n}\n");
        let (spec, src) = t.instantiate(&finding("security/buffer-overflow", 3), &r, &TaintTable::builtin()).unwrap();
        assert_eq!(spec.expected_signal, ExpectedSignal::CrashMarker);
        assert!(src.contains("char buf[24];"));
        assert!(src.contains("size_t n = 56;"));

        let r = region("void f(void) {\n  char name[24];\n  strcpy(name, \"abc\");\n}\n");
        let (_, src) = t.instantiate(&finding("security/buffer-overflow", 3), &r, &TaintTable::builtin()).unwrap();
        assert!(src.contains("size_t n = 4;"));
    }

    #[test]
    fn unknown_issue_has_no_template() {
        let t = TemplateTable::builtin();
        let r = region("void f(void) {\n  x();\n}\n");
        assert!(t.instantiate(&finding("logic/use-after-free", 2), &r, &TaintTable::builtin()).is_none());
        let (_, src) = t.instantiate(&finding("security/command-injection", 2), &r, &TaintTable::builtin()).unwrap();
        assert!(src.contains("VULNAUDIT_CRASH >&2"));
    }
}
