use std::collections::BTreeSet;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Region, RuleHit, Severity, Unit};

const DEFAULT_RULES: &str = include_str!("../../data/rules.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    #[default]
    Regex,
    Literal,
}

/// One entry of a rule pack file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub rule_id: String,
    pub pattern: String,
    #[serde(default)]
    pub kind: PatternKind,
    pub weight: f64,
    /// Issue type reported when the rule fires, e.g. `security/format-string`.
    pub category: String,
    #[serde(default = "default_severity")]
    pub severity: Severity,
}

fn default_severity() -> Severity {
    Severity::Medium
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub spec: RuleSpec,
    pub weight: Unit,
    regex: Regex,
}

impl Rule {
    pub fn compile(spec: RuleSpec) -> Result<Rule> {
        let weight = Unit::new(spec.weight).map_err(|_| {
            Error::InvalidConfig(format!("rule {} weight {} is outside [0, 1]", spec.rule_id, spec.weight))
        })?;
        let source = match spec.kind {
            PatternKind::Regex => spec.pattern.clone(),
            PatternKind::Literal => regex::escape(&spec.pattern),
        };
        let regex = Regex::new(&source).map_err(|e| Error::Pattern {
            rule: spec.rule_id.clone(),
            source: e,
        })?;
        Ok(Rule { spec, weight, regex })
    }

    pub fn is_match(&self, line: &str) -> bool {
        self.regex.is_match(line)
    }

    pub fn id(&self) -> &str {
        &self.spec.rule_id
    }
}

/// A compiled, nonempty set of rules.
#[derive(Debug, Clone)]
pub struct RulePack {
    rules: Vec<Rule>,
}

impl RulePack {
    pub fn new(specs: Vec<RuleSpec>) -> Result<RulePack> {
        if specs.is_empty() {
            return Err(Error::InvalidConfig("rule pack is empty".into()));
        }
        let mut seen = BTreeSet::new();
        let mut rules = Vec::with_capacity(specs.len());
        for spec in specs {
            if !seen.insert(spec.rule_id.clone()) {
                return Err(Error::InvalidConfig(format!("duplicate rule id {}", spec.rule_id)));
            }
            rules.push(Rule::compile(spec)?);
        }
        Ok(RulePack { rules })
    }

    pub fn from_json(text: &str) -> Result<RulePack> {
        RulePack::new(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<RulePack> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RulePack::from_json(&text)
    }

    /// The rule pack shipped with the crate.
    pub fn builtin() -> RulePack {
        RulePack::from_json(DEFAULT_RULES).expect("built-in rule pack is valid")
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn get(&self, rule_id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id() == rule_id)
    }
}

/// Runs every rule over the region's current lines. Returns the clamped sum
/// of the weights of distinct matched rules and one hit per (rule, line).
pub fn static_signal(region: &Region, pack: &RulePack) -> (Unit, Vec<RuleHit>) {
    let mut hits = Vec::new();
    let mut matched = BTreeSet::new();
    let mut total = 0.0;
    for (line_no, line) in region.numbered_lines() {
        let code = strip_line_comment(line);
        if code.trim().is_empty() {
            continue;
        }
        for (i, rule) in pack.rules.iter().enumerate() {
            if rule.is_match(code) {
                if matched.insert(i) {
                    total += rule.weight.get();
                }
                hits.push(RuleHit {
                    rule_id: rule.id().to_string(),
                    line: line_no,
                    excerpt: line.trim().to_string(),
                });
            }
        }
    }
    (Unit::saturating(total), hits)
}

/// Drops a trailing `//` comment unless it sits inside a string literal.
fn strip_line_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    let mut in_str = None;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match in_str {
            Some(q) => {
                if b == b'\\' {
                    i += 1;
                } else if b == q {
                    in_str = None;
                }
            }
            None => {
                if b == b'"' || b == b'\'' {
                    in_str = Some(b);
                } else if b == b'/' && bytes.get(i + 1) == Some(&b'/') {
                    return &line[..i];
                }
            }
        }
        i += 1;
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RegionKind, SourceLocation};

    fn region(text: &str) -> Region {
        let n = text.lines().count().max(1) as u32;
        Region::new("r", RegionKind::Function, SourceLocation::new("f.c", 1, n).unwrap(), text).unwrap()
    }

    fn spec(id: &str, pattern: &str, weight: f64) -> RuleSpec {
        RuleSpec {
            rule_id: id.into(),
            pattern: pattern.into(),
            kind: PatternKind::Literal,
            weight,
            category: "security/test".into(),
            severity: Severity::High,
        }
    }

    #[test]
    fn builtin_pack_loads() {
        let pack = RulePack::builtin();
        assert!(pack.rules().len() >= 25);
    }

    #[test]
    fn no_match_is_zero() {
        let (s, hits) = static_signal(&region("return 0;"), &RulePack::builtin());
        assert_eq!(s, Unit::ZERO);
        assert!(hits.is_empty());
    }

    #[test]
    fn single_rule_weight() {
        let pack = RulePack::new(vec![spec("cpy", "strcpy(", 0.6)]).unwrap();
        let (s, hits) = static_signal(&region("int x;\nstrcpy(dst, src);\n"), &pack);
        assert_eq!(s.get(), 0.6);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].line, 2);
    }

    #[test]
    fn sum_is_clamped() {
        let pack = RulePack::new(vec![spec("a", "strcpy(", 0.6), spec("b", "gets(", 0.7)]).unwrap();
        let (s, _) = static_signal(&region("strcpy(d, s);\ngets(b);\n"), &pack);
        assert_eq!(s, Unit::ONE);
    }

    #[test]
    fn repeated_rule_counts_once() {
        let pack = RulePack::new(vec![spec("a", "strcpy(", 0.3)]).unwrap();
        let (s, hits) = static_signal(&region("strcpy(a, b);\nstrcpy(c, d);\n"), &pack);
        assert_eq!(s.get(), 0.3);
        assert_eq!(hits.len(), 2);
    }

    #[test]
    fn comments_do_not_fire() {
        let pack = RulePack::builtin();
        let (s, _) = static_signal(&region("x = 1; // never call gets(buf) here\n"), &pack);
        assert_eq!(s, Unit::ZERO);
    }

    #[test]
    fn bad_rules_rejected() {
        assert!(RulePack::new(vec![]).is_err());
        assert!(RulePack::new(vec![spec("a", "x", 1.5)]).is_err());
        let mut bad = spec("a", "(", 0.5);
        bad.kind = PatternKind::Regex;
        assert!(matches!(RulePack::new(vec![bad]), Err(Error::Pattern { .. })));
    }

    #[test]
    fn builtin_rules_fire_on_typical_sinks() {
        let pack = RulePack::builtin();
        for (code, id) in [
            ("gets(buf);", "C001"),
            ("strcpy(dst, src);", "C002"),
            ("printf(msg);", "C010"),
            ("system(cmd);", "C013"),
            ("p = malloc(n * size);", "C016"),
        ] {
            let (_, hits) = static_signal(&region(code), &pack);
            assert!(hits.iter().any(|h| h.rule_id == id), "{code} should hit {id}");
        }
        let (_, hits) = static_signal(&region("printf(\"%s\\n\", msg);"), &pack);
        assert!(hits.iter().all(|h| h.rule_id != "C010"));
    }
}
