//! Counter-evidence: unreachable lines, constant sink arguments and values
//! that pass through a sanitiser first.

use std::collections::{BTreeMap, BTreeSet};

use once_cell::sync::Lazy;
use regex::Regex;

use super::cparse::{array_sizes, find_calls, is_numeric, literal_len, string_literal, variables};
use super::logic::lines;
use super::tables::{DeadBranchTable, SinkKind, TaintTable};
use super::{AgentInput, CounterClaim, FindingKey};
use crate::model::{Region, Unit};

pub const DEAD_STRENGTH: f64 = 0.8;
pub const CONSTANT_STRENGTH: f64 = 0.8;
pub const SANITIZED_STRENGTH: f64 = 0.6;
pub const FACT_SANITIZER: &str = "sanitizer:";

static LABEL: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*$").unwrap());
static RETURN_STMT: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\s*return\b[^;]*;\s*$").unwrap());
static PP_IF: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\s*#\s*if").unwrap());
static PP_END: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\s*#\s*(endif|else|elif)\b").unwrap());
static VALIDATOR_CALLS: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"\b(?:isalnum|isalpha|isdigit|isprint|strpbrk|strspn|strcspn|strchr)\s*\(").unwrap());
static REJECT: Lazy<Regex> = Lazy::new(|| Regex::new(r"\breturn\s+(?:0|-1|false|NULL)\s*;").unwrap());

/// Lines of `region` that can never execute.
pub fn dead_lines(region: &Region, table: &DeadBranchTable) -> BTreeSet<u32> {
    let rows = lines(region);
    let mut dead = BTreeSet::new();
    let mut i = 0;
    while i < rows.len() {
        let (no, code, depth, depth_after) = &rows[i];
        if table.preprocessor.iter().any(|r| r.is_match(code)) {
            dead.insert(*no);
            let mut nest = 0;
            let mut j = i + 1;
            while j < rows.len() {
                let c = &rows[j].1;
                if PP_IF.is_match(c) {
                    nest += 1;
                } else if PP_END.is_match(c) {
                    if nest == 0 {
                        break;
                    }
                    if c.contains("endif") {
                        nest -= 1;
                    }
                }
                dead.insert(rows[j].0);
                j += 1;
            }
            i = j;
            continue;
        }
        if table.branches.iter().any(|r| r.is_match(code)) {
            dead.insert(*no);
            if depth_after > depth {
                let mut j = i + 1;
                while j < rows.len() {
                    let (n, c, d, _) = &rows[j];
                    if *d <= *depth || (c.trim_start().starts_with('}') && *d == depth + 1) {
                        break;
                    }
                    dead.insert(*n);
                    j += 1;
                }
                i = j;
                continue;
            } else if let Some(next) = rows.get(i + 1) {
                dead.insert(next.0);
            }
        }
        // the rest of the block after an unconditional return
        if table.post_return && RETURN_STMT.is_match(code) && !guarded(&rows, i) {
            let at = *depth;
            let mut j = i + 1;
            while j < rows.len() {
                let (n, c, d, _) = &rows[j];
                let t = c.trim_start();
                let is_label = LABEL.is_match(c) || t.starts_with("case ") || t.starts_with("default");
                if is_label || *d < at || (t.starts_with('}') && *d == at) {
                    break;
                }
                if !c.trim().is_empty() {
                    dead.insert(*n);
                }
                j += 1;
            }
            i = j;
            continue;
        }
        i += 1;
    }
    dead
}

/// A return that is the body of an unbraced `if`/`else`/loop.
fn guarded(rows: &[(u32, String, i32, i32)], i: usize) -> bool {
    let prev = rows[..i].iter().rev().map(|r| r.1.trim()).find(|c| !c.is_empty());
    match prev {
        Some(p) => p.ends_with(')') || p == "else" || p.ends_with("else"),
        None => false,
    }
}

/// Explanation when every data argument of the sink on `code` is a
/// compile-time constant that fits its destination.
pub fn constant_sink(code: &str, sizes: &BTreeMap<String, usize>, table: &TaintTable) -> Option<String> {
    for call in find_calls(code) {
        let Some(sink) = table.sink(&call.name) else { continue };
        let args = &call.args;
        let data: Vec<&String> = sink.args.iter().filter_map(|&i| args.get(i)).collect();
        let safe = match sink.kind {
            SinkKind::Copy => {
                !data.is_empty()
                    && data.iter().all(|a| string_literal(a).is_some() || is_numeric(a))
                    && fits(args.first(), &data, sizes)
                    && args
                        .get(1)
                        .is_none_or(|f| call.name != "sprintf" || string_literal(f).is_some())
            }
            SinkKind::Length => {
                let src_lit = args.get(1).and_then(|a| string_literal(a));
                let len_ok = args.get(2).is_some_and(|n| is_numeric(n));
                src_lit.is_some() && len_ok && fits(args.first(), &[], sizes)
            }
            SinkKind::Format | SinkKind::Command => !data.is_empty() && data.iter().all(|a| string_literal(a).is_some()),
            SinkKind::Alloc => data.iter().all(|a| variables(&strip_sizeof(a)).is_empty()),
        };
        if safe {
            let shown: Vec<&str> = data.iter().map(|a| a.as_str()).collect();
            return Some(format!("{}() only receives constants ({})", call.name, shown.join(", ")));
        }
    }
    None
}

fn strip_sizeof(expr: &str) -> String {
    static SIZEOF: Lazy<Regex> = Lazy::new(|| Regex::new(r"sizeof\s*\([^)]*\)").unwrap());
    SIZEOF.replace_all(expr, "1").into_owned()
}

/// Whether constant data of the given literal lengths fits the destination.
fn fits(dest: Option<&String>, data: &[&String], sizes: &BTreeMap<String, usize>) -> bool {
    let Some(dest) = dest.and_then(|d| variables(d).into_iter().next()) else { return true };
    let Some(&cap) = sizes.get(&dest) else { return true };
    let need: usize = data.iter().filter_map(|a| string_literal(a)).map(|l| literal_len(&l)).sum::<usize>() + 1;
    need <= cap
}

/// Function bodies in the bundle that reject input character by character.
pub fn looks_like_validator(body: &str) -> bool {
    VALIDATOR_CALLS.is_match(body) && REJECT.is_match(body)
}

/// Sanitiser applied to a variable of `code` on an earlier line, if any.
fn sanitized_by(
    code: &str,
    earlier: &[&str],
    is_sanitizer: &dyn Fn(&str) -> bool,
) -> Option<String> {
    let vars: BTreeSet<String> = find_calls(code)
        .iter()
        .flat_map(|c| c.args.iter().flat_map(|a| variables(a)))
        .collect();
    for line in earlier {
        for call in find_calls(line) {
            if is_sanitizer(&call.name) && call.args.iter().any(|a| variables(a).iter().any(|v| vars.contains(v))) {
                return Some(call.name);
            }
        }
    }
    None
}

/// Counter-claims against the analysts' findings plus newly learned facts.
pub fn analyse(input: &AgentInput<'_>, dead: &DeadBranchTable, taint: &TaintTable) -> (Vec<CounterClaim>, Vec<String>) {
    let region = input.region;
    let dead_set = dead_lines(region, dead);
    let rows = lines(region);
    let code_at: BTreeMap<u32, &str> = rows.iter().map(|(n, c, _, _)| (*n, c.as_str())).collect();
    let sizes = array_sizes(&region.code());

    let mut facts = Vec::new();
    let mut learned: BTreeSet<String> = input
        .facts
        .iter()
        .filter_map(|f| f.strip_prefix(FACT_SANITIZER))
        .map(str::to_string)
        .collect();
    for (name, body) in input.bundle.functions() {
        if looks_like_validator(body) && !taint.is_sanitizer(name) && learned.insert(name.to_string()) {
            facts.push(format!("{FACT_SANITIZER}{name}"));
        }
    }
    let is_sanitizer = |name: &str| taint.is_sanitizer(name) || learned.contains(name);

    let mut claims = Vec::new();
    for f in input.findings.iter().filter(|f| f.location.file == region.location.file) {
        let key = FindingKey::of(f);
        let span = f.location.line_start..=f.location.line_end;
        let claim = if let Some(line) = span.clone().find(|l| dead_set.contains(l)) {
            Some((format!("line {line} is unreachable"), DEAD_STRENGTH))
        } else if let Some(why) = span.clone().filter_map(|l| code_at.get(&l)).find_map(|c| constant_sink(c, &sizes, taint)) {
            Some((why, CONSTANT_STRENGTH))
        } else {
            let flagged: Vec<&str> = span.clone().filter_map(|l| code_at.get(&l).copied()).collect();
            let earlier: Vec<&str> = rows
                .iter()
                .filter(|(n, ..)| *n < f.location.line_start)
                .map(|(_, c, ..)| c.as_str())
                .collect();
            flagged
                .iter()
                .find_map(|c| sanitized_by(c, &earlier, &is_sanitizer))
                .map(|name| (format!("the value passes through {name}() first"), SANITIZED_STRENGTH))
        };
        if let Some((rebuttal, strength)) = claim {
            claims.push(CounterClaim {
                target: key,
                rebuttal,
                strength: Unit::saturating(strength),
            });
        }
    }
    (claims, facts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{ContextBundle, ContextItem, ContextKind};
    use crate::model::{Finding, RegionKind, Severity, SourceLocation};

    fn function(text: &str) -> Region {
        let n = text.lines().count() as u32;
        Region::new("r#fn", RegionKind::Function, SourceLocation::new("f.c", 1, n).unwrap(), text).unwrap()
    }

    fn finding(line: u32) -> Finding {
        Finding {
            issue_type: "security/buffer-overflow".into(),
            location: SourceLocation::line("f.c", line).unwrap(),
            evidence_summary: String::new(),
            confidence: Unit::new(0.8).unwrap(),
            severity: Severity::High,
            remediation: None,
            error_tag: None,
        }
    }

    fn claims(text: &str, line: u32) -> Vec<CounterClaim> {
        let region = function(text);
        let bundle = ContextBundle::empty("r#fn", 100);
        let findings = [finding(line)];
        let input = AgentInput {
            region: &region,
            bundle: &bundle,
            findings: &findings,
            facts: &[],
        };
        analyse(&input, &DeadBranchTable::builtin(), &TaintTable::builtin()).0
    }

    #[test]
    fn dead_branch_claim() {
        let text = "void f(char *s) {\n  char b[4];\n  if (0) {\n    strcpy(b, s);\n  }\n}\n";
        let c = claims(text, 4);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].strength.get(), 0.8);
        assert!(claims("void f(char *s) {\n  char b[4];\n  if (s) {\n    strcpy(b, s);\n  }\n}\n", 4).is_empty());
    }

    #[test]
    fn dead_region_shapes() {
        let t = DeadBranchTable::builtin();
        let r = function("int f(int x) {\n  if (0) {\n    a();\n  } else {\n    b();\n  }\n  return x;\n  c();\nout:\n  d();\n}\n");
        let dead = dead_lines(&r, &t);
        assert!(dead.contains(&3));
        assert!(!dead.contains(&5));
        assert!(dead.contains(&8));
        assert!(!dead.contains(&10));
        let r = function("int f(int x) {\n#if 0\n  a();\n#endif\n  if (x)\n    return 1;\n  b();\n}\n");
        let dead = dead_lines(&r, &t);
        assert!(dead.contains(&3));
        assert!(!dead.contains(&7));
    }

    #[test]
    fn code_after_return_in_any_block() {
        let t = DeadBranchTable::builtin();
        let r = function("int f(int x) {\n  switch (x) {\n  case 1:\n    return 1;\n    a();\n  case 2:\n    b();\n  }\n  if (x) {\n    return 2;\n    c();\n  }\n  d();\n}\n");
        let dead = dead_lines(&r, &t);
        assert_eq!(dead.into_iter().collect::<Vec<_>>(), [5, 11]);
        let hunk = Region::new(
            "h",
            RegionKind::Hunk,
            SourceLocation::new("f.c", 5, 9).unwrap(),
            " int f(char *s)\n {\n     return 0;\n+    strcpy(b, s);\n }\n",
        )
        .unwrap();
        assert!(dead_lines(&hunk, &t).contains(&8));
    }

    #[test]
    fn constant_argument_claim() {
        let c = claims("void f(void) {\n  char b[8];\n  strcpy(b, \"hello\");\n}\n", 3);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].strength.get(), 0.8);
        // the literal does not fit, so no rebuttal
        assert!(claims("void f(void) {\n  char b[4];\n  strcpy(b, \"too long\");\n}\n", 3).is_empty());
    }

    #[test]
    fn sanitizer_claim_and_learned_fact() {
        let c = claims("void f(char *s) {\n  char b[8];\n  sanitize_input(s);\n  strcpy(b, s);\n}\n", 4);
        assert_eq!(c[0].strength.get(), 0.6);

        let region = function("void f(char *s) {\n  char b[8];\n  if (!name_ok(s)) return;\n  strcpy(b, s);\n}\n");
        let mut bundle = ContextBundle::empty("r#fn", 100);
        bundle.items.push(ContextItem {
            kind: ContextKind::Callee,
            path: "v.c".into(),
            location: None,
            symbol: Some("name_ok".into()),
            text: "int name_ok(const char *s) {\n  for (; *s; s++)\n    if (!isalnum(*s)) return 0;\n  return 1;\n}\n".into(),
            rel: Unit::HALF,
            token_cost: 1,
            truncated: false,
        });
        let findings = [finding(4)];
        let input = AgentInput {
            region: &region,
            bundle: &bundle,
            findings: &findings,
            facts: &[],
        };
        let (c, facts) = analyse(&input, &DeadBranchTable::builtin(), &TaintTable::builtin());
        assert_eq!(facts, ["sanitizer:name_ok"]);
        assert_eq!(c.len(), 1);

        // a later case knows the fact without the helper in its bundle
        let empty = ContextBundle::empty("r#fn", 100);
        let facts = vec!["sanitizer:name_ok".to_string()];
        let input = AgentInput {
            region: &region,
            bundle: &empty,
            findings: &findings,
            facts: &facts,
        };
        let (c, new) = analyse(&input, &DeadBranchTable::builtin(), &TaintTable::builtin());
        assert_eq!(c.len(), 1);
        assert!(new.is_empty());
    }
}
