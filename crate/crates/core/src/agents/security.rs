//! Intra-procedural source-to-sink matcher with one-level helper summaries.

use std::collections::{BTreeMap, BTreeSet};

use super::cparse::{assignment, find_calls, parameters, root_variable, string_literal, strip_comment, variables};
use super::tables::{SinkKind, SinkSpec, TaintTable};
use super::finding_at;
use crate::context::{ContextBundle, ContextKind};
use crate::model::{Finding, Region, RegionKind, Severity};

#[derive(Debug, Clone, PartialEq)]
struct Taint {
    confidence: f64,
    origin: String,
}

/// A helper whose parameter reaches a sink.
#[derive(Debug, Clone, PartialEq)]
pub struct HelperSummary {
    pub name: String,
    pub param: usize,
    pub issue_type: String,
    pub severity: Severity,
    pub sink: String,
}

/// Raw hit produced by one pass of the matcher.
#[derive(Debug, Clone, PartialEq)]
struct Hit {
    line: u32,
    issue_type: String,
    severity: Severity,
    confidence: f64,
    evidence: String,
    sink: String,
}

struct Pass<'a> {
    table: &'a TaintTable,
    taint: BTreeMap<String, Taint>,
    /// Variables compared against a bound before use.
    bounded: BTreeSet<String>,
    /// Variables defined locally, which stops hunk free-variable fallback.
    defined: BTreeSet<String>,
    /// Treat variables never defined in the text as weak sources.
    free_vars_tainted: bool,
    helpers: &'a [HelperSummary],
    hits: Vec<Hit>,
}

impl<'a> Pass<'a> {
    fn new(table: &'a TaintTable, helpers: &'a [HelperSummary]) -> Self {
        let mut taint = BTreeMap::new();
        for v in &table.source_variables {
            taint.insert(
                v.clone(),
                Taint {
                    confidence: 0.9,
                    origin: format!("`{v}`"),
                },
            );
        }
        Pass {
            table,
            taint,
            bounded: BTreeSet::new(),
            defined: BTreeSet::new(),
            free_vars_tainted: false,
            helpers,
            hits: Vec::new(),
        }
    }

    fn taint_of_var(&self, v: &str) -> Option<Taint> {
        if let Some(t) = self.taint.get(v) {
            return Some(t.clone());
        }
        if self.free_vars_tainted && !self.defined.contains(v) {
            return Some(Taint {
                confidence: self.table.parameter_confidence,
                origin: format!("`{v}` from outside the hunk"),
            });
        }
        None
    }

    /// Strongest taint among the variables of `expr`.
    fn taint_of(&self, expr: &str) -> Option<Taint> {
        if string_literal(expr).is_some() {
            return None;
        }
        variables(expr)
            .iter()
            .filter_map(|v| self.taint_of_var(v))
            .max_by(|a, b| a.confidence.total_cmp(&b.confidence))
    }

    fn is_bounded(&self, expr: &str) -> bool {
        variables(expr).iter().any(|v| self.bounded.contains(v))
    }

    fn set_taint(&mut self, var: &str, t: Taint) {
        let keep = self.taint.get(var).is_some_and(|old| old.confidence >= t.confidence);
        if !keep {
            self.taint.insert(var.to_string(), t);
        }
    }

    fn line(&mut self, no: u32, raw: &str) {
        let line = strip_comment(raw);
        let trimmed = line.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            return;
        }
        if is_condition(trimmed) {
            if let Some(cond) = condition_text(trimmed) {
                if has_comparison(cond) {
                    self.bounded.extend(variables(cond));
                }
            }
        }

        for call in find_calls(line) {
            self.call(no, &call.name, &call.args);
        }

        if let Some((target, rhs)) = assignment(line) {
            let indexed = line.contains(&format!("{target}["));
            let rhs_calls = find_calls(&rhs);
            let mut new_taint = None;
            for c in &rhs_calls {
                if self.table.is_sanitizer(&c.name) {
                    self.taint.remove(&target);
                    self.defined.insert(target.clone());
                    return;
                }
                if let Some(src) = self.table.source(&c.name) {
                    if src.returns {
                        new_taint = Some(Taint {
                            confidence: src.confidence,
                            origin: format!("{}()", c.name),
                        });
                    } else if src.returns_if_tainted {
                        if let Some(t) = c.args.iter().filter_map(|a| self.taint_of(a)).next() {
                            new_taint = Some(t);
                        }
                    }
                }
            }
            if new_taint.is_none() {
                new_taint = self.taint_of(&rhs);
            }
            match new_taint {
                Some(t) => self.set_taint(&target, t),
                None if !indexed => {
                    self.taint.remove(&target);
                }
                None => {}
            }
            self.defined.insert(target);
        } else if starts_with_type(trimmed) {
            for v in variables(line.split('=').next().unwrap_or(line)) {
                self.defined.insert(v);
            }
        }
    }

    fn call(&mut self, no: u32, name: &str, args: &[String]) {
        let table = self.table;
        if table.is_sanitizer(name) {
            for a in args {
                for v in variables(a) {
                    self.taint.remove(&v);
                    self.bounded.insert(v);
                }
            }
            return;
        }
        if let Some(u) = table.unbounded(name) {
            self.hits.push(Hit {
                line: no,
                issue_type: u.issue_type.clone(),
                severity: u.severity,
                confidence: u.confidence,
                evidence: format!("{name}() reads input with no length limit"),
                sink: name.to_string(),
            });
            if let Some(v) = args.first().and_then(|a| root_variable(a)) {
                self.set_taint(&v, Taint { confidence: u.confidence, origin: format!("{name}()") });
            }
            return;
        }
        if let Some(src) = table.source(name) {
            for &i in &src.tainted_args {
                if let Some(v) = args.get(i).and_then(|a| root_variable(a)) {
                    self.set_taint(
                        &v,
                        Taint {
                            confidence: src.confidence,
                            origin: format!("{name}()"),
                        },
                    );
                    self.defined.insert(v);
                }
            }
        }
        if let Some(sink) = table.sink(name) {
            self.sink(no, sink, args);
        }
        for h in self.helpers.iter().filter(|h| h.name == name) {
            if let Some(t) = args.get(h.param).and_then(|a| self.taint_of(a)) {
                let conf = t.confidence.min(table.helper_confidence);
                self.hits.push(Hit {
                    line: no,
                    issue_type: h.issue_type.clone(),
                    severity: h.severity,
                    confidence: conf,
                    evidence: format!(
                        "{} passed to {}(), which forwards parameter {} to {}()",
                        t.origin, h.name, h.param, h.sink
                    ),
                    sink: h.sink.clone(),
                });
            }
        }
    }

    fn sink(&mut self, no: u32, sink: &SinkSpec, args: &[String]) {
        let mut worst: Option<(Taint, &str)> = None;
        for &i in &sink.args {
            let Some(arg) = args.get(i) else { continue };
            let relevant = match sink.kind {
                SinkKind::Format => string_literal(arg).is_none(),
                SinkKind::Copy | SinkKind::Length => !self.is_bounded(arg),
                SinkKind::Command => true,
                SinkKind::Alloc => (arg.contains('*') || arg.contains('+')) && !self.is_bounded(arg),
            };
            if !relevant {
                continue;
            }
            if let Some(t) = self.taint_of(arg) {
                if worst.as_ref().is_none_or(|(w, _)| t.confidence > w.confidence) {
                    worst = Some((t, arg));
                }
            }
        }
        // propagate through copies even when the sink itself is bounded
        if let Some(dst) = sink.propagates_to.and_then(|d| args.get(d)).and_then(|a| root_variable(a)) {
            let carried = sink
                .args
                .iter()
                .filter_map(|&i| args.get(i))
                .filter_map(|a| self.taint_of(a))
                .max_by(|a, b| a.confidence.total_cmp(&b.confidence));
            if let Some(t) = carried {
                self.set_taint(&dst, t);
            }
        }
        if let Some((t, arg)) = worst {
            self.hits.push(Hit {
                line: no,
                issue_type: sink.issue_type.clone(),
                severity: sink.severity,
                confidence: t.confidence,
                evidence: format!("{} reaches {}() through `{}`", t.origin, sink.name, arg.trim()),
                sink: sink.name.clone(),
            });
        }
    }
}

fn is_condition(line: &str) -> bool {
    ["if", "while", "for", "} else if", "else if"]
        .iter()
        .any(|k| line.starts_with(k) && line[k.len()..].trim_start().starts_with('('))
        || line.contains(" ? ")
}

fn condition_text(line: &str) -> Option<&str> {
    let open = line.find('(')?;
    let mut depth = 0;
    for (i, c) in line[open..].char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&line[open + 1..open + i]);
                }
            }
            _ => {}
        }
    }
    Some(&line[open + 1..])
}

pub(crate) fn has_comparison(cond: &str) -> bool {
    cond.contains('<') || cond.contains('>') || cond.contains("sizeof") || cond.contains("strlen")
}

fn starts_with_type(line: &str) -> bool {
    const TYPES: &[&str] = &[
        "char", "int", "unsigned", "signed", "long", "short", "size_t", "ssize_t", "const", "static",
        "struct", "uint8_t", "uint16_t", "uint32_t", "uint64_t", "int32_t", "int64_t", "float",
        "double", "bool", "FILE",
    ];
    let first = line.split(|c: char| !c.is_ascii_alphanumeric() && c != '_').next().unwrap_or("");
    TYPES.contains(&first)
}

fn run_pass(
    lines: &[(u32, String)],
    params: &[(String, f64, String)],
    table: &TaintTable,
    helpers: &[HelperSummary],
    free_vars: bool,
) -> Vec<Hit> {
    let mut pass = Pass::new(table, helpers);
    pass.free_vars_tainted = free_vars;
    for (p, conf, origin) in params {
        pass.taint.insert(
            p.clone(),
            Taint {
                confidence: *conf,
                origin: origin.clone(),
            },
        );
        pass.defined.insert(p.clone());
    }
    for (no, line) in lines {
        pass.line(*no, line);
    }
    pass.hits
}

fn body_lines(text: &str) -> Vec<(u32, String)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i as u32 + 1, l.to_string()))
        .collect()
}

/// Which parameters of `text`'s function reach a sink.
pub fn summarize_helper(name: &str, text: &str, table: &TaintTable) -> Vec<HelperSummary> {
    let params = parameters(text);
    let lines = body_lines(text);
    let mut out = Vec::new();
    for (i, p) in params.iter().enumerate() {
        let hits = run_pass(&lines, &[(p.clone(), 1.0, p.clone())], table, &[], false);
        if let Some(h) = hits.into_iter().find(|h| h.confidence >= 1.0) {
            out.push(HelperSummary {
                name: name.to_string(),
                param: i,
                issue_type: h.issue_type,
                severity: h.severity,
                sink: h.sink,
            });
        }
    }
    out
}

fn calls_true_source(text: &str, table: &TaintTable) -> bool {
    text.lines().any(|l| {
        find_calls(l)
            .iter()
            .any(|c| table.source(&c.name).is_some_and(|s| s.returns || !s.tainted_args.is_empty()))
            || variables(l).iter().any(|v| table.source_variables.contains(v))
    })
}

/// Findings of the security analyst for `region`.
pub fn analyse(region: &Region, bundle: &ContextBundle, table: &TaintTable) -> Vec<Finding> {
    let lines: Vec<(u32, String)> = region.numbered_lines().map(|(n, l)| (n, l.to_string())).collect();
    let code = region.code();

    let mut helpers = Vec::new();
    for (name, text) in bundle.functions() {
        helpers.extend(summarize_helper(name, text, table));
    }

    let mut params = Vec::new();
    // a hunk that opens with its function's signature exposes the parameters
    let has_signature = region.kind == RegionKind::Function
        || code
            .lines()
            .find(|l| !l.trim().is_empty())
            .is_some_and(|l| starts_with_type(l.trim()) && l.contains('(') && !l.trim_end().ends_with(';'));
    if has_signature {
        let confirmed = bundle
            .items
            .iter()
            .filter(|i| i.kind == ContextKind::Caller)
            .any(|i| calls_true_source(&i.text, table));
        let conf = if confirmed {
            table.caller_confirmed_confidence
        } else {
            table.parameter_confidence
        };
        for p in parameters(&code) {
            let origin = if confirmed {
                format!("parameter `{p}` (callers pass external input)")
            } else {
                format!("parameter `{p}`")
            };
            params.push((p, conf, origin));
        }
    }

    let hits = run_pass(&lines, &params, table, &helpers, region.kind == RegionKind::Hunk);
    let mut best: BTreeMap<(u32, String), Hit> = BTreeMap::new();
    for h in hits {
        let key = (h.line, h.issue_type.clone());
        match best.get(&key) {
            Some(old) if old.confidence >= h.confidence => {}
            _ => {
                best.insert(key, h);
            }
        }
    }
    best.into_values()
        .map(|h| {
            let remediation = remediation_for(&h.issue_type);
            finding_at(region, h.line, &h.issue_type, h.evidence, h.confidence, h.severity, remediation)
        })
        .collect()
}

pub(crate) fn remediation_for(issue_type: &str) -> &'static str {
    match issue_type {
        "security/unbounded-input" => "read with a bounded call such as fgets(buf, sizeof buf, stream)",
        "security/buffer-overflow" => "bound the copy by the destination size (snprintf, strlcpy or an explicit length check)",
        "security/format-string" => "pass untrusted text as an argument to a literal format such as \"%s\"",
        "security/command-injection" => "avoid the shell; validate or escape the argument, or use execve with a fixed argv",
        "security/integer-overflow" => "check the multiplication against SIZE_MAX before allocating",
        "security/out-of-bounds-write" => "check the index against the array length before writing",
        "security/missing-bounds-check" => "restore the removed length check",
        "logic/uninitialized-use" => "initialise the variable at its declaration",
        "logic/lock-imbalance" => "release the lock on every return path",
        "logic/use-after-free" => "clear the pointer after free and stop using it",
        "logic/double-free" => "free the pointer once and set it to NULL",
        _ => "review the flagged statement",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::ContextItem;
    use crate::model::{SourceLocation, Unit};

    fn function(text: &str) -> Region {
        let n = text.lines().count() as u32;
        Region::new("r#fn", RegionKind::Function, SourceLocation::new("f.c", 1, n).unwrap(), text).unwrap()
    }

    fn run(text: &str) -> Vec<Finding> {
        analyse(&function(text), &ContextBundle::empty("r#fn", 6000), &TaintTable::builtin())
    }

    #[test]
    fn gets_is_unbounded_input() {
        let f = run("void f(void) {\n  char buf[16];\n  gets(buf);\n}\n");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].issue_type, "security/unbounded-input");
        assert_eq!(f[0].location.line_start, 3);
        assert_eq!(f[0].severity, Severity::Critical);
    }

    #[test]
    fn fgets_to_strcpy() {
        let f = run("void f(void) {\n  char line[256];\n  char buf[16];\n  fgets(line, sizeof line, stdin);\n  strcpy(buf, line);\n}\n");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].issue_type, "security/buffer-overflow");
        assert_eq!(f[0].confidence.get(), 0.9);
    }

    #[test]
    fn parameter_is_weak_source() {
        let f = run("void f(const char *name) {\n  char buf[8];\n  strcpy(buf, name);\n}\n");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].confidence.get(), 0.6);
    }

    #[test]
    fn literal_copy_and_bounded_copy_are_clean() {
        assert!(run("void f(void) {\n  char buf[8];\n  strcpy(buf, \"hi\");\n}\n").is_empty());
        let bounded = "void f(const char *s) {\n  char buf[8];\n  if (strlen(s) >= sizeof(buf))\n    return;\n  strcpy(buf, s);\n}\n";
        assert!(run(bounded).is_empty());
    }

    #[test]
    fn format_and_command() {
        let f = run("void f(char *msg) {\n  printf(msg);\n  printf(\"%s\", msg);\n}\n");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].issue_type, "security/format-string");
        assert_eq!(f[0].location.line_start, 2);

        let f = run("void f(void) {\n  char *h = getenv(\"HOST\");\n  char cmd[64];\n  sprintf(cmd, \"ping %s\", h);\n  system(cmd);\n}\n");
        let kinds: Vec<_> = f.iter().map(|x| x.issue_type.as_str()).collect();
        assert!(kinds.contains(&"security/command-injection"), "{kinds:?}");
        assert!(kinds.contains(&"security/buffer-overflow"), "{kinds:?}");
    }

    #[test]
    fn sanitizer_clears_taint() {
        let f = run("void f(char *arg) {\n  char cmd[64];\n  sanitize_arg(arg);\n  system(arg);\n}\n");
        assert!(f.is_empty(), "{f:?}");
    }

    #[test]
    fn allocation_arithmetic() {
        let f = run("void *f(size_t n, size_t sz) {\n  return malloc(n * sz);\n}\n");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].issue_type, "security/integer-overflow");
    }

    #[test]
    fn helper_summary_crosses_one_call() {
        let helper = "void copy_name(char *dst, const char *src) {\n  strcpy(dst, src);\n}\n";
        let sums = summarize_helper("copy_name", helper, &TaintTable::builtin());
        assert_eq!(sums.len(), 1);
        assert_eq!(sums[0].param, 1);

        let mut bundle = ContextBundle::empty("r#fn", 6000);
        bundle.items.push(ContextItem {
            kind: ContextKind::Callee,
            path: "h.c".into(),
            location: None,
            symbol: Some("copy_name".into()),
            text: helper.into(),
            rel: Unit::HALF,
            token_cost: 10,
            truncated: false,
        });
        let region = function("void f(void) {\n  char in[256];\n  char name[8];\n  fgets(in, sizeof in, stdin);\n  copy_name(name, in);\n}\n");
        let f = analyse(&region, &bundle, &TaintTable::builtin());
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].location.line_start, 5);
        assert_eq!(f[0].confidence.get(), 0.75);
    }

    #[test]
    fn hunk_free_variables_are_weak() {
        let r = Region::new(
            "h",
            RegionKind::Hunk,
            SourceLocation::new("f.c", 10, 11).unwrap(),
            " char local[4];\n+strcpy(local, incoming);\n",
        )
        .unwrap();
        let f = analyse(&r, &ContextBundle::empty("h", 10), &TaintTable::builtin());
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].location.line_start, 11);
        assert_eq!(f[0].confidence.get(), 0.6);
    }

    #[test]
    fn hunk_signature_parameters_are_tainted() {
        let r = Region::new(
            "h",
            RegionKind::Hunk,
            SourceLocation::new("f.c", 20, 24).unwrap(),
            " int put(const char *name)\n {\n     char local[8];\n+    strcpy(local, name);\n }\n",
        )
        .unwrap();
        let f = analyse(&r, &ContextBundle::empty("h", 10), &TaintTable::builtin());
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].location.line_start, 23);
        assert!(f[0].evidence_summary.contains("name"));
    }
}
