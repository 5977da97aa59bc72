//! Structural checks: copies, index writes and allocations with no nearby
//! bounds check, and bounds checks deleted by a hunk.

use std::collections::BTreeSet;

use once_cell::sync::Lazy;
use regex::Regex;

use super::cparse::{array_sizes, find_calls, is_numeric, string_literal, strip_comment, variables};
use super::finding_at;
use super::security::{has_comparison, remediation_for};
use crate::model::{Finding, Region, Severity};

static INDEX_WRITE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"\b([A-Za-z_][A-Za-z0-9_]*)\s*\[([^\]]+)\]\s*(?:=[^=]|\+=|-=|\|=|&=)").unwrap());
static CONDITION: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\s*(?:\}\s*)?(?:else\s+)?(?:if|while|for)\s*\(").unwrap());
static BOUND_WORDS: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)sizeof|len|size|max|limit|bound|cap|count|\bn\b").unwrap());

fn push(out: &mut Vec<Finding>, f: Finding) {
    if !out
        .iter()
        .any(|o| o.issue_type == f.issue_type && o.location.line_start == f.location.line_start)
    {
        out.push(f);
    }
}

/// Findings of the semantic analyst for `region`.
pub fn analyse(region: &Region) -> Vec<Finding> {
    let code = region.code();
    let sizes = array_sizes(&code);
    let mut checked: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::new();

    for (no, raw) in region.numbered_lines() {
        let line = strip_comment(raw);
        if line.trim_start().starts_with('#') {
            continue;
        }
        if CONDITION.is_match(line) || line.contains(" ? ") {
            if has_comparison(line) {
                checked.extend(variables(line));
            }
        }
        let is_checked = |expr: &str| variables(expr).iter().any(|v| checked.contains(v));

        for call in find_calls(line) {
            let args = &call.args;
            match call.name.as_str() {
                "gets" => push(
                    &mut out,
                    finding_at(
                        region,
                        no,
                        "security/unbounded-input",
                        "gets() has no way to bound the read".into(),
                        0.85,
                        Severity::Critical,
                        remediation_for("security/unbounded-input"),
                    ),
                ),
                "strcpy" | "strcat" if args.len() >= 2 => {
                    if !is_checked(&args[1]) && !is_checked(&args[0]) {
                        push(
                            &mut out,
                            finding_at(
                                region,
                                no,
                                "security/buffer-overflow",
                                format!("{}() into `{}` with no length check in scope", call.name, args[0]),
                                0.8,
                                Severity::High,
                                remediation_for("security/buffer-overflow"),
                            ),
                        );
                    }
                }
                "sprintf" | "vsprintf" if args.len() >= 2 => {
                    let fmt_risky = string_literal(&args[1]).is_none_or(|f| f.contains("%s"));
                    if fmt_risky && !args[2..].iter().any(|a| is_checked(a)) {
                        push(
                            &mut out,
                            finding_at(
                                region,
                                no,
                                "security/buffer-overflow",
                                format!("{}() into `{}` can exceed its size", call.name, args[0]),
                                0.8,
                                Severity::High,
                                remediation_for("security/buffer-overflow"),
                            ),
                        );
                    }
                }
                "memcpy" | "memmove" if args.len() >= 3 => {
                    let len = args[2].trim();
                    let dest = variables(&args[0]).into_iter().next().unwrap_or_default();
                    let fits = is_numeric(len)
                        && sizes
                            .get(&dest)
                            .is_some_and(|&cap| len.parse::<usize>().is_ok_and(|n| n <= cap));
                    let self_sized = len.contains("sizeof") && len.contains(&dest);
                    if !fits && !self_sized && !is_checked(len) && !is_numeric(len) {
                        push(
                            &mut out,
                            finding_at(
                                region,
                                no,
                                "security/buffer-overflow",
                                format!("{}() length `{}` is never compared with the size of `{}`", call.name, len, args[0]),
                                0.8,
                                Severity::High,
                                remediation_for("security/buffer-overflow"),
                            ),
                        );
                    }
                }
                "malloc" | "alloca" if !args.is_empty() => {
                    let a = &args[0];
                    if a.contains('*') && !variables(a).is_empty() && !is_checked(a) && !a.contains("sizeof(*") {
                        let operands: Vec<_> = variables(a);
                        // `n * sizeof(T)` with n checked is fine; any unchecked variable is not
                        if operands.iter().any(|v| !checked.contains(v)) {
                            push(
                                &mut out,
                                finding_at(
                                    region,
                                    no,
                                    "security/integer-overflow",
                                    format!("allocation size `{a}` is computed without an overflow check"),
                                    0.7,
                                    Severity::High,
                                    remediation_for("security/integer-overflow"),
                                ),
                            );
                        }
                    }
                }
                _ => {}
            }
        }

        for cap in INDEX_WRITE.captures_iter(line) {
            let array = &cap[1];
            let index = cap[2].trim();
            if is_numeric(index) || variables(index).is_empty() {
                continue;
            }
            if !is_checked(index) && sizes.contains_key(array) {
                push(
                    &mut out,
                    finding_at(
                        region,
                        no,
                        "security/out-of-bounds-write",
                        format!("`{array}[{index}]` is written with an unchecked index"),
                        0.7,
                        Severity::High,
                        remediation_for("security/out-of-bounds-write"),
                    ),
                );
            }
        }
    }

    let kept: BTreeSet<String> = region.numbered_lines().map(|(_, l)| l.trim().to_string()).collect();
    for (anchor, text) in &region.removed {
        let t = text.trim();
        if CONDITION.is_match(t) && has_comparison(t) && BOUND_WORDS.is_match(t) && !kept.contains(t) {
            push(
                &mut out,
                finding_at(
                    region,
                    *anchor,
                    "security/missing-bounds-check",
                    format!("the change removes the check `{t}`"),
                    0.75,
                    Severity::High,
                    remediation_for("security/missing-bounds-check"),
                ),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RegionKind, SourceLocation};

    fn function(text: &str) -> Region {
        let n = text.lines().count() as u32;
        Region::new("r#fn", RegionKind::Function, SourceLocation::new("f.c", 1, n).unwrap(), text).unwrap()
    }

    fn kinds(text: &str) -> Vec<String> {
        analyse(&function(text)).into_iter().map(|f| f.issue_type).collect()
    }

    #[test]
    fn copies_without_checks() {
        assert_eq!(kinds("void f(char *s) {\n  char b[4];\n  strcpy(b, s);\n}\n"), ["security/buffer-overflow"]);
        assert_eq!(kinds("void f(void) {\n  char b[4];\n  strcpy(b, \"x\");\n}\n"), ["security/buffer-overflow"]);
        assert!(kinds("void f(char *s) {\n  char b[4];\n  if (strlen(s) < sizeof b)\n    strcpy(b, s);\n}\n").is_empty());
        assert_eq!(kinds("void f(void) {\n  char b[8];\n  gets(b);\n}\n"), ["security/unbounded-input"]);
    }

    #[test]
    fn memcpy_lengths() {
        assert!(kinds("void f(char *s) {\n  char b[8];\n  memcpy(b, s, 4);\n}\n").is_empty());
        assert!(kinds("void f(char *s) {\n  char b[8];\n  memcpy(b, s, sizeof(b));\n}\n").is_empty());
        assert_eq!(kinds("void f(char *s, int n) {\n  char b[8];\n  memcpy(b, s, n);\n}\n"), ["security/buffer-overflow"]);
    }

    #[test]
    fn index_writes() {
        assert_eq!(
            kinds("void f(int i, char v) {\n  char t[8];\n  t[i] = v;\n}\n"),
            ["security/out-of-bounds-write"]
        );
        assert!(kinds("void f(int i, char v) {\n  char t[8];\n  if (i < 0 || i >= 8) return;\n  t[i] = v;\n}\n").is_empty());
        assert!(kinds("void f(char v) {\n  char t[8];\n  t[3] = v;\n}\n").is_empty());
    }

    #[test]
    fn allocation() {
        assert_eq!(kinds("void *f(size_t n, size_t k) {\n  return malloc(n * k);\n}\n"), ["security/integer-overflow"]);
        assert!(kinds("void *f(size_t n) {\n  if (n > 1024) return 0;\n  return malloc(n * sizeof(int));\n}\n").is_empty());
    }

    #[test]
    fn removed_bounds_check() {
        let mut r = Region::new(
            "h",
            RegionKind::Hunk,
            SourceLocation::new("f.c", 10, 11).unwrap(),
            " int v = idx;\n+table[v] = 1;\n",
        )
        .unwrap();
        r.removed = vec![(11, "if (idx >= TABLE_SIZE) return -1;".into())];
        let f = analyse(&r);
        assert!(f.iter().any(|x| x.issue_type == "security/missing-bounds-check" && x.location.line_start == 11));
    }
}
