//! Correctness checks: reads of uninitialised locals, locks held on a
//! return path, and use of freed memory.

use std::collections::BTreeMap;

use once_cell::sync::Lazy;
use regex::Regex;

use super::cparse::{assignment, find_calls, root_variable, strip_comment};
use super::finding_at;
use super::security::remediation_for;
use crate::ingest::scanner::{blank_noise, identifiers};
use crate::model::{Finding, Region, Severity};

static SCALAR_DECL: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"^\s*(?:unsigned\s+|signed\s+)?(?:int|long|short|char|size_t|ssize_t|float|double|unsigned|uint32_t|int32_t|uint64_t|int64_t)\s+\**([A-Za-z_][A-Za-z0-9_]*)\s*;").unwrap()
});
static LOCK: Lazy<Regex> = Lazy::new(|| Regex::new(r"^(?:pthread_mutex_lock|mutex_lock|spin_lock|lock|acquire)$").unwrap());
static UNLOCK: Lazy<Regex> = Lazy::new(|| Regex::new(r"^(?:pthread_mutex_unlock|mutex_unlock|spin_unlock|unlock|release)$").unwrap());
static EXIT: Lazy<Regex> = Lazy::new(|| Regex::new(r"\b(?:return|goto|break|continue|exit|abort)\b").unwrap());
static RETURN: Lazy<Regex> = Lazy::new(|| Regex::new(r"\breturn\b").unwrap());

struct Line<'a> {
    no: u32,
    code: &'a str,
    /// Brace depth before the line.
    depth: i32,
    /// Brace depth after the line.
    depth_after: i32,
}

/// `(line, code without trailing comment, depth before, depth after)`.
pub(crate) fn lines(region: &Region) -> Vec<(u32, String, i32, i32)> {
    let code = region.code();
    let clean = blank_noise(&code);
    let mut depth = 0;
    let mut out = Vec::new();
    for ((no, raw), blank) in region.numbered_lines().zip(clean.lines()) {
        let before = depth;
        for c in blank.chars() {
            match c {
                '{' => depth += 1,
                '}' => depth -= 1,
                _ => {}
            }
        }
        out.push((no, strip_comment(raw).to_string(), before, depth));
    }
    out
}

fn mentions(code: &str, var: &str) -> bool {
    identifiers(&blank_noise(code)).any(|id| id == var)
}

/// Whether a line writes `var` before reading it.
fn writes(code: &str, var: &str) -> bool {
    if code.contains(&format!("&{var}")) {
        return true;
    }
    let clean = blank_noise(code);
    let assign = Regex::new(&format!(r"(?:^|[^A-Za-z0-9_>.])\b{var}\s*=[^=]")).unwrap();
    match assign.find(&clean) {
        Some(m) => {
            let before = &clean[..m.start() + 1];
            let rhs = &clean[m.end() - 1..];
            // `if (x > 0) x = 1;` reads x in the condition first
            !mentions(rhs, var) && !mentions(before, var)
        }
        None => false,
    }
}

/// Findings of the logic analyst for `region`.
pub fn analyse(region: &Region) -> Vec<Finding> {
    let rows = lines(region);
    let ls: Vec<Line> = rows
        .iter()
        .map(|(no, code, d, da)| Line {
            no: *no,
            code: code.as_str(),
            depth: *d,
            depth_after: *da,
        })
        .collect();
    let mut out = Vec::new();
    uninitialised(region, &ls, &mut out);
    locks(region, &ls, &mut out);
    freed(region, &ls, &mut out);
    out
}

fn uninitialised(region: &Region, ls: &[Line], out: &mut Vec<Finding>) {
    for (i, l) in ls.iter().enumerate() {
        let Some(cap) = SCALAR_DECL.captures(l.code) else { continue };
        let var = &cap[1];
        for later in &ls[i + 1..] {
            if !mentions(later.code, var) {
                continue;
            }
            if writes(later.code, var) {
                break;
            }
            out.push(finding_at(
                region,
                later.no,
                "logic/uninitialized-use",
                format!("`{var}` is read before any assignment"),
                0.7,
                Severity::Medium,
                remediation_for("logic/uninitialized-use"),
            ));
            break;
        }
    }
}

fn locks(region: &Region, ls: &[Line], out: &mut Vec<Finding>) {
    let mut held: BTreeMap<String, u32> = BTreeMap::new();
    for l in ls {
        for call in find_calls(l.code) {
            let arg = call.args.first().cloned().unwrap_or_default();
            if LOCK.is_match(&call.name) {
                held.insert(arg, l.no);
            } else if UNLOCK.is_match(&call.name) {
                held.remove(&arg);
            }
        }
        if RETURN.is_match(l.code) && !held.is_empty() {
            let names: Vec<_> = held.keys().cloned().collect();
            out.push(finding_at(
                region,
                l.no,
                "logic/lock-imbalance",
                format!("returns while holding {}", names.join(", ")),
                0.75,
                Severity::Medium,
                remediation_for("logic/lock-imbalance"),
            ));
            held.clear();
        }
    }
}

/// A `free` followed, within its own block, by a jump out is a cleanup path.
fn free_leaves_block(ls: &[Line], i: usize) -> bool {
    let depth = ls[i].depth;
    if EXIT.is_match(ls[i].code.split("free").nth(1).unwrap_or("")) {
        return true;
    }
    for l in &ls[i + 1..] {
        if l.depth < depth || (l.depth == depth && l.code.trim_start().starts_with('}')) {
            return false;
        }
        if EXIT.is_match(l.code) {
            return true;
        }
        if l.depth_after < depth {
            return false;
        }
    }
    false
}

fn freed(region: &Region, ls: &[Line], out: &mut Vec<Finding>) {
    let mut freed: BTreeMap<String, u32> = BTreeMap::new();
    for (i, l) in ls.iter().enumerate() {
        let frees: Vec<String> = find_calls(l.code)
            .into_iter()
            .filter(|c| c.name == "free")
            .filter_map(|c| c.args.first().and_then(|a| root_variable(a)))
            .collect();

        for (var, at) in freed.clone() {
            if frees.contains(&var) {
                out.push(finding_at(
                    region,
                    l.no,
                    "logic/double-free",
                    format!("`{var}` is freed again after line {at}"),
                    0.8,
                    Severity::High,
                    remediation_for("logic/double-free"),
                ));
                freed.remove(&var);
            } else if mentions(l.code, &var) {
                let reassigned = assignment(l.code).is_some_and(|(t, _)| t == var) && !l.code.contains(&format!("{var}->"));
                if !reassigned {
                    out.push(finding_at(
                        region,
                        l.no,
                        "logic/use-after-free",
                        format!("`{var}` is used after being freed at line {at}"),
                        0.8,
                        Severity::High,
                        remediation_for("logic/use-after-free"),
                    ));
                }
                freed.remove(&var);
            }
        }
        for var in frees {
            if !free_leaves_block(ls, i) {
                freed.insert(var, l.no);
            }
        }
    }
}
