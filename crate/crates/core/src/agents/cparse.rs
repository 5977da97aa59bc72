//! Line-level helpers for the rule-based agents: call extraction, argument
//! splitting, assignments and fixed-size array declarations.

use std::collections::BTreeMap;

use once_cell::sync::Lazy;
use regex::Regex;

use crate::ingest::scanner::{identifiers, NOT_CALLABLE};

static CALL_START: Lazy<Regex> = Lazy::new(|| Regex::new(r"\b([A-Za-z_][A-Za-z0-9_]*)\s*\(").unwrap());
static ASSIGN: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"^\s*(?:[A-Za-z_][A-Za-z0-9_\s\*]*?[\s\*])?\**\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\[[^\]]*\])?\s*(?:=|\+=|-=|\*=)[^=]").unwrap()
});
static ARRAY_DECL: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"\b(?:unsigned\s+)?(?:char|int|short|long|uint8_t|u8|int8_t|wchar_t|float|double)\s+([A-Za-z_][A-Za-z0-9_]*)\s*\[\s*([A-Za-z0-9_]+)\s*\]").unwrap()
});
static DEFINE: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?m)^\s*#\s*define\s+([A-Za-z_][A-Za-z0-9_]*)\s+(\d+)\b").unwrap());

const TYPE_WORDS: &[&str] = &[
    "char", "int", "short", "long", "unsigned", "signed", "const", "volatile", "static", "struct",
    "void", "size_t", "ssize_t", "float", "double", "uint8_t", "uint16_t", "uint32_t", "uint64_t",
    "int8_t", "int16_t", "int32_t", "int64_t", "bool", "enum", "register", "NULL", "sizeof",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Call {
    pub name: String,
    pub args: Vec<String>,
    /// Byte offset of the name within the line.
    pub start: usize,
}

/// Every call `name(args)` on a line, including nested ones, with arguments
/// split at top-level commas.
pub fn find_calls(line: &str) -> Vec<Call> {
    let mut calls = Vec::new();
    for cap in CALL_START.captures_iter(line) {
        let name = cap.get(1).unwrap();
        if NOT_CALLABLE.contains(&name.as_str()) || inside_literal(line, name.start()) {
            continue;
        }
        let open = cap.get(0).unwrap().end() - 1;
        if let Some(args) = split_args(&line[open..]) {
            calls.push(Call {
                name: name.as_str().to_string(),
                args,
                start: name.start(),
            });
        }
    }
    calls
}

fn inside_literal(line: &str, pos: usize) -> bool {
    let mut quote = None;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        if i >= pos {
            break;
        }
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                }
            }
            None => {
                if c == '"' || c == '\'' {
                    quote = Some(c);
                }
            }
        }
    }
    quote.is_some()
}

/// Splits `(a, f(b, c), "x,y")` into top-level arguments. `text` must start
/// at the opening parenthesis. Returns `None` when the call is not closed
/// on this line.
pub fn split_args(text: &str) -> Option<Vec<String>> {
    let mut depth = 0i32;
    let mut quote = None;
    let mut escaped = false;
    let mut args = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if let Some(q) = quote {
            cur.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => {
                quote = Some(c);
                cur.push(c);
            }
            '(' | '[' | '{' => {
                depth += 1;
                if depth > 1 {
                    cur.push(c);
                }
            }
            ')' | ']' | '}' => {
                depth -= 1;
                if depth == 0 {
                    let last = cur.trim().to_string();
                    if !last.is_empty() || !args.is_empty() {
                        args.push(last);
                    }
                    return Some(args);
                }
                cur.push(c);
            }
            ',' if depth == 1 => {
                args.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    None
}

/// The string literal an argument consists of, without quotes and with
/// escapes left as written. Adjacent literals are concatenated.
pub fn string_literal(arg: &str) -> Option<String> {
    let arg = arg.trim();
    if !arg.starts_with('"') {
        return None;
    }
    let mut out = String::new();
    let mut rest = arg;
    while let Some(body) = rest.strip_prefix('"') {
        let mut end = None;
        let mut escaped = false;
        for (i, c) in body.char_indices() {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                end = Some(i);
                break;
            }
        }
        let end = end?;
        out.push_str(&body[..end]);
        rest = body[end + 1..].trim_start();
    }
    rest.is_empty().then_some(out)
}

/// Byte length of a literal once escapes are resolved (no terminator).
pub fn literal_len(lit: &str) -> usize {
    let mut n = 0;
    let mut chars = lit.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            chars.next();
        }
        n += 1;
    }
    n
}

pub fn is_numeric(arg: &str) -> bool {
    let a = arg.trim();
    !a.is_empty() && (a.chars().all(|c| c.is_ascii_digit()) || a.starts_with("0x"))
}

/// Whether an argument is a compile-time constant: a literal or a number.
pub fn is_constant(arg: &str) -> bool {
    string_literal(arg).is_some() || is_numeric(arg) || (arg.trim().starts_with('\'') && arg.trim().ends_with('\''))
}

/// Variable-like identifiers of an expression, skipping type names, casts
/// and called functions.
pub fn variables(expr: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let stripped = strip_literals(expr);
    let callees: Vec<String> = find_calls(&stripped).into_iter().map(|c| c.name).collect();
    for id in identifiers(&stripped) {
        if TYPE_WORDS.contains(&id)
            || NOT_CALLABLE.contains(&id)
            || callees.iter().any(|c| c == id)
            || id.chars().next().is_some_and(|c| c.is_ascii_digit())
        {
            continue;
        }
        if !out.iter().any(|o| o == id) {
            out.push(id.to_string());
        }
    }
    out
}

/// The base variable an expression writes through: `buf` for `&buf[2]`,
/// `p` for `p->data`.
pub fn root_variable(expr: &str) -> Option<String> {
    variables(expr).into_iter().next()
}

fn strip_literals(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut quote = None;
    let mut escaped = false;
    for c in text.chars() {
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                    out.push(c);
                    continue;
                }
                out.push(' ');
            }
            None => {
                if c == '"' || c == '\'' {
                    quote = Some(c);
                }
                out.push(c);
            }
        }
    }
    out
}

/// `(target, right-hand side)` for a simple assignment or initialised
/// declaration.
pub fn assignment(line: &str) -> Option<(String, String)> {
    let code = line.trim();
    if code.starts_with("if") || code.starts_with("while") || code.starts_with("for") || code.starts_with("return") {
        return None;
    }
    let cap = ASSIGN.captures(code)?;
    let target = cap.get(1)?.as_str().to_string();
    let eq = code[cap.get(1)?.end()..].find('=')? + cap.get(1)?.end();
    let rhs = code[eq + 1..].trim().trim_end_matches(';').trim().to_string();
    Some((target, rhs))
}

/// Fixed-size arrays declared in `code`: name → element count. Sizes given
/// by a `#define` in the same text are resolved.
pub fn array_sizes(code: &str) -> BTreeMap<String, usize> {
    let defines: BTreeMap<&str, usize> = DEFINE
        .captures_iter(code)
        .filter_map(|c| Some((c.get(1)?.as_str(), c.get(2)?.as_str().parse().ok()?)))
        .collect();
    let mut out = BTreeMap::new();
    for cap in ARRAY_DECL.captures_iter(code) {
        let size = cap[2]
            .parse::<usize>()
            .ok()
            .or_else(|| defines.get(&cap[2]).copied());
        if let Some(size) = size {
            out.insert(cap[1].to_string(), size);
        }
    }
    out
}

/// Removes a trailing `//` comment outside literals.
pub fn strip_comment(line: &str) -> &str {
    let mut quote = None;
    let mut escaped = false;
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == q {
                    quote = None;
                }
            }
            None => {
                if b == b'"' || b == b'\'' {
                    quote = Some(b);
                } else if b == b'/' && bytes.get(i + 1) == Some(&b'/') {
                    return &line[..i];
                }
            }
        }
    }
    line
}

/// Parameter names of the first function header in `code`.
pub fn parameters(code: &str) -> Vec<String> {
    let Some(open) = code.find('(') else { return Vec::new() };
    let Some(brace) = code.find('{') else { return Vec::new() };
    if brace < open {
        return Vec::new();
    }
    let Some(args) = split_args(&code[open..]) else { return Vec::new() };
    args.iter()
        .filter(|a| a.trim() != "void" && !a.trim().is_empty() && a.trim() != "...")
        .filter_map(|a| {
            let a = a.split('[').next().unwrap_or(a);
            identifiers(a).last().map(str::to_string)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calls_and_args() {
        let calls = find_calls(r#"  n = snprintf(out, sizeof(out), "%s,%d", name, f(a, b));"#);
        let names: Vec<_> = calls.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["snprintf", "f"]);
        assert_eq!(calls[0].args, ["out", "sizeof(out)", "\"%s,%d\"", "name", "f(a, b)"]);
        assert_eq!(calls[1].args, ["a", "b"]);
        assert!(find_calls(r#"puts("call(me)");"#).iter().all(|c| c.name == "puts"));
        assert_eq!(find_calls("f();")[0].args, Vec::<String>::new());
    }

    #[test]
    fn literals() {
        assert_eq!(string_literal(r#""abc""#).as_deref(), Some("abc"));
        assert_eq!(string_literal(r#""ab" "cd""#).as_deref(), Some("abcd"));
        assert_eq!(string_literal("buf"), None);
        assert_eq!(literal_len(r"a\nb"), 3);
        assert!(is_constant("42") && is_constant("\"x\"") && !is_constant("n"));
    }

    #[test]
    fn variables_skip_casts_and_calls() {
        assert_eq!(variables("(char *)p->data + strlen(s)"), ["p", "data", "s"]);
        assert_eq!(root_variable("&buf[i]").as_deref(), Some("buf"));
    }

    #[test]
    fn assignments() {
        assert_eq!(assignment("  char *p = getenv(\"HOME\");"), Some(("p".into(), "getenv(\"HOME\")".into())));
        assert_eq!(assignment("buf[i] = c;"), Some(("buf".into(), "c".into())));
        assert_eq!(assignment("len += 4;"), Some(("len".into(), "4".into())));
        assert_eq!(assignment("if (a == b)"), None);
        assert_eq!(assignment("x == y;"), None);
    }

    #[test]
    fn array_declarations() {
        let sizes = array_sizes("#define N 32\nchar a[16];\nunsigned char b[N];\nchar *c;\n");
        assert_eq!(sizes.get("a"), Some(&16));
        assert_eq!(sizes.get("b"), Some(&32));
        assert!(!sizes.contains_key("c"));
    }

    #[test]
    fn parameter_names() {
        assert_eq!(parameters("int f(const char *src, size_t n, char out[]) {"), ["src", "n", "out"]);
        assert!(parameters("void g(void) {").is_empty());
    }
}
