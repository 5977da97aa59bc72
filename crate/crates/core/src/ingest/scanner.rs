//! Heuristic scanner for C-family sources.
//!
//! No grammar: comments and literals are blanked, then top-level
//! `type name(args) {` shapes are matched with brace counting. Namespace,
//! `extern "C"`, class and struct bodies are scanned through so that methods
//! defined inline are found as well.

use once_cell::sync::Lazy;
use regex::Regex;

static IDENT: Lazy<Regex> = Lazy::new(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").unwrap());
static CALL: Lazy<Regex> = Lazy::new(|| Regex::new(r"([A-Za-z_][A-Za-z0-9_]*)\s*\(").unwrap());

/// Words that look like calls or function names but never are.
pub const NOT_CALLABLE: &[&str] = &[
    "if", "else", "for", "while", "do", "switch", "case", "return", "sizeof", "alignof",
    "typeof", "decltype", "catch", "defined", "static_assert", "_Static_assert", "new",
    "delete", "throw", "goto",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScannedFunction {
    pub name: String,
    /// 1-based, inclusive.
    pub line_start: u32,
    pub line_end: u32,
    /// Byte offsets into the original source, end exclusive.
    pub start: usize,
    pub end: usize,
    /// Byte offset of the opening brace.
    pub body_start: usize,
}

/// Replaces comments, string and char literals, and preprocessor lines with
/// spaces. Byte offsets and newlines are preserved.
pub fn blank_noise(src: &str) -> String {
    let bytes = src.as_bytes();
    let mut out = bytes.to_vec();
    let mut i = 0;
    let mut line_start = true;
    while i < bytes.len() {
        let b = bytes[i];
        if line_start && (b == b' ' || b == b'\t') {
            i += 1;
            continue;
        }
        if line_start && b == b'#' {
            // directive, including backslash continuations
            while i < bytes.len() && bytes[i] != b'\n' {
                if bytes[i] == b'\\' && i + 1 < bytes.len() && bytes[i + 1] == b'\n' {
                    out[i] = b' ';
                    i += 2;
                    continue;
                }
                out[i] = b' ';
                i += 1;
            }
            continue;
        }
        line_start = false;
        match b {
            b'\n' => {
                line_start = true;
                i += 1;
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    out[i] = b' ';
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                out[i] = b' ';
                out[i + 1] = b' ';
                i += 2;
                while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                    if bytes[i] != b'\n' {
                        out[i] = b' ';
                    }
                    i += 1;
                }
                if i < bytes.len() {
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    i += 2;
                }
            }
            b'"' | b'\'' => {
                let quote = b;
                i += 1;
                while i < bytes.len() && bytes[i] != quote && bytes[i] != b'\n' {
                    if bytes[i] == b'\\' && i + 1 < bytes.len() {
                        out[i] = b' ';
                        if bytes[i + 1] != b'\n' {
                            out[i + 1] = b' ';
                        }
                        i += 2;
                        continue;
                    }
                    out[i] = b' ';
                    i += 1;
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    // Only ASCII bytes were overwritten with ASCII spaces, but a multi-byte
    // character inside a literal may have been partially blanked.
    String::from_utf8(out).unwrap_or_else(|e| {
        e.into_bytes()
            .into_iter()
            .map(|b| if b.is_ascii() { b as char } else { ' ' })
            .collect()
    })
}

fn line_of(src: &str, offset: usize) -> u32 {
    src.as_bytes()[..offset].iter().filter(|&&b| b == b'\n').count() as u32 + 1
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Skips whitespace backwards from `i` (exclusive); returns the new end.
fn skip_ws_back(s: &[u8], mut i: usize) -> usize {
    while i > 0 && s[i - 1].is_ascii_whitespace() {
        i -= 1;
    }
    i
}

fn ident_back(s: &[u8], end: usize) -> Option<(usize, usize)> {
    let mut i = end;
    while i > 0 && is_ident_byte(s[i - 1]) {
        i -= 1;
    }
    if i == end || s[i].is_ascii_digit() {
        None
    } else {
        Some((i, end))
    }
}

enum Opener {
    Function { name: String, start: usize },
    Transparent,
    Opaque,
}

/// Classifies the `{` at `brace` given blanked source.
fn classify(clean: &[u8], brace: usize) -> Opener {
    let mut end = skip_ws_back(clean, brace);
    // trailing qualifiers: `) const noexcept override {`
    let mut guard = 0;
    while end > 0 && is_ident_byte(clean[end - 1]) && guard < 4 {
        let Some((s, e)) = ident_back(clean, end) else { break };
        let word = std::str::from_utf8(&clean[s..e]).unwrap_or("");
        if matches!(word, "const" | "noexcept" | "override" | "final" | "volatile") {
            end = skip_ws_back(clean, s);
            guard += 1;
        } else {
            break;
        }
    }
    if end > 0 && clean[end - 1] == b')' {
        // match the parenthesis
        let mut depth = 0i32;
        let mut i = end;
        while i > 0 {
            i -= 1;
            match clean[i] {
                b')' => depth += 1,
                b'(' => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                b';' | b'{' | b'}' => return Opener::Opaque,
                _ => {}
            }
        }
        if depth != 0 {
            return Opener::Opaque;
        }
        let name_end = skip_ws_back(clean, i);
        let Some((ns, ne)) = ident_back(clean, name_end) else {
            return Opener::Opaque;
        };
        let name = std::str::from_utf8(&clean[ns..ne]).unwrap_or("").to_string();
        if NOT_CALLABLE.contains(&name.as_str()) {
            return Opener::Opaque;
        }
        // a function header must be preceded by something (return type or
        // qualifier); a bare `foo(x) {` at statement start is a macro call.
        let mut q = ns;
        while q >= 2 && &clean[q - 2..q] == b"::" {
            q -= 2;
            match ident_back(clean, q) {
                Some((s, _)) => q = s,
                None => break,
            }
        }
        let before = skip_ws_back(clean, q);
        let mut start = before;
        while start > 0 && !matches!(clean[start - 1], b';' | b'}' | b'{') {
            start -= 1;
        }
        while start < q && clean[start].is_ascii_whitespace() {
            start += 1;
        }
        if start == q {
            return Opener::Opaque;
        }
        let prefix = std::str::from_utf8(&clean[start..q]).unwrap_or("");
        if prefix.contains('=') || prefix.trim_end().ends_with(',') {
            return Opener::Opaque;
        }
        return Opener::Function { name, start };
    }
    // `namespace x {`, `extern "C" {` (literal blanked), `struct s {`
    let mut start = end;
    while start > 0 && !matches!(clean[start - 1], b';' | b'}' | b'{' | b')' | b'=') {
        start -= 1;
    }
    let head = std::str::from_utf8(&clean[start..end]).unwrap_or("");
    let first = IDENT.find(head).map(|m| m.as_str());
    match first {
        Some("namespace") | Some("extern") | Some("class") => Opener::Transparent,
        Some("struct") | Some("typedef") if !head.contains('=') => Opener::Transparent,
        _ => Opener::Opaque,
    }
}

/// Finds function definitions in `src`.
pub fn scan_functions(src: &str) -> Vec<ScannedFunction> {
    let clean = blank_noise(src);
    let bytes = clean.as_bytes();
    let mut found = Vec::new();
    // stack of open braces: true when scanning continues inside
    let mut stack: Vec<bool> = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' => {
                let scanning = stack.iter().all(|&t| t);
                if !scanning {
                    stack.push(false);
                    i += 1;
                    continue;
                }
                match classify(bytes, i) {
                    Opener::Function { name, start } => {
                        if let Some(close) = matching_brace(bytes, i) {
                            found.push(ScannedFunction {
                                name,
                                line_start: line_of(src, start),
                                line_end: line_of(src, close),
                                start,
                                end: close + 1,
                                body_start: i,
                            });
                            i = close + 1;
                            continue;
                        }
                        // unbalanced: give up on the rest of the file
                        break;
                    }
                    Opener::Transparent => stack.push(true),
                    Opener::Opaque => stack.push(false),
                }
            }
            b'}' => {
                stack.pop();
            }
            _ => {}
        }
        i += 1;
    }
    found
}

fn matching_brace(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (j, &b) in bytes.iter().enumerate().skip(open) {
        match b {
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(j);
                }
            }
            _ => {}
        }
    }
    None
}

/// Names invoked as `name(` in `code`, in first-occurrence order, with
/// comments and literals ignored.
pub fn called_names(code: &str) -> Vec<String> {
    let clean = blank_noise(code);
    let mut seen = Vec::new();
    for cap in CALL.captures_iter(&clean) {
        let name = cap.get(1).unwrap().as_str();
        if NOT_CALLABLE.contains(&name) {
            continue;
        }
        // skip member-less declarations like `int f(` is impossible to tell;
        // keep everything and let callers intersect with known names.
        if !seen.iter().any(|s: &String| s == name) {
            seen.push(name.to_string());
        }
    }
    seen
}

/// Identifier tokens of `text`.
pub fn identifiers(text: &str) -> impl Iterator<Item = &str> {
    IDENT.find_iter(text).map(|m| m.as_str())
}

pub fn is_identifier(s: &str) -> bool {
    let b = s.as_bytes();
    !b.is_empty() && !b[0].is_ascii_digit() && b.iter().all(|&c| is_ident_byte(c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_simple_functions() {
        let src = "int f(){ g(); }\nint g(){ return 0; }\n";
        let fs = scan_functions(src);
        let names: Vec<_> = fs.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["f", "g"]);
        assert_eq!(fs[1].line_start, 2);
        assert_eq!(&src[fs[0].start..fs[0].end], "int f(){ g(); }");
    }

    #[test]
    fn multi_line_headers_and_comments() {
        let src = r#"/* header { */
#include <stdio.h>
static const char *
name_of(int x,
        int y)
{
    const char *s = "}{";
    if (x) { return s; }
    return "y";
}

struct point { int x; int y; };
int table[] = { 1, 2, 3 };

void Widget::draw() const {
    paint();
}
"#;
        let fs = scan_functions(src);
        let names: Vec<_> = fs.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["name_of", "draw"]);
        assert_eq!((fs[0].line_start, fs[0].line_end), (3, 10));
        assert_eq!((fs[1].line_start, fs[1].line_end), (15, 17));
    }

    #[test]
    fn namespaces_are_transparent() {
        let src = "namespace a {\nint f(int x) {\n return x;\n}\n}\nextern \"C\" {\nvoid g(void) {}\n}\n";
        let names: Vec<_> = scan_functions(src).into_iter().map(|f| f.name).collect();
        assert_eq!(names, ["f", "g"]);
    }

    #[test]
    fn control_blocks_are_not_functions() {
        let src = "int main(void) {\n if (x) { y(); }\n while (z) { w(); }\n}\n";
        let names: Vec<_> = scan_functions(src).into_iter().map(|f| f.name).collect();
        assert_eq!(names, ["main"]);
    }

    #[test]
    fn calls_skip_keywords_and_literals() {
        let calls = called_names("if (a(b)) { c(\"d(e)\"); } // f(g)\n return sizeof(h);");
        assert_eq!(calls, ["a", "c"]);
    }

    #[test]
    fn blanking_preserves_offsets() {
        let src = "a /* b\n c */ \"x\\\"y\" 'z'\n#define Q 1\nd";
        let clean = blank_noise(src);
        assert_eq!(clean.len(), src.len());
        assert_eq!(clean.matches('\n').count(), src.matches('\n').count());
        assert!(!clean.contains('b') && !clean.contains('x') && !clean.contains("define"));
        assert!(clean.ends_with('d'));
    }
}
