//! Unified diff parsing and re-serialisation.
//!
//! Accepts `diff -u` and `git diff` output. Anything outside file headers and
//! hunks (commit messages, `index` lines, mode lines) is skipped.

use std::fmt::Write as _;

use once_cell::sync::Lazy;
use regex::Regex;

use crate::error::{Error, Result};

static HUNK_HEADER: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@(.*)$").unwrap());

pub const UNKNOWN_FILE: &str = "unknown";
const DEV_NULL: &str = "/dev/null";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LineMarker {
    Context,
    Added,
    Removed,
}

impl LineMarker {
    pub fn as_char(self) -> char {
        match self {
            LineMarker::Context => ' ',
            LineMarker::Added => '+',
            LineMarker::Removed => '-',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffLine {
    pub marker: LineMarker,
    pub text: String,
    /// Followed by `\ No newline at end of file`.
    pub no_eol: bool,
}

/// Old/new paths from `---`/`+++` with `a/`, `b/` prefixes removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileHeader {
    pub old: String,
    pub new: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffHunk {
    /// Effective path: the new path unless the file was deleted.
    pub file: String,
    pub header: Option<FileHeader>,
    pub old_start: u32,
    pub old_len: u32,
    pub new_start: u32,
    pub new_len: u32,
    /// Text after the closing `@@`, usually a function signature.
    pub section: String,
    pub lines: Vec<DiffLine>,
}

impl DiffHunk {
    pub fn count(&self, marker: LineMarker) -> usize {
        self.lines.iter().filter(|l| l.marker == marker).count()
    }

    pub fn label(&self) -> String {
        format!(
            "{} @@ -{},{} +{},{} @@",
            self.file, self.old_start, self.old_len, self.new_start, self.new_len
        )
    }

    /// Checks the header counts against the body.
    pub fn validate(&self) -> Result<()> {
        let ctx = self.count(LineMarker::Context);
        let old = ctx + self.count(LineMarker::Removed);
        let new = ctx + self.count(LineMarker::Added);
        if old != self.old_len as usize || new != self.new_len as usize {
            return Err(Error::MalformedDiff {
                hunk: self.label(),
                reason: format!("body has {old} old / {new} new lines"),
            });
        }
        Ok(())
    }
}

fn strip_path(raw: &str) -> String {
    // drop a trailing timestamp (`diff -u` separates it with a tab)
    let path = raw.split('\t').next().unwrap_or(raw).trim_end();
    let path = path.trim_matches('"');
    if path == DEV_NULL {
        return path.to_string();
    }
    for prefix in ["a/", "b/"] {
        if let Some(rest) = path.strip_prefix(prefix) {
            return rest.to_string();
        }
    }
    path.to_string()
}

fn parse_count(m: Option<regex::Match<'_>>) -> u32 {
    m.map_or(1, |m| m.as_str().parse().unwrap_or(u32::MAX))
}

/// Parses unified diff text into hunks.
pub fn parse_unified_diff(text: &str) -> Result<Vec<DiffHunk>> {
    let lines: Vec<&str> = text.split('\n').collect();
    // a trailing newline produces one empty tail element
    let n = if text.ends_with('\n') { lines.len() - 1 } else { lines.len() };
    let mut hunks = Vec::new();
    let mut header: Option<FileHeader> = None;
    let mut i = 0;
    while i < n {
        let line = lines[i].strip_suffix('\r').unwrap_or(lines[i]);
        if let Some(old) = line.strip_prefix("--- ") {
            let next = lines.get(i + 1).filter(|_| i + 1 < n).copied().unwrap_or("");
            if let Some(new) = next.strip_prefix("+++ ") {
                header = Some(FileHeader {
                    old: strip_path(old),
                    new: strip_path(new.strip_suffix('\r').unwrap_or(new)),
                });
                i += 2;
                continue;
            }
        }
        if line.starts_with("diff ") {
            // new file section; headers may be absent for pure mode changes
            header = None;
            i += 1;
            continue;
        }
        let Some(caps) = HUNK_HEADER.captures(line) else {
            if line.starts_with("@@") {
                return Err(Error::MalformedDiff {
                    hunk: line.to_string(),
                    reason: "unparseable hunk header".into(),
                });
            }
            i += 1;
            continue;
        };
        let file = match &header {
            Some(h) if h.new != DEV_NULL => h.new.clone(),
            Some(h) => h.old.clone(),
            None => UNKNOWN_FILE.to_string(),
        };
        let mut hunk = DiffHunk {
            file,
            header: header.clone(),
            old_start: caps[1].parse().unwrap_or(0),
            old_len: parse_count(caps.get(2)),
            new_start: caps[3].parse().unwrap_or(0),
            new_len: parse_count(caps.get(4)),
            section: caps.get(5).map_or("", |m| m.as_str()).to_string(),
            lines: Vec::new(),
        };
        i += 1;
        let (mut old_left, mut new_left) = (hunk.old_len as usize, hunk.new_len as usize);
        while old_left > 0 || new_left > 0 {
            if i >= n {
                return Err(Error::MalformedDiff {
                    hunk: hunk.label(),
                    reason: format!(
                        "diff ended with {old_left} old / {new_left} new lines outstanding"
                    ),
                });
            }
            let raw = lines[i].strip_suffix('\r').unwrap_or(lines[i]);
            let (marker, body) = match raw.as_bytes().first() {
                Some(b' ') => (LineMarker::Context, &raw[1..]),
                Some(b'+') => (LineMarker::Added, &raw[1..]),
                Some(b'-') => (LineMarker::Removed, &raw[1..]),
                // some tools strip the space from empty context lines
                None => (LineMarker::Context, ""),
                Some(b'\\') => {
                    mark_no_eol(&mut hunk);
                    i += 1;
                    continue;
                }
                Some(_) => {
                    return Err(Error::MalformedDiff {
                        hunk: hunk.label(),
                        reason: format!("unexpected line {:?} inside hunk body", raw),
                    })
                }
            };
            let fits = match marker {
                LineMarker::Context => old_left > 0 && new_left > 0,
                LineMarker::Added => new_left > 0,
                LineMarker::Removed => old_left > 0,
            };
            if !fits {
                return Err(Error::MalformedDiff {
                    hunk: hunk.label(),
                    reason: "more body lines than the header declares".into(),
                });
            }
            match marker {
                LineMarker::Context => {
                    old_left -= 1;
                    new_left -= 1;
                }
                LineMarker::Added => new_left -= 1,
                LineMarker::Removed => old_left -= 1,
            }
            hunk.lines.push(DiffLine {
                marker,
                text: body.to_string(),
                no_eol: false,
            });
            i += 1;
        }
        if i < n && lines[i].starts_with('\\') {
            mark_no_eol(&mut hunk);
            i += 1;
        }
        // a body line right after a complete hunk means the counts were short
        if i < n {
            let next = lines[i];
            let is_header = next.starts_with("--- ")
                && lines.get(i + 1).is_some_and(|l| l.starts_with("+++ "));
            if !is_header && (next.starts_with('+') || next.starts_with('-') || next.starts_with(' ')) {
                return Err(Error::MalformedDiff {
                    hunk: hunk.label(),
                    reason: "more body lines than the header declares".into(),
                });
            }
        }
        hunks.push(hunk);
    }
    Ok(hunks)
}

fn mark_no_eol(hunk: &mut DiffHunk) {
    if let Some(last) = hunk.lines.last_mut() {
        last.no_eol = true;
    }
}

/// Writes hunks back as a unified diff with canonical headers: `--- a/`,
/// `+++ b/` and explicit counts on every `@@` line.
pub fn serialize_hunks(hunks: &[DiffHunk]) -> String {
    let mut out = String::new();
    let mut current: Option<&Option<FileHeader>> = None;
    for h in hunks {
        let same_file = current.is_some_and(|c| c == &h.header) && h.header.is_some();
        if !same_file {
            if let Some(hdr) = &h.header {
                let old = if hdr.old == DEV_NULL { hdr.old.clone() } else { format!("a/{}", hdr.old) };
                let new = if hdr.new == DEV_NULL { hdr.new.clone() } else { format!("b/{}", hdr.new) };
                let _ = writeln!(out, "--- {old}\n+++ {new}");
            }
            current = Some(&h.header);
        }
        let _ = writeln!(
            out,
            "@@ -{},{} +{},{} @@{}",
            h.old_start, h.old_len, h.new_start, h.new_len, h.section
        );
        for l in &h.lines {
            out.push(l.marker.as_char());
            out.push_str(&l.text);
            out.push('\n');
            if l.no_eol {
                out.push_str("\\ No newline at end of file\n");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input() {
        assert!(parse_unified_diff("").unwrap().is_empty());
    }

    #[test]
    fn single_hunk_counts() {
        let d = "--- a/x.c\n+++ b/x.c\n@@ -1,2 +1,3 @@\n a\n+b\n c\n";
        let hunks = parse_unified_diff(d).unwrap();
        assert_eq!(hunks.len(), 1);
        let h = &hunks[0];
        assert_eq!((h.old_len, h.new_len), (2, 3));
        assert_eq!(h.file, "x.c");
        assert_eq!(h.count(LineMarker::Added), 1);
        h.validate().unwrap();
    }

    #[test]
    fn missing_headers_attach_to_unknown() {
        let hunks = parse_unified_diff("@@ -3 +3 @@\n-x\n+y\n").unwrap();
        assert_eq!(hunks[0].file, UNKNOWN_FILE);
        assert_eq!((hunks[0].old_len, hunks[0].new_len), (1, 1));
    }

    #[test]
    fn short_body_is_malformed() {
        let err = parse_unified_diff("--- a/x.c\n+++ b/x.c\n@@ -1,3 +1,3 @@\n a\n b\n").unwrap_err();
        match err {
            Error::MalformedDiff { hunk, .. } => assert!(hunk.contains("x.c @@ -1,3 +1,3 @@")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn long_body_is_malformed() {
        let err = parse_unified_diff("--- a/x.c\n+++ b/x.c\n@@ -1,1 +1,1 @@\n a\n+b\n").unwrap_err();
        assert!(matches!(err, Error::MalformedDiff { .. }));
    }

    #[test]
    fn deleted_file_uses_old_path() {
        let d = "--- a/gone.c\n+++ /dev/null\n@@ -1,2 +0,0 @@\n-x\n-y\n";
        let h = &parse_unified_diff(d).unwrap()[0];
        assert_eq!(h.file, "gone.c");
        assert_eq!(serialize_hunks(std::slice::from_ref(h)), d);
    }

    #[test]
    fn no_newline_marker_round_trips() {
        let d = "--- a/x\n+++ b/x\n@@ -1,1 +1,1 @@\n-a\n\\ No newline at end of file\n+b\n\\ No newline at end of file\n";
        let hunks = parse_unified_diff(d).unwrap();
        assert!(hunks[0].lines.iter().all(|l| l.no_eol));
        assert_eq!(serialize_hunks(&hunks), d);
    }

    #[test]
    fn git_noise_and_timestamps() {
        let d = "commit abc\nAuthor: x\n\n    msg\n\ndiff --git a/s.c b/s.c\nindex 1..2 100644\n--- a/s.c\t2020-01-01 00:00:00\n+++ b/s.c\t2020-01-02 00:00:00\n@@ -10,2 +10,2 @@ int main(void)\n-\tint a;\n+\tint b;\n \treturn 0;\n";
        let hunks = parse_unified_diff(d).unwrap();
        assert_eq!(hunks[0].file, "s.c");
        assert_eq!(hunks[0].section, " int main(void)");
        assert_eq!(
            serialize_hunks(&hunks),
            "--- a/s.c\n+++ b/s.c\n@@ -10,2 +10,2 @@ int main(void)\n-\tint a;\n+\tint b;\n \treturn 0;\n"
        );
    }
}
