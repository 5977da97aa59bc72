//! Seeded synthetic corpus of C functions and commits with planted
//! vulnerabilities, benign lookalikes and matching toy repositories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::snapshot::{ChangeRecord, SnapshotOptions, HISTORY_SIDECAR};
use crate::ingest::RepoSnapshot;
use crate::sample::{Label, LineRef, Sample, Split, Task};

const PROJECTS: [&str; 8] = ["netd", "imgconv", "cfgparse", "logsrv", "pktfilter", "shellkit", "archiver", "authd"];
const VERBS: [&str; 10] = ["parse", "handle", "load", "store", "format", "apply", "decode", "emit", "scan", "update"];
const NOUNS: [&str; 10] = ["header", "record", "entry", "token", "request", "field", "packet", "option", "session", "frame"];
/// Hunk counts for commit samples; the tail exercises K above 4.
const HUNK_COUNTS: [usize; 12] = [1, 2, 2, 3, 3, 4, 5, 6, 6, 8, 10, 12];
const FUNCTIONS_PER_FILE: usize = 6;
const FUNCTION_SHARE: f64 = 0.65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Gets,
    StrcpyParam,
    SprintfPath,
    FormatString,
    CommandInjection,
    TaintedLength,
    AllocOverflow,
    HelperCopy,
    UseAfterFree,
    /// Commit-only: the hunk deletes the bounds check guarding a copy.
    RemovedCheck,
    Plain,
    SafeLookalike,
    /// Benign code whose only risky call sits in unreachable code.
    DeadBranchBait,
    ConstantSink,
    Sanitized,
}

impl Pattern {
    const VULNERABLE: [Pattern; 10] = [
        Pattern::Gets,
        Pattern::StrcpyParam,
        Pattern::SprintfPath,
        Pattern::FormatString,
        Pattern::CommandInjection,
        Pattern::TaintedLength,
        Pattern::AllocOverflow,
        Pattern::HelperCopy,
        Pattern::UseAfterFree,
        Pattern::RemovedCheck,
    ];
    /// Benign patterns with relative frequencies.
    const BENIGN: [(Pattern, u32); 5] = [
        (Pattern::Plain, 30),
        (Pattern::SafeLookalike, 25),
        (Pattern::DeadBranchBait, 20),
        (Pattern::ConstantSink, 10),
        (Pattern::Sanitized, 15),
    ];

    pub fn is_vulnerable(self) -> bool {
        Pattern::VULNERABLE.contains(&self)
    }
}

/// Ground truth for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub label: Label,
    pub pattern: Pattern,
    pub task: Task,
    pub vulnerable_lines: Vec<LineRef>,
}

/// Samples, truth and the repository files each project's samples live in.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub samples: Vec<Sample>,
    pub truth: Vec<TruthRecord>,
    /// project → repository-relative path → content.
    pub repos: BTreeMap<String, BTreeMap<String, String>>,
}

impl SyntheticCorpus {
    pub fn dataset_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("samples serialize"));
            out.push('\n');
        }
        out
    }

    pub fn truth_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.truth {
            out.push_str(&serde_json::to_string(t).expect("truth serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes `dataset.jsonl`, `truth.jsonl` and `repos/<project>/...`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |path: &Path, text: &str| -> Result<()> {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(path, text).map_err(|e| Error::io(path, e))
        };
        write(&dir.join("dataset.jsonl"), &self.dataset_jsonl())?;
        write(&dir.join("truth.jsonl"), &self.truth_jsonl())?;
        for (project, files) in &self.repos {
            for (path, content) in files {
                write(&dir.join("repos").join(project).join(path), content)?;
            }
        }
        Ok(())
    }

    /// In-memory snapshot of one project, equivalent to indexing the
    /// written repository.
    pub fn snapshot(&self, project: &str) -> Result<RepoSnapshot> {
        let Some(files) = self.repos.get(project) else {
            return Ok(RepoSnapshot::empty());
        };
        let mut history = Vec::new();
        if let Some(text) = files.get(HISTORY_SIDECAR) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                history.push(serde_json::from_str::<ChangeRecord>(line)?);
            }
        }
        history.sort_by(|a, b| a.path.cmp(&b.path));
        let options = SnapshotOptions::default();
        let indexed = files
            .iter()
            .filter(|(p, _)| !p.starts_with(".vulnaudit/"))
            .map(|(p, c)| (p.clone(), c.clone()));
        Ok(RepoSnapshot::from_files(indexed, history, &options))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mark {
    Keep,
    Add,
    Del,
}

#[derive(Debug, Clone)]
struct Entry {
    mark: Mark,
    text: String,
    /// Ground-truth vulnerable line.
    truth: bool,
}

/// A function as a sequence of kept, added and deleted lines.
#[derive(Debug, Clone, Default)]
struct Body {
    entries: Vec<Entry>,
    /// Present when the function takes external text as `const char *`.
    text_param: bool,
    returns_int: bool,
}

impl Body {
    fn new() -> Body {
        Body {
            returns_int: true,
            ..Body::default()
        }
    }

    fn keep(&mut self, s: impl Into<String>) -> &mut Self {
        self.push(Mark::Keep, s, false)
    }

    fn add(&mut self, s: impl Into<String>) -> &mut Self {
        self.push(Mark::Add, s, false)
    }

    fn del(&mut self, s: impl Into<String>) -> &mut Self {
        self.push(Mark::Del, s, false)
    }

    fn bug(&mut self, mark: Mark, s: impl Into<String>) -> &mut Self {
        self.push(mark, s, true)
    }

    fn push(&mut self, mark: Mark, s: impl Into<String>, truth: bool) -> &mut Self {
        self.entries.push(Entry {
            mark,
            text: s.into(),
            truth,
        });
        self
    }

    /// Post-change lines with their truth flags.
    fn after(&self) -> Vec<(&str, bool)> {
        self.entries
            .iter()
            .filter(|e| e.mark != Mark::Del)
            .map(|e| (e.text.as_str(), e.truth))
            .collect()
    }

    fn before_len(&self) -> usize {
        self.entries.iter().filter(|e| e.mark != Mark::Add).count()
    }
}

struct Gen {
    rng: ChaCha8Rng,
    counter: usize,
}

impl Gen {
    fn name(&mut self) -> String {
        self.counter += 1;
        let v = VERBS.choose(&mut self.rng).unwrap();
        let n = NOUNS.choose(&mut self.rng).unwrap();
        format!("{v}_{n}_{}", self.counter)
    }

    fn size(&mut self) -> u32 {
        *[16u32, 32, 64].choose(&mut self.rng).unwrap()
    }

    fn pick<'a>(&mut self, items: &[&'a str]) -> &'a str {
        items.choose(&mut self.rng).unwrap()
    }

    /// Builds the function for `pattern`. In a commit the pattern's key
    /// lines are marked as added; in a function sample the marks only
    /// decide which lines exist.
    fn body(&mut self, pattern: Pattern, name: &str) -> Body {
        let mut b = Body::new();
        let sz = self.size();
        let add = Mark::Add;
        match pattern {
            Pattern::Gets => {
                b.keep(format!("int {name}(void)")).keep("{");
                b.keep(format!("    char buf[{sz}];")).keep("    size_t len;").keep("    int count = 0;");
                b.keep("    printf(\"user> \");");
                b.bug(add, "    if (gets(buf) == NULL)").keep("        return -1;");
                b.keep("    len = strlen(buf);");
                b.keep("    for (size_t idx = 0; idx < len; idx++)");
                b.keep("        count += buf[idx] == ',';");
                b.keep("    return count;").keep("}");
            }
            Pattern::StrcpyParam => {
                let p = self.pick(&["input", "user", "path"]);
                b.text_param = true;
                b.keep(format!("int {name}(const char *{p})")).keep("{");
                b.keep(format!("    char buf[{sz}];"));
                b.keep(format!("    size_t len = strlen({p});"));
                b.keep("    if (len == 0)").keep("        return -1;");
                b.bug(add, format!("    strcpy(buf, {p});"));
                b.add("    strcat(buf, \":\");");
                b.keep("    return record_user(buf, len);").keep("}");
            }
            Pattern::SprintfPath => {
                let p = self.pick(&["user", "input"]);
                b.text_param = true;
                b.keep(format!("int {name}(const char *{p})")).keep("{");
                b.keep(format!("    char path[{sz}];")).keep("    FILE *fp;");
                b.keep(format!("    size_t len = strlen({p});"));
                b.bug(add, format!("    sprintf(path, \"/var/spool/%s.queue\", {p});"));
                b.add("    strcat(path, \".lock\");");
                b.keep("    fp = fopen(path, \"r\");");
                b.keep("    if (fp == NULL)").keep("        return -1;");
                b.keep("    fclose(fp);").keep("    return (int)len;").keep("}");
            }
            Pattern::FormatString => {
                let p = self.pick(&["input", "msg"]);
                b.text_param = true;
                b.returns_int = false;
                b.keep(format!("void {name}(const char *{p})")).keep("{");
                b.keep(format!("    size_t len = strlen({p});"));
                b.keep("    if (len == 0)").keep("        return;");
                b.keep("    fprintf(stderr, \"user input (%zu bytes): \", len);");
                b.bug(add, format!("    printf({p});"));
                b.bug(add, format!("    syslog(LOG_INFO, {p});"));
                b.keep("    putchar('\\n');").keep("}");
            }
            Pattern::CommandInjection => {
                let p = self.pick(&["input", "user"]);
                b.text_param = true;
                b.keep(format!("int {name}(const char *{p})")).keep("{");
                b.keep(format!("    char cmd[{}];", sz.max(32)));
                b.keep("    strcpy(cmd, \"lookup \");");
                b.bug(add, format!("    strcat(cmd, {p});"));
                b.bug(add, "    return system(cmd);").keep("}");
            }
            Pattern::TaintedLength => {
                b.text_param = true;
                b.keep(format!("int {name}(const char *packet)")).keep("{");
                b.keep(format!("    char buf[{sz}];"));
                b.keep("    size_t len = atoi(packet);");
                b.keep("    if (len == 0)").keep("        return -1;");
                b.bug(add, "    memcpy(buf, packet + 4, len);");
                b.bug(add, "    memmove(buf + len, packet, len);");
                b.keep("    return buf[0] + (int)len;").keep("}");
            }
            Pattern::AllocOverflow => {
                b.text_param = true;
                b.returns_int = false;
                b.keep(format!("struct item *{name}(const char *input)")).keep("{");
                b.keep("    size_t count = strtoul(input, NULL, 10);");
                b.bug(add, "    struct item *items = malloc(count * sizeof(struct item));");
                b.keep("    if (items == NULL)").keep("        return NULL;");
                b.keep("    memcpy(items, input, count * sizeof(struct item));");
                b.keep("    return items;").keep("}");
            }
            Pattern::HelperCopy => {
                b.text_param = true;
                b.keep(format!("int {name}(const char *input)")).keep("{");
                b.keep(format!("    char name[{sz}];"));
                b.keep("    size_t len = strlen(input);");
                b.keep("    if (len == 0)").keep("        return -1;");
                b.bug(add, "    copy_field(name, input);");
                b.keep("    return lookup_user(name);").keep("}");
            }
            Pattern::UseAfterFree => {
                b.keep(format!("int {name}(struct request *req)")).keep("{");
                b.keep("    size_t len = req->len;");
                b.keep("    if (len == 0)").keep("        return -1;");
                b.keep("    free(req);");
                b.bug(add, "    log_event(req->path, len);");
                b.keep("    return 0;").keep("}");
            }
            Pattern::RemovedCheck => {
                b.keep(format!("int {name}(const char *input, size_t len)")).keep("{");
                b.keep(format!("    char buf[{sz}];"));
                b.del("    if (len >= sizeof buf)").del("        return -1;");
                b.bug(Mark::Keep, "    memcpy(buf, input, len);");
                b.keep("    buf[len] = '\\0';");
                b.keep("    return parse_record(buf);").keep("}");
            }
            Pattern::Plain => match self.rng.gen_range(0..3) {
                0 => {
                    b.keep(format!("int {name}(const struct node *head)")).keep("{");
                    b.keep("    int total = 0;").keep("    const struct node *it;");
                    b.keep("    for (it = head; it != NULL; it = it->next)");
                    b.add("        total += it->weight;");
                    b.keep("    return total;").keep("}");
                }
                1 => {
                    b.keep(format!("int {name}(int value, int lo, int hi)")).keep("{");
                    b.keep("    if (value < lo)").keep("        return lo;");
                    b.keep("    if (value > hi)").keep("        return hi;");
                    b.add("    return value;").keep("}");
                }
                _ => {
                    b.keep(format!("int {name}(int state, int event)")).keep("{");
                    b.keep("    switch (state) {");
                    b.keep("    case 0:").add("        return event == 1 ? 1 : 0;");
                    b.keep("    case 1:").keep("        return event == 2 ? 2 : 1;");
                    b.keep("    default:").keep("        return state;");
                    b.keep("    }").keep("}");
                }
            },
            Pattern::SafeLookalike => {
                let p = self.pick(&["input", "user"]);
                b.text_param = true;
                b.keep(format!("int {name}(const char *{p})")).keep("{");
                b.keep(format!("    char buf[{sz}];"));
                b.keep(format!("    size_t len = strlen({p});"));
                b.keep("    if (len >= sizeof buf)").keep("        return -1;");
                match self.rng.gen_range(0..3) {
                    0 => {
                        b.add(format!("    snprintf(buf, sizeof buf, \"%s\", {p});"));
                    }
                    1 => {
                        b.add(format!("    strncpy(buf, {p}, sizeof buf - 1);"));
                        b.add("    buf[sizeof buf - 1] = '\\0';");
                    }
                    _ => {
                        b.add(format!("    memcpy(buf, {p}, len + 1);"));
                    }
                }
                b.keep("    printf(\"%s\\n\", buf);");
                b.keep("    return (int)len;").keep("}");
            }
            Pattern::DeadBranchBait => {
                let p = self.pick(&["input", "user"]);
                b.text_param = true;
                b.keep(format!("int {name}(const char *{p})")).keep("{");
                b.keep(format!("    char buf[{sz}];"));
                b.keep(format!("    size_t len = strlen({p});"));
                match self.rng.gen_range(0..3) {
                    0 => {
                        b.add("#if 0");
                        b.add(format!("    strcpy(buf, {p});"));
                        b.add("    strcat(buf, \":\");");
                        b.add("#endif");
                        b.keep(format!("    snprintf(buf, sizeof buf, \"%s\", {p});"));
                        b.keep("    return (int)len;").keep("}");
                    }
                    1 => {
                        b.add("    if (0) {");
                        b.add(format!("        strcpy(buf, {p});"));
                        b.add("        strcat(buf, \":\");");
                        b.add("    }");
                        b.keep(format!("    snprintf(buf, sizeof buf, \"%s\", {p});"));
                        b.keep("    return (int)len;").keep("}");
                    }
                    _ => {
                        b.keep(format!("    snprintf(buf, sizeof buf, \"%s\", {p});"));
                        b.keep("    return (int)len;");
                        b.add(format!("    strcpy(buf, {p});"));
                        b.add("    strcat(buf, \":\");");
                        b.keep("}");
                    }
                }
            }
            Pattern::ConstantSink => {
                b.keep(format!("int {name}(char *out, size_t size)")).keep("{");
                b.keep(format!("    char buf[{}];", sz.max(32)));
                b.add("    strcpy(buf, \"guest\");");
                b.keep("    if (size <= strlen(buf))").keep("        return -1;");
                b.keep("    snprintf(out, size, \"%s\", buf);");
                b.keep("    return 0;").keep("}");
            }
            Pattern::Sanitized => {
                b.text_param = true;
                b.keep(format!("int {name}(const char *input)")).keep("{");
                b.keep(format!("    char buf[{}];", sz.max(64)));
                b.add("    if (!name_ok(input))").add("        return -1;");
                b.add("    strcpy(buf, input);");
                b.keep("    return lookup_user(buf);").keep("}");
            }
        }
        b
    }

    /// A keyword-light function with a one-line edit, used as filler hunks.
    fn filler(&mut self, name: &str) -> Body {
        let mut b = Body::new();
        let scale = self.rng.gen_range(2..9);
        b.keep(format!("int {name}(const struct node *head)")).keep("{");
        b.keep("    int total = 0;").keep("    const struct node *it;");
        b.keep("    for (it = head; it != NULL; it = it->next)");
        b.del("        total += it->weight;");
        b.add(format!("        total += it->weight * {scale};"));
        b.keep("    return total;").keep("}");
        b
    }
}

/// Helpers every project shares; samples call into them.
const UTIL_C: &str = "#include <ctype.h>
#include <stdio.h>
#include <string.h>

void copy_field(char *dst, const char *src)
{
    strcpy(dst, src);
}

int name_ok(const char *s)
{
    size_t len = strlen(s);
    if (len == 0 || len >= 32)
        return 0;
    for (size_t i = 0; i < len; i++)
        if (!isalnum((unsigned char)s[i]) && s[i] != '_')
            return 0;
    return 1;
}

int record_user(const char *name, size_t len)
{
    return name[0] != '\\0' && len > 0;
}

int lookup_user(const char *name)
{
    return name[0] == 'r' ? 0 : 1000;
}

void log_event(const char *what, size_t n)
{
    fprintf(stderr, \"%s %zu\\n\", what, n);
}

int parse_record(const char *rec)
{
    return rec[0] == '#' ? 0 : 1;
}
";

const IO_C: &str = "#include <stdio.h>
#include <string.h>

int read_line(char *out, int cap)
{
    if (fgets(out, cap, stdin) == NULL)
        return -1;
    out[strcspn(out, \"\\n\")] = '\\0';
    return 0;
}
";

fn join_function(lines: &[(&str, bool)]) -> String {
    let mut s = String::new();
    for (l, _) in lines {
        s.push_str(l);
        s.push('\n');
    }
    s
}

/// Assembles a commit touching `bodies` in one file. Returns the diff, the
/// post-image and the truth lines (new-side numbers).
fn assemble_commit(path: &str, bodies: &[Body]) -> (String, String, Vec<u32>) {
    let mut diff = format!("diff --git a/{path} b/{path}\n--- a/{path}\n+++ b/{path}\n");
    let mut post = String::from("#include <stdio.h>\n#include <stdlib.h>\n#include <string.h>\n");
    let (mut old_line, mut new_line) = (4u32, 4u32);
    let mut truth = Vec::new();
    for b in bodies {
        post.push('\n');
        old_line += 1;
        new_line += 1;
        let old_len = b.before_len() as u32;
        let new_len = b.after().len() as u32;
        let _ = writeln!(diff, "@@ -{old_line},{old_len} +{new_line},{new_len} @@");
        let mut n = new_line;
        for e in &b.entries {
            let marker = match e.mark {
                Mark::Keep => ' ',
                Mark::Add => '+',
                Mark::Del => '-',
            };
            diff.push(marker);
            diff.push_str(&e.text);
            diff.push('\n');
            if e.mark != Mark::Del {
                if e.truth {
                    truth.push(n);
                }
                post.push_str(&e.text);
                post.push('\n');
                n += 1;
            }
        }
        old_line += old_len;
        new_line += new_len;
    }
    (diff, post, truth)
}

fn pick_benign(rng: &mut ChaCha8Rng) -> Pattern {
    let total: u32 = Pattern::BENIGN.iter().map(|(_, w)| w).sum();
    let mut x = rng.gen_range(0..total);
    for (p, w) in Pattern::BENIGN {
        if x < w {
            return p;
        }
        x -= w;
    }
    unreachable!("weights cover the range")
}

#[derive(Default)]
struct ProjectFiles {
    handlers: Vec<Vec<String>>,
    dispatch: Vec<String>,
    commits: Vec<(String, String)>,
}

/// Generates `n` samples of which `round(n · vuln_fraction)` are
/// vulnerable, deterministically from `seed`.
pub fn generate_synthetic_corpus(seed: u64, n: usize, vuln_fraction: f64) -> Result<SyntheticCorpus> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("corpus needs at least 2 samples, got {n}")));
    }
    if !(vuln_fraction > 0.0 && vuln_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("vuln_fraction must lie in (0, 1), got {vuln_fraction}")));
    }
    let vulnerable = ((n as f64 * vuln_fraction).round() as usize).clamp(1, n - 1);
    let mut gen = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        counter: 0,
    };
    let mut labels: Vec<bool> = (0..n).map(|i| i < vulnerable).collect();
    labels.shuffle(&mut gen.rng);

    let mut projects: BTreeMap<&str, ProjectFiles> = PROJECTS.iter().map(|p| (*p, ProjectFiles::default())).collect();
    let mut samples = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);

    for (i, is_vuln) in labels.into_iter().enumerate() {
        let project = PROJECTS[i % PROJECTS.len()];
        let id = format!("{project}-{i:04}");
        let task = if gen.rng.gen_bool(FUNCTION_SHARE) { Task::Function } else { Task::Commit };
        let pattern = if is_vuln {
            let pool: &[Pattern] = if task == Task::Function {
                &Pattern::VULNERABLE[..9]
            } else {
                &Pattern::VULNERABLE
            };
            *pool.choose(&mut gen.rng).unwrap()
        } else {
            pick_benign(&mut gen.rng)
        };
        let label = if is_vuln { Label::Vulnerable } else { Label::Benign };
        let files = projects.get_mut(project).unwrap();
        let name = gen.name();
        let body = gen.body(pattern, &name);

        let (sample, lines) = match task {
            Task::Function => {
                if files.handlers.last().is_none_or(|f| f.len() >= FUNCTIONS_PER_FILE) {
                    files.handlers.push(Vec::new());
                }
                let path = format!("src/handlers_{}.c", files.handlers.len());
                let after = body.after();
                let code = join_function(&after);
                files.handlers.last_mut().unwrap().push(code.clone());
                if body.text_param {
                    files.dispatch.push(dispatcher(&name, body.returns_int));
                }
                let lines: Vec<LineRef> = after
                    .iter()
                    .enumerate()
                    .filter(|(_, (_, t))| *t)
                    .map(|(k, _)| LineRef {
                        file: path.clone(),
                        line: k as u32 + 1,
                    })
                    .collect();
                let sample = Sample {
                    id: id.clone(),
                    task,
                    code_or_diff: code,
                    label,
                    project: project.to_string(),
                    vulnerable_lines: None,
                    split: Split::Test,
                    file: Some(path),
                };
                (sample, lines)
            }
            Task::Commit => {
                let hunks = *HUNK_COUNTS.choose(&mut gen.rng).unwrap();
                let at = gen.rng.gen_range(0..hunks);
                let mut bodies = Vec::with_capacity(hunks);
                for h in 0..hunks {
                    if h == at {
                        bodies.push(body.clone());
                    } else {
                        let filler_name = gen.name();
                        bodies.push(gen.filler(&filler_name));
                    }
                }
                let path = format!("src/change_{}.c", files.commits.len() + 1);
                let (diff, post, truth_lines) = assemble_commit(&path, &bodies);
                files.commits.push((path.clone(), post));
                let lines: Vec<LineRef> = truth_lines
                    .into_iter()
                    .map(|line| LineRef {
                        file: path.clone(),
                        line,
                    })
                    .collect();
                let sample = Sample {
                    id: id.clone(),
                    task,
                    code_or_diff: diff,
                    label,
                    project: project.to_string(),
                    vulnerable_lines: None,
                    split: Split::Test,
                    file: None,
                };
                (sample, lines)
            }
        };
        let lines = if is_vuln { lines } else { Vec::new() };
        let mut sample = sample;
        if is_vuln {
            sample.vulnerable_lines = Some(lines.clone());
        }
        samples.push(sample);
        truth.push(TruthRecord {
            id,
            label,
            pattern,
            task,
            vulnerable_lines: lines,
        });
    }

    let mut repos = BTreeMap::new();
    for (project, files) in projects {
        repos.insert(project.to_string(), project_files(project, files, &mut gen.rng));
    }
    Ok(SyntheticCorpus { samples, truth, repos })
}

fn dispatcher(name: &str, returns_int: bool) -> String {
    let call = if returns_int {
        format!("    return {name}(line);\n")
    } else {
        format!("    {name}(line);\n    return 0;\n")
    };
    format!(
        "int on_{name}(void)\n{{\n    char line[256];\n    if (fgets(line, sizeof line, stdin) == NULL)\n        return -1;\n{call}}}\n"
    )
}

fn project_files(project: &str, files: ProjectFiles, rng: &mut ChaCha8Rng) -> BTreeMap<String, String> {
    let header = "#include <stdio.h>\n#include <stdlib.h>\n#include <string.h>\n";
    let mut out = BTreeMap::new();
    out.insert("src/util.c".to_string(), UTIL_C.to_string());
    out.insert("src/io.c".to_string(), IO_C.to_string());
    for (k, functions) in files.handlers.iter().enumerate() {
        let mut text = header.to_string();
        for f in functions {
            text.push('\n');
            text.push_str(f);
        }
        out.insert(format!("src/handlers_{}.c", k + 1), text);
    }
    if !files.dispatch.is_empty() {
        let mut text = header.to_string();
        for d in &files.dispatch {
            text.push('\n');
            text.push_str(d);
        }
        out.insert("src/dispatch.c".to_string(), text);
    }
    for (path, post) in files.commits {
        out.insert(path, post);
    }
    out.insert(
        format!("tests/test_{project}.c"),
        format!(
            "#include <assert.h>\n\nint parse_record(const char *rec);\n\nint test_{project}_records(void)\n{{\n    assert(parse_record(\"#comment\") == 0);\n    assert(parse_record(\"value\") == 1);\n    return 0;\n}}\n"
        ),
    );
    out.insert(
        "config.ini".to_string(),
        format!("[{project}]\nmax_input = 256\nlog_level = info\n"),
    );
    let mut history = String::new();
    let paths: Vec<String> = out.keys().filter(|p| p.starts_with("src/")).cloned().collect();
    for (rank, path) in paths.iter().enumerate() {
        let rec = ChangeRecord {
            path: path.clone(),
            commits: rng.gen_range(1..40),
            last_touch_rank: rank as u32 + 1,
        };
        history.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        history.push('\n');
    }
    out.insert(HISTORY_SIDECAR.to_string(), history);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_unified_diff;

    #[test]
    fn exact_vulnerable_count() {
        let c = generate_synthetic_corpus(7, 100, 0.3).unwrap();
        assert_eq!(c.samples.len(), 100);
        assert_eq!(c.samples.iter().filter(|s| s.label == Label::Vulnerable).count(), 30);
    }

    #[test]
    fn seeded_and_reproducible() {
        let a = generate_synthetic_corpus(11, 60, 0.4).unwrap();
        let b = generate_synthetic_corpus(11, 60, 0.4).unwrap();
        assert_eq!(a.dataset_jsonl(), b.dataset_jsonl());
        assert_eq!(a.repos, b.repos);
        assert_ne!(a.dataset_jsonl(), generate_synthetic_corpus(12, 60, 0.4).unwrap().dataset_jsonl());
    }

    #[test]
    fn commits_parse_and_truth_points_at_code() {
        let c = generate_synthetic_corpus(3, 120, 0.5).unwrap();
        for (s, t) in c.samples.iter().zip(&c.truth) {
            if s.task == Task::Commit {
                parse_unified_diff(&s.code_or_diff).unwrap();
            }
            assert_eq!(t.pattern.is_vulnerable(), s.label == Label::Vulnerable);
            for l in &t.vulnerable_lines {
                let content = &c.repos[&s.project][&l.file];
                let text = match s.task {
                    Task::Function => s.code_or_diff.lines().nth(l.line as usize - 1),
                    Task::Commit => content.lines().nth(l.line as usize - 1),
                };
                assert!(text.is_some_and(|t| !t.trim().is_empty()), "{} line {}", s.id, l.line);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_synthetic_corpus(1, 1, 0.5).is_err());
        assert!(generate_synthetic_corpus(1, 10, 0.0).is_err());
        assert!(generate_synthetic_corpus(1, 10, 1.0).is_err());
    }
}
