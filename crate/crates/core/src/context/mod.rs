//! Bounded repository context for a region: candidate generation,
//! relevance scoring and greedy packing into a token budget.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::scanner::{called_names, identifiers, scan_functions};
use crate::ingest::{FunctionRecord, RepoSnapshot};
use crate::model::{Region, RegionKind, SourceLocation, Unit};
use crate::triage::check_convex;

/// `ceil(bytes / 4)`.
pub fn token_estimate(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

/// Converts text to a token count. Swap in an exact tokenizer when one is
/// available for the backend.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ByteEstimator;

impl TokenEstimator for ByteEstimator {
    fn estimate(&self, text: &str) -> u64 {
        token_estimate(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Caller,
    Callee,
    Config,
    Test,
    SimilarChange,
    SiblingCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextItem {
    pub kind: ContextKind,
    pub path: String,
    /// Set for function-level items; whole-file items carry `None`.
    pub location: Option<SourceLocation>,
    /// Name of the function the item holds, if any.
    pub symbol: Option<String>,
    pub text: String,
    pub rel: Unit,
    pub token_cost: u64,
    pub truncated: bool,
}

impl ContextItem {
    fn new(kind: ContextKind, path: &str, location: Option<SourceLocation>, symbol: Option<&str>, text: &str) -> Self {
        ContextItem {
            kind,
            path: path.to_string(),
            location,
            symbol: symbol.map(str::to_string),
            text: text.to_string(),
            rel: Unit::ZERO,
            token_cost: token_estimate(text),
            truncated: false,
        }
    }

    fn line_start(&self) -> u32 {
        self.location.as_ref().map_or(0, |l| l.line_start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceCoefficients {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for RelevanceCoefficients {
    fn default() -> Self {
        RelevanceCoefficients {
            lambda1: 0.5,
            lambda2: 0.3,
            lambda3: 0.2,
        }
    }
}

impl RelevanceCoefficients {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let c = RelevanceCoefficients { lambda1, lambda2, lambda3 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        check_convex("relevance coefficients", &[self.lambda1, self.lambda2, self.lambda3])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub region_id: String,
    pub items: Vec<ContextItem>,
    pub total_tokens: u64,
    pub budget: u64,
}

impl ContextBundle {
    pub fn empty(region_id: impl Into<String>, budget: u64) -> Self {
        ContextBundle {
            region_id: region_id.into(),
            items: Vec::new(),
            total_tokens: 0,
            budget,
        }
    }

    /// Mean relevance of the packed items; zero when empty.
    pub fn mean_relevance(&self) -> Unit {
        if self.items.is_empty() {
            return Unit::ZERO;
        }
        let sum: f64 = self.items.iter().map(|i| i.rel.get()).sum();
        Unit::saturating(sum / self.items.len() as f64)
    }

    /// Content digest of the packed items.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for item in &self.items {
            h.update(format!("{:?}\0{}\0{}\0", item.kind, item.path, item.line_start()).as_bytes());
            h.update(item.text.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    /// Functions available as one-level summaries (callers, callees, siblings).
    pub fn functions(&self) -> impl Iterator<Item = (&str, &str)> {
        self.items.iter().filter_map(|i| match i.kind {
            ContextKind::Callee | ContextKind::Caller | ContextKind::SiblingCode => {
                i.symbol.as_deref().map(|s| (s, i.text.as_str()))
            }
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_tokens > self.budget {
            return Err(Error::InvalidState(format!(
                "bundle for {} uses {} of {} tokens",
                self.region_id, self.total_tokens, self.budget
            )));
        }
        Ok(())
    }
}

fn is_test_path(path: &str) -> bool {
    let (dir, file) = path.rsplit_once('/').unwrap_or(("", path));
    let stem = file.split('.').next().unwrap_or("");
    dir.split('/').any(|d| matches!(d, "test" | "tests" | "spec"))
        || stem.starts_with("test_")
        || stem.ends_with("_test")
        || stem == "test"
}

fn is_root_config(path: &str) -> bool {
    if path.contains('/') {
        return false;
    }
    let lower = path.to_ascii_lowercase();
    lower.contains("config")
        || lower.contains("conf")
        || [".ini", ".yaml", ".yml", ".toml", ".json"].iter().any(|e| lower.ends_with(e))
}

fn dir_of(path: &str) -> &str {
    path.rfind('/').map_or("", |i| &path[..i])
}

/// Snapshot functions the region belongs to.
fn own_functions<'a>(region: &Region, snapshot: &'a RepoSnapshot) -> Vec<&'a FunctionRecord> {
    let file = &region.location.file;
    match region.kind {
        RegionKind::Function => {
            let names: Vec<String> = scan_functions(&region.code()).into_iter().map(|f| f.name).collect();
            snapshot
                .functions
                .iter()
                .filter(|f| &f.location.file == file && names.contains(&f.name))
                .collect()
        }
        RegionKind::Hunk => snapshot
            .functions
            .iter()
            .filter(|f| &f.location.file == file && f.location.overlaps(&region.location))
            .collect(),
    }
}

/// Names of the functions the region defines or edits.
fn region_names(region: &Region, own: &[&FunctionRecord]) -> BTreeSet<String> {
    let mut names: BTreeSet<String> = own.iter().map(|f| f.name.clone()).collect();
    if region.kind == RegionKind::Function {
        names.extend(scan_functions(&region.code()).into_iter().map(|f| f.name));
    }
    names
}

/// Enumerates unscored context candidates for `region`.
pub fn candidate_context(region: &Region, snapshot: &RepoSnapshot) -> Vec<ContextItem> {
    if snapshot.is_empty() {
        return Vec::new();
    }
    let own = own_functions(region, snapshot);
    let own_ids: BTreeSet<&str> = own.iter().map(|f| f.id.as_str()).collect();
    let names = region_names(region, &own);
    let mut taken: BTreeSet<&str> = own_ids.clone();
    let mut items = Vec::new();

    let code = region.code();
    let body = match region.kind {
        RegionKind::Function => code.find('{').map_or(code.as_str(), |i| &code[i..]),
        RegionKind::Hunk => code.as_str(),
    };
    let usable = |f: &FunctionRecord| !is_test_path(&f.location.file);

    for name in called_names(body) {
        if names.contains(&name) {
            continue;
        }
        for f in snapshot.functions_named(&name) {
            if usable(f) && taken.insert(f.id.as_str()) {
                items.push(ContextItem::new(ContextKind::Callee, &f.location.file, Some(f.location.clone()), Some(&f.name), &f.body));
            }
        }
    }
    for name in &names {
        for f in snapshot.callers_of(name) {
            if usable(f) && taken.insert(f.id.as_str()) {
                items.push(ContextItem::new(ContextKind::Caller, &f.location.file, Some(f.location.clone()), Some(&f.name), &f.body));
            }
        }
    }
    for f in snapshot.functions.iter().filter(|f| f.location.file == region.location.file) {
        if usable(f) && taken.insert(f.id.as_str()) {
            items.push(ContextItem::new(ContextKind::SiblingCode, &f.location.file, Some(f.location.clone()), Some(&f.name), &f.body));
        }
    }

    let region_dir = dir_of(&region.location.file);
    for file in &snapshot.files {
        let path = file.path.as_str();
        if path == region.location.file || file.content.trim().is_empty() {
            continue;
        }
        if is_test_path(path) {
            items.push(ContextItem::new(ContextKind::Test, path, None, None, &file.content));
        } else if is_root_config(path) {
            items.push(ContextItem::new(ContextKind::Config, path, None, None, &file.content));
        } else if dir_of(path) == region_dir && snapshot.change(path).is_some_and(|c| c.commits > 0) {
            items.push(ContextItem::new(ContextKind::SimilarChange, path, None, None, &file.content));
        }
    }
    items
}

/// Identifier-set Jaccard similarity.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let sa: BTreeSet<&str> = identifiers(a).collect();
    let sb: BTreeSet<&str> = identifiers(b).collect();
    if sa.is_empty() && sb.is_empty() {
        return 0.0;
    }
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    inter / union
}

/// `[Sim_sem, Sim_dep, Sim_chg]` for one candidate.
pub fn similarity_terms(item: &ContextItem, region: &Region, snapshot: &RepoSnapshot) -> [f64; 3] {
    let sem = jaccard(&item.text, &region.code());
    let dep = match item.kind {
        ContextKind::Caller | ContextKind::Callee => 1.0,
        ContextKind::SiblingCode => 0.5,
        _ => 0.0,
    };
    let chg = match (snapshot.change(&item.path), snapshot.change(&region.location.file)) {
        (Some(a), Some(b)) if a.commits > 0 && b.commits > 0 && a.last_touch_rank == b.last_touch_rank => 1.0,
        _ => 0.0,
    };
    [sem, dep, chg]
}

/// `λ₁·Sim_sem + λ₂·Sim_dep + λ₃·Sim_chg`.
pub fn relevance(terms: [f64; 3], c: &RelevanceCoefficients) -> Unit {
    Unit::saturating(c.lambda1 * terms[0] + c.lambda2 * terms[1] + c.lambda3 * terms[2])
}

pub fn score_candidates(
    mut items: Vec<ContextItem>,
    region: &Region,
    snapshot: &RepoSnapshot,
    c: &RelevanceCoefficients,
) -> Vec<ContextItem> {
    for item in &mut items {
        item.rel = relevance(similarity_terms(item, region, snapshot), c);
    }
    items
}

/// Bundle order: relevance descending, then path, start line and kind.
pub fn bundle_order(a: &ContextItem, b: &ContextItem) -> std::cmp::Ordering {
    b.rel
        .get()
        .total_cmp(&a.rel.get())
        .then_with(|| a.path.cmp(&b.path))
        .then_with(|| a.line_start().cmp(&b.line_start()))
        .then_with(|| a.kind.cmp(&b.kind))
}

pub fn pack_context(region_id: &str, items: Vec<ContextItem>, budget: u64) -> Result<ContextBundle> {
    pack_context_with(region_id, items, budget, &ByteEstimator)
}

/// Greedy packing in bundle order. An item is taken when it fits the
/// remaining budget; an item larger than the whole budget is cut at a line
/// boundary to fit whatever remains.
pub fn pack_context_with(
    region_id: &str,
    mut items: Vec<ContextItem>,
    budget: u64,
    estimator: &dyn TokenEstimator,
) -> Result<ContextBundle> {
    if budget < 1 {
        return Err(Error::InvalidConfig("context budget must be at least 1".into()));
    }
    items.sort_by(bundle_order);
    let mut bundle = ContextBundle::empty(region_id, budget);
    for mut item in items {
        let remaining = budget - bundle.total_tokens;
        if item.token_cost <= remaining {
            bundle.total_tokens += item.token_cost;
            bundle.items.push(item);
        } else if item.token_cost > budget && remaining > 0 {
            let cut = truncate_lines(&item.text, remaining, estimator);
            if cut.is_empty() {
                continue;
            }
            item.token_cost = estimator.estimate(&cut);
            item.text = cut;
            item.truncated = true;
            bundle.total_tokens += item.token_cost;
            bundle.items.push(item);
        }
    }
    bundle.validate()?;
    Ok(bundle)
}

fn truncate_lines(text: &str, max_tokens: u64, estimator: &dyn TokenEstimator) -> String {
    let mut end = 0;
    for (i, _) in text.match_indices('\n') {
        if estimator.estimate(&text[..=i]) > max_tokens {
            break;
        }
        end = i + 1;
    }
    text[..end].to_string()
}

/// Candidate generation, scoring and packing for one region.
pub fn build_bundle(
    region: &Region,
    snapshot: &RepoSnapshot,
    c: &RelevanceCoefficients,
    budget: u64,
) -> Result<ContextBundle> {
    let items = score_candidates(candidate_context(region, snapshot), region, snapshot, c);
    pack_context(&region.id, items, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ChangeRecord, SnapshotOptions};

    fn item(path: &str, rel: f64, tokens: u64) -> ContextItem {
        let text = "abcd".repeat(tokens as usize);
        let mut it = ContextItem::new(ContextKind::Test, path, None, None, &text);
        it.rel = Unit::new(rel).unwrap();
        it
    }

    fn function_region(file: &str, text: &str) -> Region {
        let n = text.lines().count() as u32;
        Region::new("r#fn", RegionKind::Function, SourceLocation::new(file, 1, n).unwrap(), text).unwrap()
    }

    #[test]
    fn token_estimates() {
        assert_eq!(token_estimate(""), 0);
        assert_eq!(token_estimate(&"x".repeat(4000)), 1000);
        assert_eq!(token_estimate("0123456789"), 3);
    }

    #[test]
    fn relevance_examples() {
        let c = RelevanceCoefficients::new(0.5, 0.3, 0.2).unwrap();
        assert!((relevance([0.5, 1.0, 0.0], &c).get() - 0.55).abs() < 1e-12);
        assert_eq!(relevance([1.0, 1.0, 1.0], &RelevanceCoefficients::default()), Unit::ONE);
        assert_eq!(relevance([0.0, 0.0, 0.0], &c), Unit::ZERO);
    }

    #[test]
    fn greedy_packing_example() {
        let items = vec![item("a", 0.9, 3000), item("b", 0.8, 2500), item("c", 0.7, 1000)];
        let b = pack_context("r", items, 6000).unwrap();
        let paths: Vec<_> = b.items.iter().map(|i| i.path.as_str()).collect();
        assert_eq!(paths, ["a", "b"]);
        assert_eq!(b.total_tokens, 5500);
    }

    #[test]
    fn empty_and_invalid_budget() {
        let b = pack_context("r", vec![], 6000).unwrap();
        assert_eq!(b.total_tokens, 0);
        assert!(b.items.is_empty());
        assert!(matches!(pack_context("r", vec![], 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn oversized_item_truncated_at_line() {
        let text = "0123456789abcde\n".repeat(100); // 4 tokens per line, 400 total
        let mut big = ContextItem::new(ContextKind::Test, "t/x.c", None, None, &text);
        big.rel = Unit::ONE;
        let b = pack_context("r", vec![item("a", 0.9, 0), big, item("z", 0.1, 10)], 50).unwrap();
        let cut = &b.items[0];
        assert!(cut.truncated);
        assert!(cut.text.ends_with('\n'));
        assert_eq!(cut.token_cost, 48);
        assert!(b.total_tokens <= 50);
    }

    fn fixture() -> RepoSnapshot {
        let files = vec![
            (
                "src/a.c".to_string(),
                "int helper(int x) {\n  return x + 1;\n}\n\nint target(int v) {\n  return helper(v) * 2;\n}\n".to_string(),
            ),
            (
                "src/b.c".to_string(),
                "int one(void) {\n  return target(1);\n}\nint two(void) {\n  return target(2);\n}\n".to_string(),
            ),
            ("tests/test_a.c".to_string(), "int t(void) { return target(3) == 8; }\n".to_string()),
            ("config.ini".to_string(), "[limits]\nmax=4\n".to_string()),
        ];
        RepoSnapshot::from_files(files, vec![], &SnapshotOptions::default())
    }

    #[test]
    fn fixture_yields_five_candidates() {
        let snap = fixture();
        let region = function_region("src/a.c", "int target(int v) {\n  return helper(v) * 2;\n}\n");
        let items = candidate_context(&region, &snap);
        let kinds: Vec<_> = items.iter().map(|i| i.kind).collect();
        assert_eq!(items.len(), 5, "{kinds:?}");
        assert_eq!(kinds.iter().filter(|k| **k == ContextKind::Caller).count(), 2);
        assert_eq!(kinds.iter().filter(|k| **k == ContextKind::Callee).count(), 1);
        assert_eq!(kinds.iter().filter(|k| **k == ContextKind::Test).count(), 1);
        assert_eq!(kinds.iter().filter(|k| **k == ContextKind::Config).count(), 1);
    }

    #[test]
    fn single_edge_gives_one_callee() {
        let snap = RepoSnapshot::from_files(
            vec![("m.c".to_string(), "int g(void) { return 0; }\nint f(void) { return g(); }\n".to_string())],
            vec![],
            &SnapshotOptions::default(),
        );
        let region = function_region("m.c", "int f(void) { return g(); }\n");
        let items = candidate_context(&region, &snap);
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].kind, ContextKind::Callee);
        assert_eq!(items[0].symbol.as_deref(), Some("g"));
    }

    #[test]
    fn empty_snapshot_no_candidates() {
        let region = function_region("m.c", "int f(void) { return g(); }\n");
        assert!(candidate_context(&region, &RepoSnapshot::empty()).is_empty());
    }

    #[test]
    fn identical_callee_with_cochange_is_one() {
        let text = "int g(int a) { return a; }\n";
        let snap = RepoSnapshot::from_files(
            vec![("m.c".to_string(), text.to_string())],
            vec![ChangeRecord {
                path: "m.c".into(),
                commits: 2,
                last_touch_rank: 0,
            }],
            &SnapshotOptions::default(),
        );
        let region = function_region("m.c", text);
        let it = ContextItem::new(ContextKind::Callee, "m.c", None, Some("g"), text);
        let terms = similarity_terms(&it, &region, &snap);
        assert_eq!(terms, [1.0, 1.0, 1.0]);
        assert_eq!(relevance(terms, &RelevanceCoefficients::new(0.2, 0.2, 0.6).unwrap()), Unit::ONE);
    }
}
