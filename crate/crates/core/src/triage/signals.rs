use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ingest::scanner::identifiers;
use crate::ingest::RepoSnapshot;
use crate::llm::{extract_json, ChatClient, ChatMessage};
use crate::model::{Region, RegionKind, Unit};

/// Function length (lines) → percentile, used when the snapshot has no
/// functions to compare against. Median sits at 15 lines.
const REFERENCE_LENGTHS: [(f64, f64); 11] = [
    (0.0, 0.0),
    (3.0, 0.1),
    (5.0, 0.2),
    (7.0, 0.3),
    (10.0, 0.4),
    (15.0, 0.5),
    (20.0, 0.6),
    (27.0, 0.7),
    (38.0, 0.8),
    (60.0, 0.9),
    (120.0, 1.0),
];

/// Identifiers counted by [`KeywordScorer`].
pub const RISK_KEYWORDS: &[&str] = &[
    "gets", "strcpy", "strcat", "sprintf", "vsprintf", "scanf", "sscanf", "fscanf", "memcpy",
    "memmove", "strncpy", "alloca", "malloc", "realloc", "free", "system", "popen", "execl",
    "execlp", "execv", "execvp", "printf", "fprintf", "syslog", "recv", "recvfrom", "read",
    "fread", "fgets", "getenv", "argv", "buf", "buffer", "len", "length", "size", "input",
    "user", "offset", "idx", "index", "count", "strlen", "cmd", "command", "path", "packet",
];

/// The three normalized metadata features: length percentile, file
/// commit-count percentile and churn ratio.
pub fn meta_features(region: &Region, snapshot: &RepoSnapshot) -> [f64; 3] {
    let length = region.text.lines().count() + region.removed.len();
    let length_pct = if snapshot.functions.is_empty() {
        reference_percentile(length as f64)
    } else {
        let lengths: Vec<usize> = snapshot
            .functions
            .iter()
            .map(|f| f.body.lines().count())
            .collect();
        mid_rank(&lengths, length)
    };

    let commits_pct = match snapshot.change(&region.location.file) {
        Some(rec) if !snapshot.change_log.is_empty() => {
            let counts: Vec<usize> = snapshot.change_log.iter().map(|c| c.commits as usize).collect();
            mid_rank(&counts, rec.commits as usize)
        }
        _ => 0.0,
    };

    let churn = match region.kind {
        RegionKind::Function => 0.0,
        RegionKind::Hunk => {
            let added = region.text.lines().filter(|l| l.starts_with('+')).count();
            let context = region.text.lines().filter(|l| l.starts_with(' ')).count();
            let removed = region.removed.len();
            let total = added + removed + context;
            if total == 0 {
                0.0
            } else {
                (added + removed) as f64 / total as f64
            }
        }
    };
    [length_pct, commits_pct, churn]
}

/// Equal-weight mean of the features, clamped.
pub fn blend_meta(features: [f64; 3]) -> Unit {
    Unit::saturating(features.iter().sum::<f64>() / 3.0)
}

pub fn meta_signal(region: &Region, snapshot: &RepoSnapshot) -> Unit {
    blend_meta(meta_features(region, snapshot))
}

/// Fraction of the population below `x`, counting ties as half.
fn mid_rank(population: &[usize], x: usize) -> f64 {
    if population.is_empty() {
        return 0.0;
    }
    let below = population.iter().filter(|&&p| p < x).count() as f64;
    let equal = population.iter().filter(|&&p| p == x).count() as f64;
    (below + 0.5 * equal) / population.len() as f64
}

fn reference_percentile(len: f64) -> f64 {
    for pair in REFERENCE_LENGTHS.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if len <= x1 {
            return y0 + (y1 - y0) * (len - x0).max(0.0) / (x1 - x0);
        }
    }
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerOutput {
    pub score: f64,
    pub tokens: u64,
}

/// Pluggable source of the language-model risk signal.
pub trait RiskScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, region: &Region) -> Result<ScorerOutput>;
}

/// Counts occurrences of risky identifiers; ten or more saturate the score.
#[derive(Debug, Clone)]
pub struct KeywordScorer {
    keywords: Vec<String>,
}

impl Default for KeywordScorer {
    fn default() -> Self {
        KeywordScorer::new(RISK_KEYWORDS.iter().map(|s| s.to_string()).collect())
    }
}

impl KeywordScorer {
    pub fn new(keywords: Vec<String>) -> Self {
        KeywordScorer { keywords }
    }

    pub fn count(&self, text: &str) -> usize {
        identifiers(text)
            .filter(|id| self.keywords.iter().any(|k| k == id))
            .count()
    }
}

impl RiskScorer for KeywordScorer {
    fn name(&self) -> &str {
        "keyword"
    }

    fn score(&self, region: &Region) -> Result<ScorerOutput> {
        let n = self.count(&region.code());
        Ok(ScorerOutput {
            score: (n as f64 / 10.0).min(1.0),
            tokens: 0,
        })
    }
}

/// Asks a chat endpoint for a risk estimate in `[0, 1]`.
pub struct LlmScorer {
    client: Arc<dyn ChatClient>,
    template: String,
}

impl LlmScorer {
    pub fn new(client: Arc<dyn ChatClient>, template: impl Into<String>) -> Self {
        LlmScorer {
            client,
            template: template.into(),
        }
    }
}

impl RiskScorer for LlmScorer {
    fn name(&self) -> &str {
        "llm"
    }

    fn score(&self, region: &Region) -> Result<ScorerOutput> {
        let prompt = self
            .template
            .replace("{{FILE}}", &region.location.file)
            .replace("{{REGION}}", &region.text);
        let reply = self.client.complete(&[ChatMessage::user(prompt)])?;
        let value = extract_json(&reply.content)?;
        let score = value
            .get("risk")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::Backend("risk reply lacks a numeric \"risk\" field".into()))?;
        Ok(ScorerOutput {
            score,
            tokens: reply.tokens_used,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmSignal {
    pub value: Unit,
    pub tokens: u64,
    pub warning: Option<String>,
}

/// Runs the scorer; a failing backend yields zero plus a warning.
pub fn lm_signal(region: &Region, scorer: &dyn RiskScorer) -> LmSignal {
    match scorer.score(region) {
        Ok(out) => LmSignal {
            value: Unit::saturating(out.score),
            tokens: out.tokens,
            warning: None,
        },
        Err(e) => LmSignal {
            value: Unit::ZERO,
            tokens: 0,
            warning: Some(format!("{} scorer unavailable for {}: {e}", scorer.name(), region.id)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatReply;
    use crate::model::SourceLocation;

    fn function(text: &str) -> Region {
        let n = text.lines().count().max(1) as u32;
        Region::new("r", RegionKind::Function, SourceLocation::new("f.c", 1, n).unwrap(), text).unwrap()
    }

    #[test]
    fn meta_blend_examples() {
        assert!((blend_meta([0.5, 0.0, 0.0]).get() - 0.5 / 3.0).abs() < 1e-12);
        assert_eq!(blend_meta([0.0; 3]), Unit::ZERO);
        assert_eq!(blend_meta([1.0; 3]), Unit::ONE);
    }

    #[test]
    fn median_function_on_empty_snapshot() {
        let text = "x;\n".repeat(15);
        let f = meta_features(&function(&text), &RepoSnapshot::empty());
        assert_eq!(f, [0.5, 0.0, 0.0]);
        assert!((meta_signal(&function(&text), &RepoSnapshot::empty()).get() - 0.166667).abs() < 1e-6);
    }

    #[test]
    fn snapshot_percentiles() {
        let snap = RepoSnapshot::from_files(
            vec![(
                "f.c".to_string(),
                "int a(void) {\n return 1;\n}\nint b(void) {\n int x;\n x = 2;\n return x;\n}\n".to_string(),
            )],
            vec![crate::ingest::ChangeRecord {
                path: "f.c".into(),
                commits: 4,
                last_touch_rank: 0,
            }],
            &Default::default(),
        );
        let f = meta_features(&function("int q;\nint r;\nint s;\n"), &snap);
        // lengths 3 and 5; a 3-line region ties the first
        assert!((f[0] - 0.25).abs() < 1e-12);
        assert_eq!(f[1], 0.5);
    }

    #[test]
    fn hunk_churn() {
        let mut r = Region::new(
            "h",
            RegionKind::Hunk,
            SourceLocation::new("f.c", 1, 3).unwrap(),
            " a\n+b\n c\n",
        )
        .unwrap();
        r.removed = vec![(2, "old".into())];
        assert_eq!(meta_features(&r, &RepoSnapshot::empty())[2], 0.5);
    }

    #[test]
    fn keyword_scorer() {
        let s = KeywordScorer::default();
        let none = s.score(&function("return 0;")).unwrap();
        assert_eq!(none.score, 0.0);
        let four = s.score(&function("strcpy(buf, input);\nfree(x);")).unwrap();
        assert_eq!(four.score, 0.4);
        assert_eq!(four.tokens, 0);
        let many = s.score(&function(&"buf ".repeat(30))).unwrap();
        assert_eq!(many.score, 1.0);
    }

    struct Failing;
    impl ChatClient for Failing {
        fn complete(&self, _: &[ChatMessage]) -> Result<ChatReply> {
            Err(Error::Backend("down".into()))
        }
    }

    struct Fixed(&'static str);
    impl ChatClient for Fixed {
        fn complete(&self, _: &[ChatMessage]) -> Result<ChatReply> {
            Ok(ChatReply {
                content: self.0.into(),
                tokens_used: 17,
            })
        }
    }

    #[test]
    fn backend_failure_is_zero_with_warning() {
        let scorer = LlmScorer::new(Arc::new(Failing), "{{REGION}}");
        let sig = lm_signal(&function("gets(b);"), &scorer);
        assert_eq!(sig.value, Unit::ZERO);
        assert!(sig.warning.is_some());
    }

    #[test]
    fn llm_reply_is_clamped() {
        let scorer = LlmScorer::new(Arc::new(Fixed("{\"risk\": 1.7}")), "{{REGION}}");
        let sig = lm_signal(&function("gets(b);"), &scorer);
        assert_eq!(sig.value, Unit::ONE);
        assert_eq!(sig.tokens, 17);
    }
}
