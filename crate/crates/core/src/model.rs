//! Shared domain types.
//!
//! Every score that feeds a linear combination lives on the unit interval and
//! is carried as [`Unit`], which refuses out-of-range values at construction.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Returns `min(1, max(0, x))`, rejecting NaN and infinities.
pub fn clamp_unit(x: f64) -> Result<Unit> {
    if !x.is_finite() {
        return Err(Error::InvalidValue(format!("non-finite score {x}")));
    }
    let v = x.clamp(0.0, 1.0);
    // normalise -0.0 so serialised output never carries a sign on zero
    Ok(Unit(if v == 0.0 { 0.0 } else { v }))
}

/// A real number in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Unit(f64);

impl Unit {
    pub const ZERO: Unit = Unit(0.0);
    pub const ONE: Unit = Unit(1.0);
    pub const HALF: Unit = Unit(0.5);

    pub fn new(x: f64) -> Result<Unit> {
        if x.is_finite() && (0.0..=1.0).contains(&x) {
            Ok(Unit(if x == 0.0 { 0.0 } else { x }))
        } else {
            Err(Error::InvalidValue(format!("{x} is outside [0, 1]")))
        }
    }

    /// Clamps a computed value; NaN maps to zero. Use [`clamp_unit`] where
    /// non-finite input must surface as an error.
    pub fn saturating(x: f64) -> Unit {
        clamp_unit(x).unwrap_or(Unit::ZERO)
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.0)
    }
}

impl Serialize for Unit {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        fixed6(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for Unit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let x = f64::deserialize(d)?;
        Unit::new(x).map_err(D::Error::custom)
    }
}

/// Serialises a float with exactly six fractional digits.
///
/// `{:.6}` rounds the exact binary value half-to-even, so repeated writes of
/// the same value are byte-identical.
pub fn fixed6<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::Error as _;
    let v = if *x == 0.0 { 0.0 } else { *x };
    if !v.is_finite() {
        return Err(S::Error::custom("non-finite number in report"));
    }
    let raw = serde_json::value::RawValue::from_string(format!("{v:.6}"))
        .map_err(S::Error::custom)?;
    raw.serialize(s)
}

/// Rounds to the precision used by the report writer.
pub fn quantize(x: f64) -> f64 {
    format!("{x:.6}").parse().unwrap_or(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    pub fn is_high(self) -> bool {
        matches!(self, Severity::High | Severity::Critical)
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
            Severity::Critical => "critical",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Old,
    #[default]
    New,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceLocation {
    pub file: String,
    pub line_start: u32,
    pub line_end: u32,
    #[serde(default)]
    pub side: Side,
}

impl SourceLocation {
    pub fn new(file: impl Into<String>, line_start: u32, line_end: u32) -> Result<Self> {
        let loc = SourceLocation {
            file: file.into(),
            line_start,
            line_end,
            side: Side::New,
        };
        loc.validate()?;
        Ok(loc)
    }

    pub fn line(file: impl Into<String>, line: u32) -> Result<Self> {
        Self::new(file, line, line)
    }

    pub fn validate(&self) -> Result<()> {
        if self.line_start < 1 || self.line_end < self.line_start {
            return Err(Error::InvalidValue(format!(
                "bad line range {}..{} in {}",
                self.line_start, self.line_end, self.file
            )));
        }
        Ok(())
    }

    pub fn contains_line(&self, line: u32) -> bool {
        (self.line_start..=self.line_end).contains(&line)
    }

    pub fn overlaps(&self, other: &SourceLocation) -> bool {
        self.file == other.file
            && self.line_start <= other.line_end
            && other.line_start <= self.line_end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Function,
    Hunk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleHit {
    pub rule_id: String,
    pub line: u32,
    pub excerpt: String,
}

/// Triage signals for one region.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SignalSet {
    pub s_stat: Unit,
    pub s_meta: Unit,
    pub s_lm: Unit,
    pub rule_hits: Vec<RuleHit>,
}

/// A suspicious analysis unit: a function body or a diff hunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: String,
    pub kind: RegionKind,
    pub location: SourceLocation,
    /// Source slice. For hunks, each line carries its `+`/` ` marker and
    /// line `i` (0-based) sits at `location.line_start + i`.
    pub text: String,
    /// Lines a hunk removed, anchored at the new-side line that follows
    /// them. Empty for function regions.
    pub removed: Vec<(u32, String)>,
    pub signals: SignalSet,
}

impl Region {
    pub fn new(
        id: impl Into<String>,
        kind: RegionKind,
        location: SourceLocation,
        text: impl Into<String>,
    ) -> Result<Self> {
        let region = Region {
            id: id.into(),
            kind,
            location,
            text: text.into(),
            removed: Vec::new(),
            signals: SignalSet::default(),
        };
        region.validate()?;
        Ok(region)
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::InvalidInput(format!("region {} has empty text", self.id)));
        }
        self.location.validate()?;
        for hit in &self.signals.rule_hits {
            if !self.location.contains_line(hit.line) {
                return Err(Error::InvalidValue(format!(
                    "rule hit {} at line {} lies outside region {}",
                    hit.rule_id, hit.line, self.id
                )));
            }
        }
        Ok(())
    }

    /// Iterates `(absolute line number, code)` with hunk markers stripped.
    /// Removed (`-`) lines of a pure-deletion hunk are skipped.
    pub fn numbered_lines(&self) -> impl Iterator<Item = (u32, &str)> + '_ {
        let hunk = self.kind == RegionKind::Hunk;
        self.text
            .lines()
            .filter(move |l| !(hunk && l.starts_with('-')))
            .enumerate()
            .map(move |(i, line)| {
                let code = if hunk {
                    line.strip_prefix(['+', ' ']).unwrap_or(line)
                } else {
                    line
                };
                let n = (self.location.line_start + i as u32).min(self.location.line_end);
                (n, code)
            })
    }

    /// Region text with hunk markers removed.
    pub fn code(&self) -> String {
        let mut out = String::with_capacity(self.text.len());
        for (_, line) in self.numbered_lines() {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

/// One reported issue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub issue_type: String,
    pub location: SourceLocation,
    pub evidence_summary: String,
    pub confidence: Unit,
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remediation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_tag: Option<String>,
}

impl Finding {
    pub fn validate(&self) -> Result<()> {
        if self.issue_type.is_empty() {
            return Err(Error::InvalidValue("finding without issue type".into()));
        }
        self.location.validate()
    }
}

/// The six fusion channels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvidenceVector {
    pub risk0: Unit,
    pub e_stat: Unit,
    pub e_ctx: Unit,
    pub e_agt: Unit,
    pub e_dyn: Unit,
    pub e_ctr: Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Vulnerable,
    Benign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Triage,
    Context,
    Analysis,
    Verification,
    Fusion,
}

/// Scheduler decision for a fused score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    AcceptEarly,
    Accept,
    Reject,
    Escalate,
    VerifyThenDecide,
}

impl Action {
    pub fn is_accept(self) -> bool {
        matches!(self, Action::AcceptEarly | Action::Accept)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFinding {
    pub finding: Finding,
    pub score: Unit,
    pub evidence: EvidenceVector,
    pub action: Action,
    pub region_id: String,
    /// Agents that asserted the finding, in dispatch order.
    #[serde(default)]
    pub agents: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageTokens {
    pub triage: u64,
    pub context: u64,
    pub analysis: u64,
    pub verification: u64,
}

impl StageTokens {
    pub fn total(&self) -> u64 {
        self.triage + self.context + self.analysis + self.verification
    }
}

/// Per-case accounting kept alongside the verdict.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CaseTrace {
    pub stage_tokens: StageTokens,
    pub regions_total: usize,
    pub regions_selected: usize,
    pub max_risk0: Unit,
    /// Best pre-analysis fused score; absent when triage rejected the case.
    pub interim_score: Option<Unit>,
    pub agent_dispatches: u64,
    pub analyst_invocations: u64,
    pub backend_calls: u64,
    pub verifications: u64,
}

/// Per-sample pipeline outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub sample_id: String,
    pub verdict: Verdict,
    pub case_score: Unit,
    pub findings: Vec<ScoredFinding>,
    pub stage_path: Vec<Stage>,
    pub tokens_used: u64,
    #[serde(serialize_with = "fixed6")]
    pub wall_time: f64,
    pub early_exit: bool,
    pub verified: bool,
    pub trace: CaseTrace,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CaseResult {
    /// Whether a stage path counts as an early exit.
    pub fn exits_early(path: &[Stage]) -> bool {
        !(path.contains(&Stage::Analysis) && path.contains(&Stage::Verification))
    }

    pub fn validate(&self) -> Result<()> {
        if self.early_exit != Self::exits_early(&self.stage_path) {
            return Err(Error::InvalidState(format!(
                "{}: early_exit disagrees with stage path",
                self.sample_id
            )));
        }
        if self.tokens_used != self.trace.stage_tokens.total() {
            return Err(Error::InvalidState(format!(
                "{}: tokens_used {} != stage total {}",
                self.sample_id,
                self.tokens_used,
                self.trace.stage_tokens.total()
            )));
        }
        let max = self
            .findings
            .iter()
            .map(|f| f.score.get())
            .fold(0.0_f64, f64::max);
        if (max - self.case_score.get()).abs() > 1e-12 {
            return Err(Error::InvalidState(format!(
                "{}: case_score is not the max finding score",
                self.sample_id
            )));
        }
        if !(self.wall_time.is_finite() && self.wall_time >= 0.0) {
            return Err(Error::InvalidValue("negative wall time".into()));
        }
        for f in &self.findings {
            f.finding.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_unit(0.5).unwrap().get(), 0.5);
        assert_eq!(clamp_unit(-0.2).unwrap().get(), 0.0);
        assert_eq!(clamp_unit(1.7).unwrap().get(), 1.0);
        assert!(clamp_unit(f64::NAN).is_err());
        assert!(clamp_unit(f64::INFINITY).is_err());
        assert!(clamp_unit(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn unit_rejects_out_of_range() {
        assert!(Unit::new(1.0000001).is_err());
        assert!(Unit::new(-1e-9).is_err());
        assert!(serde_json::from_str::<Unit>("1.5").is_err());
        assert_eq!(serde_json::from_str::<Unit>("0.25").unwrap().get(), 0.25);
    }

    #[test]
    fn unit_serialises_six_digits() {
        let s = serde_json::to_string(&Unit::new(0.42).unwrap()).unwrap();
        assert_eq!(s, "0.420000");
        let s = serde_json::to_string(&clamp_unit(-0.0).unwrap()).unwrap();
        assert_eq!(s, "0.000000");
        assert_eq!(quantize(1.0 / 3.0), 0.333333);
    }

    #[test]
    fn location_invariants() {
        assert!(SourceLocation::new("a.c", 0, 1).is_err());
        assert!(SourceLocation::new("a.c", 3, 2).is_err());
        let a = SourceLocation::new("a.c", 3, 5).unwrap();
        assert!(a.overlaps(&SourceLocation::line("a.c", 5).unwrap()));
        assert!(!a.overlaps(&SourceLocation::line("b.c", 5).unwrap()));
        assert!(!a.overlaps(&SourceLocation::line("a.c", 6).unwrap()));
    }

    #[test]
    fn region_requires_text() {
        let loc = SourceLocation::new("a.c", 1, 1).unwrap();
        assert!(Region::new("r", RegionKind::Function, loc.clone(), "  \n").is_err());
        assert!(Region::new("r", RegionKind::Function, loc, "x;").is_ok());
    }

    #[test]
    fn hunk_lines_drop_markers() {
        let loc = SourceLocation::new("a.c", 10, 11).unwrap();
        let r = Region::new("h", RegionKind::Hunk, loc, " int x;\n+gets(buf);").unwrap();
        let lines: Vec<_> = r.numbered_lines().collect();
        assert_eq!(lines, vec![(10, "int x;"), (11, "gets(buf);")]);
    }

    #[test]
    fn early_exit_rule() {
        use Stage::*;
        assert!(CaseResult::exits_early(&[Triage]));
        assert!(CaseResult::exits_early(&[Triage, Context, Analysis, Fusion]));
        assert!(!CaseResult::exits_early(&[
            Triage,
            Context,
            Analysis,
            Verification,
            Fusion
        ]));
    }
}
