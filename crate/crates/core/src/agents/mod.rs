//! Multi-agent analysis: routing, the analyst roles and the sceptic, two
//! backend families, and aggregation of agreement and counter-evidence.

pub mod cparse;
pub mod llm_backend;
pub mod logic;
pub mod prompts;
pub mod sceptic;
pub mod security;
pub mod semantic;
pub mod tables;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::context::{token_estimate, ContextBundle};
use crate::error::{Error, Result};
use crate::model::{Finding, Region, SourceLocation, Unit};
use crate::triage::RulePack;

pub use llm_backend::LlmBackend;
pub use prompts::PromptSet;
pub use tables::{DeadBranchTable, TaintTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentId {
    Router,
    Semantic,
    Security,
    Logic,
    Sceptic,
}

impl AgentId {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentId::Router => "router",
            AgentId::Semantic => "semantic",
            AgentId::Security => "security",
            AgentId::Logic => "logic",
            AgentId::Sceptic => "sceptic",
        }
    }

    pub fn is_analyst(self) -> bool {
        matches!(self, AgentId::Semantic | AgentId::Security | AgentId::Logic)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identity used to match findings across agents.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FindingKey {
    pub issue_type: String,
    pub file: String,
    pub line_start: u32,
    pub line_end: u32,
}

impl FindingKey {
    pub fn of(f: &Finding) -> FindingKey {
        FindingKey {
            issue_type: f.issue_type.clone(),
            file: f.location.file.clone(),
            line_start: f.location.line_start,
            line_end: f.location.line_end,
        }
    }

    /// Same issue type and file, overlapping line ranges.
    pub fn matches(&self, other: &FindingKey) -> bool {
        self.issue_type == other.issue_type
            && self.file == other.file
            && self.line_start <= other.line_end
            && other.line_start <= self.line_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterClaim {
    pub target: FindingKey,
    pub rebuttal: String,
    pub strength: Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent_id: AgentId,
    pub findings: Vec<Finding>,
    pub counter_claims: Vec<CounterClaim>,
    pub confidence: Unit,
    pub tokens_used: u64,
    /// Set when the backend failed and the report is a placeholder.
    #[serde(default)]
    pub unavailable: bool,
    /// Repository facts the agent learned, e.g. `sanitizer:clean_path`.
    #[serde(default)]
    pub facts: Vec<String>,
}

impl AgentReport {
    pub fn empty(agent_id: AgentId, tokens_used: u64) -> Self {
        AgentReport {
            agent_id,
            findings: Vec::new(),
            counter_claims: Vec::new(),
            confidence: Unit::ZERO,
            tokens_used,
            unavailable: false,
            facts: Vec::new(),
        }
    }

    pub fn unavailable(agent_id: AgentId, tokens_used: u64) -> Self {
        AgentReport {
            unavailable: true,
            ..AgentReport::empty(agent_id, tokens_used)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.agent_id == AgentId::Sceptic && !self.findings.is_empty() {
            return Err(Error::InvalidState("sceptic reports carry no findings".into()));
        }
        if self.agent_id != AgentId::Sceptic && !self.counter_claims.is_empty() {
            return Err(Error::InvalidState(format!("{} reports carry no counter claims", self.agent_id)));
        }
        for f in &self.findings {
            f.validate()?;
        }
        Ok(())
    }

    /// Overall confidence = strongest finding or claim.
    fn with_confidence(mut self) -> Self {
        let best = self
            .findings
            .iter()
            .map(|f| f.confidence.get())
            .chain(self.counter_claims.iter().map(|c| c.strength.get()))
            .fold(0.0, f64::max);
        self.confidence = Unit::saturating(best);
        self
    }

    /// Moves findings and claims from `from`'s coordinates onto `to`.
    /// Used when a cached report is reused for an identical region elsewhere.
    pub fn rebase(mut self, from: &SourceLocation, to: &SourceLocation) -> Self {
        let shift = |line: u32| -> u32 {
            let moved = line as i64 - from.line_start as i64 + to.line_start as i64;
            moved.clamp(to.line_start as i64, to.line_end as i64) as u32
        };
        for f in &mut self.findings {
            if f.location.file == from.file {
                f.location.file = to.file.clone();
                f.location.line_start = shift(f.location.line_start);
                f.location.line_end = shift(f.location.line_end).max(f.location.line_start);
            }
        }
        for c in &mut self.counter_claims {
            if c.target.file == from.file {
                c.target.file = to.file.clone();
                c.target.line_start = shift(c.target.line_start);
                c.target.line_end = shift(c.target.line_end).max(c.target.line_start);
            }
        }
        self
    }
}

const CONTROL_FLOW: &[&str] = &[
    "goto", "while", "for", "switch", "do", "break", "continue", "lock", "unlock",
    "pthread_mutex_lock", "pthread_mutex_unlock", "mutex_lock", "mutex_unlock", "spin_lock",
    "spin_unlock",
];

/// Dispatch table: security rule hits send the region to the security and
/// semantic analysts; control-flow heavy code to semantic and logic;
/// anything else to all three. The sceptic always runs last.
pub fn route(region: &Region, pack: &RulePack) -> Vec<AgentId> {
    let security_hit = region.signals.rule_hits.iter().any(|h| {
        pack.get(&h.rule_id)
            .is_some_and(|r| r.spec.category.starts_with("security/"))
    });
    let control_flow = crate::ingest::scanner::identifiers(&region.code()).any(|id| CONTROL_FLOW.contains(&id));
    let mut agents = if security_hit {
        vec![AgentId::Security, AgentId::Semantic]
    } else if control_flow {
        vec![AgentId::Semantic, AgentId::Logic]
    } else {
        vec![AgentId::Semantic, AgentId::Security, AgentId::Logic]
    };
    agents.push(AgentId::Sceptic);
    agents
}

/// Everything an agent sees for one region.
#[derive(Debug, Clone, Copy)]
pub struct AgentInput<'a> {
    pub region: &'a Region,
    pub bundle: &'a ContextBundle,
    /// Analyst findings, for the sceptic only.
    pub findings: &'a [Finding],
    /// Repository facts known so far.
    pub facts: &'a [String],
}

/// A family of agent implementations.
pub trait AgentBackend: Send + Sync {
    fn name(&self) -> &str;
    /// Never fails: backend problems yield an unavailable report.
    fn run(&self, agent: AgentId, input: &AgentInput<'_>) -> AgentReport;
}

/// Deterministic pattern-based agents. Tokens are charged as the size of
/// the prompt the role would have sent.
#[derive(Debug, Clone)]
pub struct RuleBackend {
    pub taint: TaintTable,
    pub dead: DeadBranchTable,
    pub prompts: PromptSet,
}

impl RuleBackend {
    pub fn new(taint: TaintTable, dead: DeadBranchTable, prompts: PromptSet) -> Self {
        RuleBackend { taint, dead, prompts }
    }

    pub fn builtin() -> Self {
        RuleBackend::new(TaintTable::builtin(), DeadBranchTable::builtin(), PromptSet::builtin())
    }
}

impl AgentBackend for RuleBackend {
    fn name(&self) -> &str {
        "rules"
    }

    fn run(&self, agent: AgentId, input: &AgentInput<'_>) -> AgentReport {
        let tokens = self
            .prompts
            .render_agent(agent, input)
            .map_or(0, |p| token_estimate(&p));
        let mut report = AgentReport::empty(agent, tokens);
        match agent {
            AgentId::Security => report.findings = security::analyse(input.region, input.bundle, &self.taint),
            AgentId::Semantic => report.findings = semantic::analyse(input.region),
            AgentId::Logic => report.findings = logic::analyse(input.region),
            AgentId::Sceptic => {
                let (claims, facts) = sceptic::analyse(input, &self.dead, &self.taint);
                report.counter_claims = claims;
                report.facts = facts;
            }
            AgentId::Router => {}
        }
        report.with_confidence()
    }
}

/// `Σ confidence of analysts asserting key / analysts dispatched`.
pub fn agreement_score(reports: &[AgentReport], key: &FindingKey) -> Result<Unit> {
    let analysts: Vec<&AgentReport> = reports.iter().filter(|r| r.agent_id.is_analyst()).collect();
    if analysts.is_empty() {
        return Err(Error::InvalidState("no analyst agents were dispatched".into()));
    }
    let sum: f64 = analysts
        .iter()
        .map(|r| {
            r.findings
                .iter()
                .filter(|f| key.matches(&FindingKey::of(f)))
                .map(|f| f.confidence.get())
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(Unit::saturating(sum / analysts.len() as f64))
}

/// Strongest sceptic claim against `key`, zero when none.
pub fn counter_score(reports: &[AgentReport], key: &FindingKey) -> Unit {
    let best = reports
        .iter()
        .filter(|r| r.agent_id == AgentId::Sceptic)
        .flat_map(|r| &r.counter_claims)
        .filter(|c| c.target.matches(key))
        .map(|c| c.strength.get())
        .fold(0.0, f64::max);
    Unit::saturating(best)
}

/// A finding asserted by one or more analysts.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedFinding {
    pub finding: Finding,
    pub agents: Vec<AgentId>,
}

/// Groups matching findings across analysts. The representative is the
/// most confident one; ties keep the earlier report.
pub fn merge_findings(reports: &[AgentReport]) -> Vec<MergedFinding> {
    let mut merged: Vec<MergedFinding> = Vec::new();
    for report in reports.iter().filter(|r| r.agent_id.is_analyst()) {
        for f in &report.findings {
            let key = FindingKey::of(f);
            match merged.iter_mut().find(|m| FindingKey::of(&m.finding).matches(&key)) {
                Some(m) => {
                    if !m.agents.contains(&report.agent_id) {
                        m.agents.push(report.agent_id);
                    }
                    if f.confidence.get() > m.finding.confidence.get() {
                        m.finding = f.clone();
                    }
                }
                None => merged.push(MergedFinding {
                    finding: f.clone(),
                    agents: vec![report.agent_id],
                }),
            }
        }
    }
    merged
}

/// Builds a finding on `line` of `region`.
pub(crate) fn finding_at(
    region: &Region,
    line: u32,
    issue_type: &str,
    evidence: String,
    confidence: f64,
    severity: crate::model::Severity,
    remediation: &str,
) -> Finding {
    let line = line.clamp(region.location.line_start, region.location.line_end);
    Finding {
        issue_type: issue_type.to_string(),
        location: SourceLocation {
            file: region.location.file.clone(),
            line_start: line,
            line_end: line,
            side: region.location.side,
        },
        evidence_summary: evidence,
        confidence: Unit::saturating(confidence),
        severity,
        remediation: Some(remediation.to_string()),
        error_tag: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RegionKind, RuleHit, Severity};

    fn region(text: &str, hits: &[&str]) -> Region {
        let n = text.lines().count() as u32;
        let mut r = Region::new("r", RegionKind::Function, SourceLocation::new("f.c", 1, n).unwrap(), text).unwrap();
        r.signals.rule_hits = hits
            .iter()
            .map(|id| RuleHit {
                rule_id: id.to_string(),
                line: 1,
                excerpt: String::new(),
            })
            .collect();
        r
    }

    fn finding(issue: &str, line: u32, conf: f64) -> Finding {
        Finding {
            issue_type: issue.into(),
            location: SourceLocation::line("f.c", line).unwrap(),
            evidence_summary: String::new(),
            confidence: Unit::new(conf).unwrap(),
            severity: Severity::High,
            remediation: None,
            error_tag: None,
        }
    }

    fn report(agent: AgentId, findings: Vec<Finding>) -> AgentReport {
        AgentReport {
            findings,
            ..AgentReport::empty(agent, 0)
        }
    }

    #[test]
    fn routing_table() {
        let pack = RulePack::builtin();
        assert_eq!(
            route(&region("strcpy(d, s);", &["C002"]), &pack),
            [AgentId::Security, AgentId::Semantic, AgentId::Sceptic]
        );
        assert_eq!(
            route(&region("x = 1;", &[]), &pack),
            [AgentId::Semantic, AgentId::Security, AgentId::Logic, AgentId::Sceptic]
        );
        assert_eq!(
            route(&region("while (x) x--;", &[]), &pack),
            [AgentId::Semantic, AgentId::Logic, AgentId::Sceptic]
        );
    }

    #[test]
    fn agreement_examples() {
        let key = FindingKey::of(&finding("security/x", 3, 0.9));
        let reports = vec![
            report(AgentId::Security, vec![finding("security/x", 3, 0.9)]),
            report(AgentId::Semantic, vec![]),
            report(AgentId::Logic, vec![]),
            AgentReport::empty(AgentId::Sceptic, 0),
        ];
        assert!((agreement_score(&reports, &key).unwrap().get() - 0.3).abs() < 1e-12);

        let all: Vec<_> = [AgentId::Security, AgentId::Semantic, AgentId::Logic]
            .into_iter()
            .map(|a| report(a, vec![finding("security/x", 3, 1.0)]))
            .collect();
        assert_eq!(agreement_score(&all, &key).unwrap(), Unit::ONE);

        let none: Vec<_> = [AgentId::Security, AgentId::Semantic].into_iter().map(|a| report(a, vec![])).collect();
        assert_eq!(agreement_score(&none, &key).unwrap(), Unit::ZERO);

        assert!(agreement_score(&[AgentReport::empty(AgentId::Sceptic, 0)], &key).is_err());
    }

    #[test]
    fn counter_examples() {
        let key = FindingKey::of(&finding("security/x", 3, 0.9));
        let claim = |strength: f64, issue: &str| CounterClaim {
            target: FindingKey::of(&finding(issue, 3, 0.5)),
            rebuttal: String::new(),
            strength: Unit::new(strength).unwrap(),
        };
        let mut sceptic = AgentReport::empty(AgentId::Sceptic, 0);
        assert_eq!(counter_score(&[sceptic.clone()], &key), Unit::ZERO);
        sceptic.counter_claims = vec![claim(0.4, "security/x"), claim(0.8, "security/x")];
        assert_eq!(counter_score(&[sceptic.clone()], &key).get(), 0.8);
        sceptic.counter_claims = vec![claim(0.8, "security/y")];
        assert_eq!(counter_score(&[sceptic], &key), Unit::ZERO);
    }

    #[test]
    fn merge_keeps_most_confident() {
        let reports = vec![
            report(AgentId::Security, vec![finding("security/x", 3, 0.9)]),
            report(AgentId::Semantic, vec![finding("security/x", 3, 0.8), finding("security/y", 5, 0.7)]),
        ];
        let merged = merge_findings(&reports);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].agents, [AgentId::Security, AgentId::Semantic]);
        assert_eq!(merged[0].finding.confidence.get(), 0.9);
    }

    #[test]
    fn report_invariants() {
        let mut r = report(AgentId::Sceptic, vec![finding("a", 1, 0.5)]);
        assert!(r.validate().is_err());
        r.findings.clear();
        r.validate().unwrap();
    }
}
