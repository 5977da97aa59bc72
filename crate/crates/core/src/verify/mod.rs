//! Selective dynamic confirmation of findings.

pub mod sandbox;
pub mod templates;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agents::prompts::{fill, render_findings};
use crate::agents::sceptic::dead_lines;
use crate::agents::tables::{DeadBranchTable, TaintTable};
use crate::agents::FindingKey;
use crate::context::token_estimate;
use crate::error::{Error, Result};
use crate::fusion::Thresholds;
use crate::llm::{extract_json, ChatClient, ChatMessage};
use crate::model::{Finding, Region, Unit};
pub use templates::TemplateTable;

pub const DEFAULT_TIMEOUT_SECS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtefactKind {
    ReproInput,
    UnitTest,
    Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedSignal {
    NonzeroExit,
    CrashMarker,
    AssertionFail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationStatus {
    Reproduced,
    NotReproduced,
    Inconclusive,
}

impl VerificationStatus {
    pub fn e_dyn(self) -> Unit {
        match self {
            VerificationStatus::Reproduced => Unit::ONE,
            VerificationStatus::NotReproduced => Unit::ZERO,
            VerificationStatus::Inconclusive => Unit::HALF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub status: VerificationStatus,
    pub e_dyn: Unit,
    pub log_excerpt: String,
    /// Seconds.
    pub elapsed: f64,
}

impl VerificationOutcome {
    pub fn new(status: VerificationStatus, log_excerpt: String, elapsed: f64) -> Self {
        VerificationOutcome {
            status,
            e_dyn: status.e_dyn(),
            log_excerpt,
            elapsed,
        }
    }
}

/// A runnable artefact plus the sandbox it runs in. The sandbox directory is
/// removed when the plan is dropped.
#[derive(Debug)]
pub struct VerificationPlan {
    pub finding_key: FindingKey,
    pub artefact_kind: ArtefactKind,
    pub command: Vec<String>,
    pub workdir: PathBuf,
    pub timeout: Duration,
    pub expected_signal: ExpectedSignal,
    /// C source compiled to `./harness` before the command runs.
    pub source: Option<String>,
    /// Extra files written into the workdir, by relative path.
    pub files: Vec<(PathBuf, String)>,
    _sandbox: tempfile::TempDir,
}

impl VerificationPlan {
    /// A plan running `command` in a fresh sandbox.
    pub fn new(
        finding_key: FindingKey,
        artefact_kind: ArtefactKind,
        command: Vec<String>,
        timeout: Duration,
        expected_signal: ExpectedSignal,
    ) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::InvalidInput("verification command is empty".into()));
        }
        if timeout.is_zero() {
            return Err(Error::InvalidInput("verification timeout must be positive".into()));
        }
        let dir = sandbox::sandbox()?;
        Ok(VerificationPlan {
            finding_key,
            artefact_kind,
            command,
            workdir: dir.path().to_path_buf(),
            timeout,
            expected_signal,
            source: None,
            files: Vec::new(),
            _sandbox: dir,
        })
    }

    fn harness(key: FindingKey, kind: ArtefactKind, signal: ExpectedSignal, source: String, timeout: Duration) -> Result<Self> {
        let mut plan = VerificationPlan::new(key, kind, vec!["./harness".into()], timeout, signal)?;
        plan.source = Some(source);
        Ok(plan)
    }
}

/// Only high-impact findings whose interim score sits in the uncertain band
/// are worth executing.
pub fn should_verify(finding: &Finding, interim: f64, t: &Thresholds) -> bool {
    finding.severity.is_high() && t.in_band(interim)
}

/// Result of one verification attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationRun {
    pub outcome: VerificationOutcome,
    pub tokens: u64,
    /// False when no plan could be built and nothing ran.
    pub executed: bool,
}

#[derive(Clone)]
pub struct Verifier {
    pub templates: TemplateTable,
    pub taint: TaintTable,
    pub timeout: Duration,
    pub compiler: String,
    pub prompt: String,
    /// Lines these patterns mark unreachable get no harness.
    pub dead: DeadBranchTable,
    llm: Option<Arc<dyn ChatClient>>,
}

impl Verifier {
    pub fn new(templates: TemplateTable, taint: TaintTable, prompt: String, timeout_secs: f64) -> Result<Self> {
        if !(timeout_secs.is_finite() && timeout_secs > 0.0) {
            return Err(Error::InvalidConfig(format!("verify timeout must be positive, got {timeout_secs}")));
        }
        Ok(Verifier {
            templates,
            taint,
            timeout: Duration::from_secs_f64(timeout_secs),
            compiler: "cc".into(),
            prompt,
            dead: DeadBranchTable::builtin(),
            llm: None,
        })
    }

    pub fn builtin() -> Self {
        let prompt = crate::agents::PromptSet::builtin().verification;
        Verifier::new(TemplateTable::builtin(), TaintTable::builtin(), prompt, DEFAULT_TIMEOUT_SECS).unwrap()
    }

    pub fn with_dead_branches(mut self, dead: DeadBranchTable) -> Self {
        self.dead = dead;
        self
    }

    pub fn with_llm(mut self, client: Arc<dyn ChatClient>) -> Self {
        self.llm = Some(client);
        self
    }

    pub fn render_prompt(&self, finding: &Finding, region: &Region) -> String {
        fill(
            &self.prompt,
            &[
                ("{{FINDINGS}}", &render_findings(std::slice::from_ref(finding))),
                ("{{REGION}}", &region.text),
                ("{{FILE}}", &region.location.file),
            ],
        )
    }

    /// Plan for `finding`, `None` when neither a template nor a model can
    /// produce one. Also returns the tokens charged for planning.
    pub fn build_plan(&self, finding: &Finding, region: &Region) -> Result<(Option<VerificationPlan>, u64)> {
        let key = FindingKey::of(finding);
        if let Some(client) = &self.llm {
            let prompt = self.render_prompt(finding, region);
            let reply = match client.complete(&[ChatMessage::user(prompt)]) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("verification planner unavailable: {e}");
                    return Ok((None, 0));
                }
            };
            let parsed = extract_json(&reply.content).ok().and_then(|v| {
                let source = v.get("source")?.as_str()?.to_string();
                let signal = serde_json::from_value(v.get("expected_signal")?.clone()).ok()?;
                Some((source, signal))
            });
            return match parsed {
                Some((source, signal)) => Ok((
                    Some(VerificationPlan::harness(key, ArtefactKind::UnitTest, signal, source, self.timeout)?),
                    reply.tokens_used,
                )),
                None => Ok((None, reply.tokens_used)),
            };
        }
        let tokens = token_estimate(&self.render_prompt(finding, region));
        // no input can drive execution to an unreachable sink
        if dead_lines(region, &self.dead).contains(&finding.location.line_start) {
            return Ok((None, tokens));
        }
        match self.templates.instantiate(finding, region, &self.taint) {
            Some((spec, source)) => Ok((
                Some(VerificationPlan::harness(key, spec.artefact_kind, spec.expected_signal, source, self.timeout)?),
                tokens,
            )),
            None => Ok((None, tokens)),
        }
    }

    pub fn execute(&self, plan: &VerificationPlan) -> Result<VerificationOutcome> {
        sandbox::execute(plan, &self.compiler)
    }

    /// Plans and runs `finding` once.
    pub fn verify(&self, finding: &Finding, region: &Region) -> Result<VerificationRun> {
        let (plan, tokens) = self.build_plan(finding, region)?;
        match plan {
            Some(plan) => Ok(VerificationRun {
                outcome: self.execute(&plan)?,
                tokens,
                executed: true,
            }),
            None => Ok(VerificationRun {
                outcome: VerificationOutcome::new(
                    VerificationStatus::Inconclusive,
                    format!("no verification plan for {}", finding.issue_type),
                    0.0,
                ),
                tokens,
                executed: false,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RegionKind, Severity, SourceLocation};

    fn finding(issue: &str, line: u32, severity: Severity) -> Finding {
        Finding {
            issue_type: issue.into(),
            location: SourceLocation::line("f.c", line).unwrap(),
            evidence_summary: String::new(),
            confidence: Unit::HALF,
            severity,
            remediation: None,
            error_tag: None,
        }
    }

    fn region(text: &str) -> Region {
        let n = text.lines().count() as u32;
        Region::new("r", RegionKind::Function, SourceLocation::new("f.c", 1, n).unwrap(), text).unwrap()
    }

    #[test]
    fn selectivity() {
        let t = Thresholds::default();
        assert!(should_verify(&finding("x", 1, Severity::High), 0.60, &t));
        assert!(!should_verify(&finding("x", 1, Severity::Low), 0.60, &t));
        assert!(!should_verify(&finding("x", 1, Severity::Critical), 0.90, &t));
        assert!(!should_verify(&finding("x", 1, Severity::Critical), 0.30, &t));
    }

    #[test]
    fn e_dyn_mapping() {
        assert_eq!(VerificationStatus::Reproduced.e_dyn().get(), 1.0);
        assert_eq!(VerificationStatus::NotReproduced.e_dyn().get(), 0.0);
        assert_eq!(VerificationStatus::Inconclusive.e_dyn().get(), 0.5);
    }

    #[test]
    fn plan_defaults() {
        let v = Verifier::builtin();
        let r = region("void f(void) {\n  char b[8];\n  gets(b);\n}\n");
        let (plan, tokens) = v.build_plan(&finding("security/unbounded-input", 3, Severity::Critical), &r).unwrap();
        let plan = plan.unwrap();
        assert_eq!(plan.expected_signal, ExpectedSignal::CrashMarker);
        assert_eq!(plan.timeout, Duration::from_secs(10));
        assert!(plan.workdir.is_dir());
        assert!(tokens > 0);
        let (none, _) = v.build_plan(&finding("logic/made-up", 3, Severity::High), &r).unwrap();
        assert!(none.is_none());
        assert!(Verifier::new(TemplateTable::builtin(), TaintTable::builtin(), String::new(), 0.0).is_err());
    }

    #[test]
    fn plan_without_template_is_inconclusive() {
        let v = Verifier::builtin();
        let r = region("void f(void) {\n  x();\n}\n");
        let run = v.verify(&finding("logic/made-up", 2, Severity::High), &r).unwrap();
        assert!(!run.executed);
        assert_eq!(run.outcome.status, VerificationStatus::Inconclusive);
    }
}
