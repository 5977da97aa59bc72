//! Agents backed by a chat-completions model.

use std::sync::Arc;

use serde::Deserialize;
use serde_json::Value;

use super::prompts::PromptSet;
use super::{AgentBackend, AgentId, AgentInput, AgentReport, CounterClaim, FindingKey};
use crate::error::Result;
use crate::llm::{extract_json, ChatClient, ChatMessage};
use crate::model::{Finding, Severity, SourceLocation, Unit};

const SYSTEM: &str = "You are a careful C code auditor. Reply with a single JSON object and nothing else.";

#[derive(Debug, Deserialize)]
struct RawFinding {
    issue_type: String,
    line_start: u32,
    #[serde(default)]
    line_end: Option<u32>,
    #[serde(default)]
    evidence: String,
    confidence: f64,
    #[serde(default)]
    severity: Option<Severity>,
    #[serde(default)]
    remediation: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawClaim {
    issue_type: String,
    #[serde(default)]
    file: Option<String>,
    line_start: u32,
    #[serde(default)]
    line_end: Option<u32>,
    #[serde(default)]
    rebuttal: String,
    strength: f64,
}

#[derive(Debug, Deserialize)]
struct RawReply {
    #[serde(default)]
    findings: Vec<RawFinding>,
    #[serde(default)]
    counter_claims: Vec<RawClaim>,
}

pub struct LlmBackend {
    client: Arc<dyn ChatClient>,
    prompts: PromptSet,
}

impl LlmBackend {
    pub fn new(client: Arc<dyn ChatClient>, prompts: PromptSet) -> Self {
        LlmBackend { client, prompts }
    }

    fn parse(&self, agent: AgentId, input: &AgentInput<'_>, value: Value) -> Result<AgentReport> {
        let raw: RawReply = serde_json::from_value(value)?;
        let region = input.region;
        let mut report = AgentReport::empty(agent, 0);
        if agent == AgentId::Sceptic {
            for c in raw.counter_claims {
                let strength = Unit::new(c.strength)?;
                let line_end = c.line_end.unwrap_or(c.line_start).max(c.line_start);
                report.counter_claims.push(CounterClaim {
                    target: FindingKey {
                        issue_type: c.issue_type,
                        file: c.file.unwrap_or_else(|| region.location.file.clone()),
                        line_start: c.line_start,
                        line_end,
                    },
                    rebuttal: c.rebuttal,
                    strength,
                });
            }
        } else {
            for f in raw.findings {
                let line_end = f.line_end.unwrap_or(f.line_start).max(f.line_start);
                let location = SourceLocation {
                    file: region.location.file.clone(),
                    line_start: f.line_start.clamp(region.location.line_start, region.location.line_end),
                    line_end: line_end.clamp(region.location.line_start, region.location.line_end),
                    side: region.location.side,
                };
                let finding = Finding {
                    issue_type: f.issue_type,
                    location,
                    evidence_summary: f.evidence,
                    confidence: Unit::new(f.confidence)?,
                    severity: f.severity.unwrap_or(Severity::Medium),
                    remediation: f.remediation,
                    error_tag: None,
                };
                finding.validate()?;
                report.findings.push(finding);
            }
        }
        Ok(report.with_confidence())
    }
}

impl AgentBackend for LlmBackend {
    fn name(&self) -> &str {
        "llm"
    }

    fn run(&self, agent: AgentId, input: &AgentInput<'_>) -> AgentReport {
        let Some(prompt) = self.prompts.render_agent(agent, input) else {
            return AgentReport::empty(agent, 0);
        };
        let mut messages = vec![ChatMessage::system(SYSTEM), ChatMessage::user(prompt)];
        let mut tokens = 0;
        // one repair round when the reply does not parse
        for attempt in 0..2 {
            let reply = match self.client.complete(&messages) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("{agent} agent call failed: {e}");
                    return AgentReport::unavailable(agent, tokens);
                }
            };
            tokens += reply.tokens_used;
            let parsed = extract_json(&reply.content).and_then(|v| self.parse(agent, input, v));
            match parsed {
                Ok(mut report) => {
                    report.tokens_used = tokens;
                    return report;
                }
                Err(e) if attempt == 0 => {
                    messages.push(ChatMessage::assistant(reply.content));
                    messages.push(ChatMessage::user(format!(
                        "That reply could not be used ({e}). Answer again with only the JSON object."
                    )));
                }
                Err(e) => log::warn!("{agent} agent reply unusable: {e}"),
            }
        }
        AgentReport::unavailable(agent, tokens)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::context::ContextBundle;
    use crate::error::Error;
    use crate::llm::ChatReply;
    use crate::model::{Region, RegionKind};

    struct Scripted(Mutex<Vec<std::result::Result<String, ()>>>);

    impl ChatClient for Scripted {
        fn complete(&self, _: &[ChatMessage]) -> Result<ChatReply> {
            match self.0.lock().unwrap().remove(0) {
                Ok(content) => Ok(ChatReply { content, tokens_used: 100 }),
                Err(()) => Err(Error::Backend("down".into())),
            }
        }
    }

    fn run(script: Vec<std::result::Result<String, ()>>, agent: AgentId) -> AgentReport {
        let region = Region::new(
            "r",
            RegionKind::Function,
            SourceLocation::new("a.c", 10, 14).unwrap(),
            "void f(char *s) {\n  char b[4];\n  strcpy(b, s);\n  return;\n}\n",
        )
        .unwrap();
        let bundle = ContextBundle::empty("r", 100);
        let backend = LlmBackend::new(Arc::new(Scripted(Mutex::new(script))), PromptSet::builtin());
        let input = AgentInput {
            region: &region,
            bundle: &bundle,
            findings: &[],
            facts: &[],
        };
        backend.run(agent, &input)
    }

    #[test]
    fn parses_findings_and_clamps_lines() {
        let reply = r#"```json
{"findings":[{"issue_type":"security/buffer-overflow","line_start":12,"line_end":40,"evidence":"strcpy","confidence":0.7,"severity":"high"}],"confidence":0.7}
```"#;
        let r = run(vec![Ok(reply.into())], AgentId::Security);
        assert!(!r.unavailable);
        assert_eq!(r.findings.len(), 1);
        assert_eq!(r.findings[0].location.line_end, 14);
        assert_eq!(r.tokens_used, 100);
    }

    #[test]
    fn repairs_once_then_gives_up() {
        let ok = r#"{"findings":[]}"#;
        let r = run(vec![Ok("no idea".into()), Ok(ok.into())], AgentId::Logic);
        assert!(!r.unavailable);
        assert_eq!(r.tokens_used, 200);
        let r = run(vec![Ok("no".into()), Ok("still no".into())], AgentId::Logic);
        assert!(r.unavailable);
        let r = run(vec![Err(())], AgentId::Semantic);
        assert!(r.unavailable);
    }

    #[test]
    fn sceptic_claims() {
        let reply = r#"{"counter_claims":[{"issue_type":"security/buffer-overflow","line_start":12,"rebuttal":"dead","strength":0.8}]}"#;
        let r = run(vec![Ok(reply.into())], AgentId::Sceptic);
        assert_eq!(r.counter_claims[0].target.file, "a.c");
        assert_eq!(r.counter_claims[0].strength.get(), 0.8);
    }
}
