//! Role prompt templates. Placeholders: `{{FILE}}`, `{{REGION}}`,
//! `{{CONTEXT}}`, `{{FINDINGS}}`, `{{FACTS}}`.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use super::{AgentId, AgentInput};
use crate::context::ContextBundle;
use crate::error::{Error, Result};
use crate::model::Finding;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub triage: String,
    pub security: String,
    pub semantic: String,
    pub logic: String,
    pub sceptic: String,
    pub verification: String,
}

impl PromptSet {
    pub fn builtin() -> Self {
        PromptSet {
            triage: include_str!("../../data/prompts/triage.txt").to_string(),
            security: include_str!("../../data/prompts/security.txt").to_string(),
            semantic: include_str!("../../data/prompts/semantic.txt").to_string(),
            logic: include_str!("../../data/prompts/logic.txt").to_string(),
            sceptic: include_str!("../../data/prompts/sceptic.txt").to_string(),
            verification: include_str!("../../data/prompts/verification.txt").to_string(),
        }
    }

    /// Reads `<role>.txt` files from `dir`; missing files keep the built-in
    /// template.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::InvalidConfig(format!("prompt directory {} does not exist", dir.display())));
        }
        let mut set = PromptSet::builtin();
        for (name, slot) in [
            ("triage", &mut set.triage),
            ("security", &mut set.security),
            ("semantic", &mut set.semantic),
            ("logic", &mut set.logic),
            ("sceptic", &mut set.sceptic),
            ("verification", &mut set.verification),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(set)
    }

    pub fn template(&self, agent: AgentId) -> Option<&str> {
        match agent {
            AgentId::Security => Some(&self.security),
            AgentId::Semantic => Some(&self.semantic),
            AgentId::Logic => Some(&self.logic),
            AgentId::Sceptic => Some(&self.sceptic),
            AgentId::Router => None,
        }
    }

    /// The full prompt `agent` receives for `input`.
    pub fn render_agent(&self, agent: AgentId, input: &AgentInput<'_>) -> Option<String> {
        let template = self.template(agent)?;
        let findings = if agent == AgentId::Sceptic {
            render_findings(input.findings)
        } else {
            String::new()
        };
        let facts = if input.facts.is_empty() {
            "(none)".to_string()
        } else {
            input.facts.join("\n")
        };
        Some(fill(
            template,
            &[
                ("{{FILE}}", &input.region.location.file),
                ("{{REGION}}", &input.region.text),
                ("{{CONTEXT}}", &render_context(input.bundle)),
                ("{{FINDINGS}}", &findings),
                ("{{FACTS}}", &facts),
            ],
        ))
    }
}

pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in values {
        out = out.replace(k, v);
    }
    out
}

pub fn render_context(bundle: &ContextBundle) -> String {
    if bundle.items.is_empty() {
        return "(none)".to_string();
    }
    let mut out = String::new();
    for item in &bundle.items {
        let _ = match &item.location {
            Some(l) => writeln!(out, "--- {:?} {}:{}-{}", item.kind, item.path, l.line_start, l.line_end),
            None => writeln!(out, "--- {:?} {}", item.kind, item.path),
        };
        out.push_str(&item.text);
        if !item.text.ends_with('\n') {
            out.push('\n');
        }
    }
    out
}

/// Findings as shown to the sceptic: no confidences.
pub fn render_findings(findings: &[Finding]) -> String {
    let list: Vec<_> = findings
        .iter()
        .map(|f| {
            json!({
                "issue_type": f.issue_type,
                "file": f.location.file,
                "line_start": f.location.line_start,
                "line_end": f.location.line_end,
                "evidence": f.evidence_summary,
            })
        })
        .collect();
    serde_json::to_string_pretty(&list).unwrap_or_default()
}
