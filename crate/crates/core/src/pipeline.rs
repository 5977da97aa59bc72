//! Per-case orchestration: triage, context, analysts, verification and
//! fusion, with threshold gates between stages.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::agents::prompts::render_findings;
use crate::agents::{
    agreement_score, counter_score, merge_findings, route, AgentBackend, AgentId, AgentInput, AgentReport,
    DeadBranchTable, FindingKey, LlmBackend, PromptSet, RuleBackend, TaintTable,
};
use crate::config::{BackendKind, Component, Config, Preset, TimingMode};
use crate::context::{candidate_context, pack_context, score_candidates, ContextBundle};
use crate::error::Result;
use crate::fusion::{decide, final_action, fuse, FusionWeights, Thresholds};
use crate::ingest::{extract_regions, RepoSnapshot};
use crate::llm::{ChatClient, HttpChatClient};
use crate::memory::{fingerprint, RepositoryMemory, SessionMemory};
use crate::model::{
    Action, CaseResult, CaseTrace, EvidenceVector, Finding, Region, ScoredFinding, Severity, SourceLocation, Stage,
    Unit, Verdict,
};
use crate::sample::Sample;
use crate::triage::signals::{KeywordScorer, LlmScorer, RiskScorer};
use crate::triage::{select_top_k, triage_regions, RulePack, ScoredRegion};
use crate::verify::{should_verify, TemplateTable, Verifier};

/// Seconds charged per unit of work when timing is modeled.
pub mod cost {
    pub const TRIAGE_PER_REGION: f64 = 0.002;
    pub const CONTEXT_PER_CANDIDATE: f64 = 0.001;
    pub const TOKENS_PER_SECOND: f64 = 2500.0;
    pub const PER_BACKEND_CALL: f64 = 0.05;
    pub const PER_VERIFICATION: f64 = 0.25;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Analysts {
    None,
    SecurityOnly,
    Routed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VerifyMode {
    Off,
    Selective,
    Every,
}

/// Stage switches derived from the preset and disabled components.
#[derive(Debug, Clone, Copy)]
struct Mode {
    gates: bool,
    context: bool,
    analysts: Analysts,
    sceptic: bool,
    verify: VerifyMode,
    memory: bool,
    fused: bool,
}

impl Mode {
    fn of(config: &Config) -> Mode {
        let on = |c| !config.is_disabled(c);
        let verify = config.verify_enabled && on(Component::Verification);
        match config.preset {
            Preset::Static => Mode {
                gates: false,
                context: false,
                analysts: Analysts::None,
                sceptic: false,
                verify: VerifyMode::Off,
                memory: false,
                fused: false,
            },
            Preset::SingleAgent | Preset::RagOnly => Mode {
                gates: false,
                context: config.preset == Preset::RagOnly && on(Component::Context),
                analysts: Analysts::SecurityOnly,
                sceptic: false,
                verify: VerifyMode::Off,
                memory: on(Component::Memory),
                fused: false,
            },
            Preset::Sequential | Preset::Full => {
                let sequential = config.preset == Preset::Sequential;
                Mode {
                    gates: !sequential && on(Component::Scheduler),
                    context: on(Component::Context),
                    analysts: Analysts::Routed,
                    sceptic: on(Component::Sceptic),
                    verify: match (verify, sequential) {
                        (false, _) => VerifyMode::Off,
                        (true, true) => VerifyMode::Every,
                        (true, false) => VerifyMode::Selective,
                    },
                    memory: on(Component::Memory),
                    fused: true,
                }
            }
        }
    }
}

/// Everything needed to run cases under one configuration.
pub struct Engine {
    pub config: Config,
    pub pack: RulePack,
    scorer: Box<dyn RiskScorer>,
    backend: Arc<dyn AgentBackend>,
    verifier: Verifier,
    pub repository: RepositoryMemory,
    weights: FusionWeights,
    thresholds: Thresholds,
}

impl Engine {
    /// Builds backends and tables named by `config`.
    pub fn from_config(config: Config) -> Result<Engine> {
        config.validate()?;
        let taint = match &config.taint_table {
            Some(p) => TaintTable::load(p)?,
            None => TaintTable::builtin(),
        };
        let dead = match &config.dead_branch_table {
            Some(p) => DeadBranchTable::load(p)?,
            None => DeadBranchTable::builtin(),
        };
        let prompts = match &config.prompt_dir {
            Some(p) => PromptSet::load(p)?,
            None => PromptSet::builtin(),
        };
        let templates = match &config.template_dir {
            Some(p) => TemplateTable::load(p)?,
            None => TemplateTable::builtin(),
        };
        let mut verifier = Verifier::new(templates, taint.clone(), prompts.verification.clone(), config.verify_timeout_secs)?
            .with_dead_branches(dead.clone());
        let (backend, scorer): (Arc<dyn AgentBackend>, Box<dyn RiskScorer>) = match config.backend {
            BackendKind::Rules => (
                Arc::new(RuleBackend::new(taint, dead, prompts)),
                Box::new(KeywordScorer::default()),
            ),
            BackendKind::Llm => {
                let client: Arc<dyn ChatClient> = Arc::new(HttpChatClient::from_env(
                    Duration::from_secs_f64(config.llm.timeout_secs),
                    config.llm.max_retries,
                )?);
                verifier = verifier.with_llm(client.clone());
                (
                    Arc::new(LlmBackend::new(client.clone(), prompts.clone())),
                    Box::new(LlmScorer::new(client, prompts.triage.clone())),
                )
            }
        };
        Engine::with_parts(config, backend, scorer, verifier)
    }

    /// Engine with caller-supplied backends.
    pub fn with_parts(
        config: Config,
        backend: Arc<dyn AgentBackend>,
        scorer: Box<dyn RiskScorer>,
        verifier: Verifier,
    ) -> Result<Engine> {
        config.validate()?;
        let pack = match &config.rule_pack {
            Some(p) => RulePack::load(p)?,
            None => RulePack::builtin(),
        };
        let repository = match &config.cache_dir {
            Some(dir) => RepositoryMemory::open(dir)?,
            None => RepositoryMemory::in_memory(),
        };
        Ok(Engine {
            weights: config.fusion(),
            thresholds: config.thresholds(),
            config,
            pack,
            scorer,
            backend,
            verifier,
            repository,
        })
    }

    /// Runs one sample. Errors are reported in the result, never raised.
    pub fn run_case(&self, sample: &Sample, snapshot: &RepoSnapshot) -> CaseResult {
        let started = Instant::now();
        let mut case = Case {
            engine: self,
            mode: Mode::of(&self.config),
            sample,
            snapshot,
            session: SessionMemory::new(),
            trace: CaseTrace::default(),
            path: vec![Stage::Triage],
            warnings: Vec::new(),
            modeled: 0.0,
            verified: false,
        };
        let outcome = case.run();
        let wall_time = match self.config.timing {
            TimingMode::Modeled => case.modeled,
            TimingMode::Wall => started.elapsed().as_secs_f64(),
        };
        let (mut findings, error) = match outcome {
            Ok(f) => (f, None),
            Err(e) => {
                case.path = vec![Stage::Triage];
                case.verified = false;
                (Vec::new(), Some(e.to_string()))
            }
        };
        findings.sort_by(|a, b| {
            b.score
                .get()
                .total_cmp(&a.score.get())
                .then_with(|| a.finding.location.file.cmp(&b.finding.location.file))
                .then_with(|| a.finding.location.line_start.cmp(&b.finding.location.line_start))
                .then_with(|| a.finding.issue_type.cmp(&b.finding.issue_type))
        });
        let case_score = findings.iter().map(|f| f.score).fold(Unit::ZERO, |a, b| if b.get() > a.get() { b } else { a });
        let verdict = if findings.iter().any(|f| f.action.is_accept()) {
            Verdict::Vulnerable
        } else {
            Verdict::Benign
        };
        CaseResult {
            sample_id: sample.id.clone(),
            verdict,
            case_score,
            findings,
            early_exit: CaseResult::exits_early(&case.path),
            stage_path: case.path,
            tokens_used: case.trace.stage_tokens.total(),
            wall_time,
            verified: case.verified,
            trace: case.trace,
            warnings: case.warnings,
            error,
        }
    }
}

/// Runs one sample against one snapshot.
pub fn run_pipeline(sample: &Sample, snapshot: &RepoSnapshot, engine: &Engine) -> CaseResult {
    engine.run_case(sample, snapshot)
}

struct Case<'a> {
    engine: &'a Engine,
    mode: Mode,
    sample: &'a Sample,
    snapshot: &'a RepoSnapshot,
    session: SessionMemory,
    trace: CaseTrace,
    path: Vec<Stage>,
    warnings: Vec<String>,
    modeled: f64,
    verified: bool,
}

/// A region with its context and pre-analysis evidence.
struct Prepared {
    scored: ScoredRegion,
    bundle: ContextBundle,
    evidence: EvidenceVector,
}

impl Case<'_> {
    fn run(&mut self) -> Result<Vec<ScoredFinding>> {
        let engine = self.engine;
        let config = &engine.config;
        let regions = extract_regions(self.sample, self.snapshot)?;
        self.trace.regions_total = regions.len();
        self.modeled += cost::TRIAGE_PER_REGION * regions.len() as f64;
        let triage = triage_regions(regions, self.snapshot, &engine.pack, engine.scorer.as_ref(), &config.triage());
        self.trace.stage_tokens.triage = triage.tokens;
        self.warnings.extend(triage.warnings.iter().cloned());
        self.trace.max_risk0 = triage.max_risk0();
        let top = select_top_k(triage.scored, config.k)?;
        self.trace.regions_selected = top.len();

        if self.mode.analysts == Analysts::None {
            return Ok(self.static_findings(&top));
        }
        if self.mode.gates && self.trace.max_risk0.get() < engine.thresholds.tau_low {
            return Ok(Vec::new());
        }

        let prepared = self.prepare(top)?;
        let interim = prepared
            .iter()
            .map(|p| fuse(&p.evidence, &engine.weights))
            .fold(Unit::ZERO, |a, b| if b.get() > a.get() { b } else { a });
        self.trace.interim_score = Some(interim);
        if self.mode.gates && interim.get() >= engine.thresholds.tau_high {
            self.path.push(Stage::Fusion);
            return Ok(self.early_accept(&prepared));
        }

        self.path.push(Stage::Analysis);
        let mut findings = Vec::new();
        for p in &prepared {
            findings.extend(self.analyse(p)?);
        }

        if self.mode.verify != VerifyMode::Off {
            let mut attempted = false;
            for sf in findings.iter_mut() {
                let wanted = match self.mode.verify {
                    VerifyMode::Every => true,
                    _ => sf.action == Action::VerifyThenDecide,
                };
                if wanted {
                    attempted = true;
                    let region = &prepared.iter().find(|p| p.scored.region.id == sf.region_id).expect("finding region").scored.region;
                    self.verify(sf, region);
                }
            }
            if attempted || self.mode.verify == VerifyMode::Every {
                self.path.push(Stage::Verification);
            }
        }

        self.path.push(Stage::Fusion);
        for sf in &mut findings {
            sf.action = final_action(sf.score.get(), &engine.thresholds);
        }
        Ok(findings)
    }

    /// Static preset: each rule hit is a finding scored by the region's
    /// static signal.
    fn static_findings(&self, top: &[ScoredRegion]) -> Vec<ScoredFinding> {
        let t = &self.engine.thresholds;
        let mut out = Vec::new();
        for s in top {
            let region = &s.region;
            let score = region.signals.s_stat;
            for hit in &region.signals.rule_hits {
                let Some(finding) = self.rule_finding(region, hit) else { continue };
                out.push(ScoredFinding {
                    finding,
                    score,
                    evidence: EvidenceVector {
                        risk0: s.risk0,
                        e_stat: score,
                        ..zero_evidence()
                    },
                    action: final_action(score.get(), t),
                    region_id: region.id.clone(),
                    agents: Vec::new(),
                });
            }
        }
        out
    }

    fn rule_finding(&self, region: &Region, hit: &crate::model::RuleHit) -> Option<Finding> {
        let rule = self.engine.pack.get(&hit.rule_id)?;
        Some(Finding {
            issue_type: rule.spec.category.clone(),
            location: SourceLocation {
                file: region.location.file.clone(),
                line_start: hit.line,
                line_end: hit.line,
                side: region.location.side,
            },
            evidence_summary: format!("rule {} matched `{}`", hit.rule_id, hit.excerpt.trim()),
            confidence: rule.weight,
            severity: rule.spec.severity,
            remediation: None,
            error_tag: None,
        })
    }

    fn prepare(&mut self, top: Vec<ScoredRegion>) -> Result<Vec<Prepared>> {
        let config = &self.engine.config;
        if self.mode.context {
            self.path.push(Stage::Context);
        }
        let mut out = Vec::with_capacity(top.len());
        for scored in top {
            let bundle = if self.mode.context {
                let candidates = candidate_context(&scored.region, self.snapshot);
                self.modeled += cost::CONTEXT_PER_CANDIDATE * candidates.len() as f64;
                let candidates = score_candidates(candidates, &scored.region, self.snapshot, &config.relevance());
                pack_context(&scored.region.id, candidates, config.context_budget)?
            } else {
                ContextBundle::empty(&scored.region.id, config.context_budget)
            };
            let evidence = EvidenceVector {
                risk0: scored.risk0,
                e_stat: scored.region.signals.s_stat,
                e_ctx: if self.mode.context { bundle.mean_relevance() } else { Unit::ZERO },
                ..zero_evidence()
            };
            out.push(Prepared { scored, bundle, evidence });
        }
        Ok(out)
    }

    /// Accepts on triage evidence alone, citing the strongest rule hit.
    fn early_accept(&self, prepared: &[Prepared]) -> Vec<ScoredFinding> {
        let w = &self.engine.weights;
        let Some(best) = prepared
            .iter()
            .max_by(|a, b| fuse(&a.evidence, w).get().total_cmp(&fuse(&b.evidence, w).get()).then_with(|| b.scored.region.id.cmp(&a.scored.region.id)))
        else {
            return Vec::new();
        };
        let region = &best.scored.region;
        let strongest = region
            .signals
            .rule_hits
            .iter()
            .filter_map(|h| self.rule_finding(region, h))
            .max_by(|a, b| a.confidence.get().total_cmp(&b.confidence.get()).then_with(|| b.location.line_start.cmp(&a.location.line_start)));
        let finding = strongest.unwrap_or_else(|| Finding {
            issue_type: "triage/high-risk-region".into(),
            location: region.location.clone(),
            evidence_summary: "triage evidence alone clears the acceptance threshold".into(),
            confidence: best.scored.risk0,
            severity: Severity::Medium,
            remediation: None,
            error_tag: None,
        });
        vec![ScoredFinding {
            finding,
            score: fuse(&best.evidence, w),
            evidence: best.evidence,
            action: Action::AcceptEarly,
            region_id: region.id.clone(),
            agents: Vec::new(),
        }]
    }

    fn dispatch(&mut self, agent: AgentId, input: &AgentInput<'_>, extra: &str) -> AgentReport {
        self.trace.agent_dispatches += 1;
        if agent.is_analyst() {
            self.trace.analyst_invocations += 1;
        }
        let fp = fingerprint(&input.region.text, &input.bundle.digest(), extra);
        if self.mode.memory {
            if let Some((at, report)) = self.session.get(&fp, agent) {
                return report.rebase(&at, &input.region.location);
            }
        }
        let report = self.engine.backend.run(agent, input);
        self.trace.backend_calls += 1;
        self.trace.stage_tokens.analysis += report.tokens_used;
        self.modeled += report.tokens_used as f64 / cost::TOKENS_PER_SECOND + cost::PER_BACKEND_CALL;
        if report.unavailable {
            self.warnings.push(format!("{agent} agent unavailable for {}", input.region.id));
        }
        if self.mode.memory {
            self.session.insert(&fp, agent, input.region.location.clone(), report.clone());
        }
        report
    }

    fn analyse(&mut self, p: &Prepared) -> Result<Vec<ScoredFinding>> {
        let engine = self.engine;
        let region = &p.scored.region;
        let agents: Vec<AgentId> = match self.mode.analysts {
            Analysts::SecurityOnly => vec![AgentId::Security],
            _ => route(region, &engine.pack)
                .into_iter()
                .filter(|a| *a != AgentId::Sceptic)
                .collect(),
        };
        let facts = engine.repository.facts(&self.sample.project);
        let input = AgentInput {
            region,
            bundle: &p.bundle,
            findings: &[],
            facts: &facts,
        };
        let mut reports = Vec::new();
        for agent in agents {
            reports.push(self.dispatch(agent, &input, ""));
        }
        let merged = merge_findings(&reports);
        if self.mode.sceptic && !merged.is_empty() {
            let claimed: Vec<Finding> = merged.iter().map(|m| m.finding.clone()).collect();
            let extra = format!("{}\n{}", render_findings(&claimed), facts.join("\n"));
            let input = AgentInput {
                findings: &claimed,
                ..input
            };
            let report = self.dispatch(AgentId::Sceptic, &input, &extra);
            if !report.facts.is_empty() {
                engine.repository.append(&self.sample.project, report.facts.iter().cloned());
            }
            reports.push(report);
        }

        let mut out = Vec::with_capacity(merged.len());
        for m in merged {
            let key = FindingKey::of(&m.finding);
            let e_agt = agreement_score(&reports, &key)?;
            let evidence = EvidenceVector {
                e_agt,
                e_ctr: counter_score(&reports, &key),
                ..p.evidence
            };
            let (score, action) = if self.mode.fused {
                let s = fuse(&evidence, &engine.weights);
                (s, decide(s.get(), m.finding.severity, &engine.thresholds))
            } else {
                (e_agt, final_action(e_agt.get(), &engine.thresholds))
            };
            out.push(ScoredFinding {
                finding: m.finding,
                score,
                evidence,
                action,
                region_id: region.id.clone(),
                agents: m.agents.iter().map(|a| a.as_str().to_string()).collect(),
            });
        }
        Ok(out)
    }

    /// Verifies one finding once and re-fuses its score.
    fn verify(&mut self, sf: &mut ScoredFinding, region: &Region) {
        let engine = self.engine;
        debug_assert!(self.mode.verify == VerifyMode::Every || should_verify(&sf.finding, sf.score.get(), &engine.thresholds));
        let e_dyn = match engine.verifier.verify(&sf.finding, region) {
            Ok(run) => {
                self.trace.stage_tokens.verification += run.tokens;
                if run.executed {
                    self.trace.verifications += 1;
                    self.verified = true;
                    self.modeled += cost::PER_VERIFICATION;
                }
                run.outcome.e_dyn
            }
            Err(e) => {
                self.warnings.push(format!("verification of {} failed: {e}", sf.finding.issue_type));
                Unit::HALF
            }
        };
        sf.evidence.e_dyn = e_dyn;
        sf.score = fuse(&sf.evidence, &engine.weights);
    }
}

fn zero_evidence() -> EvidenceVector {
    EvidenceVector {
        risk0: Unit::ZERO,
        e_stat: Unit::ZERO,
        e_ctx: Unit::ZERO,
        e_agt: Unit::ZERO,
        e_dyn: Unit::ZERO,
        e_ctr: Unit::ZERO,
    }
}
