//! Run configuration, `key=value` overrides and the config digest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::context::RelevanceCoefficients;
use crate::error::{Error, Result};
use crate::fusion::{FusionWeights, Thresholds};
use crate::triage::TriageCoefficients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Rules,
    Llm,
}

/// Pipeline shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Rule scan only; the case score is the static signal.
    Static,
    /// One security analyst on the bare region.
    SingleAgent,
    /// Retrieved context plus one security analyst.
    RagOnly,
    /// Every stage for every case, every finding verified.
    Sequential,
    #[default]
    Full,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Static,
        Preset::SingleAgent,
        Preset::RagOnly,
        Preset::Sequential,
        Preset::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Static => "static",
            Preset::SingleAgent => "single_agent",
            Preset::RagOnly => "rag_only",
            Preset::Sequential => "sequential",
            Preset::Full => "full",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset {s:?}")))
    }
}

/// Components that can be switched off for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Sceptic,
    Verification,
    Context,
    Memory,
    /// Threshold gating; without it every case runs every stage.
    Scheduler,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Sceptic,
        Component::Verification,
        Component::Context,
        Component::Memory,
        Component::Scheduler,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Sceptic => "sceptic",
            Component::Verification => "verification",
            Component::Context => "context",
            Component::Memory => "memory",
            Component::Scheduler => "scheduler",
        }
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown component {s:?}")))
    }
}

/// How `wall_time` is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingMode {
    /// A fixed cost model, so reports stay reproducible.
    #[default]
    Modeled,
    /// Measured elapsed time.
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmSettings {
    pub timeout_secs: f64,
    pub max_retries: u32,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            timeout_secs: 60.0,
            max_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub k: usize,
    pub context_budget: u64,
    pub tau_high: f64,
    pub tau_low: f64,
    /// `w1..w6`; the last one weighs counter-evidence.
    pub weights: [f64; 6],
    pub backend: BackendKind,
    pub verify_enabled: bool,
    pub verify_timeout_secs: f64,
    pub preset: Preset,
    pub disable: Vec<Component>,
    pub rule_pack: Option<PathBuf>,
    pub taint_table: Option<PathBuf>,
    pub dead_branch_table: Option<PathBuf>,
    pub prompt_dir: Option<PathBuf>,
    pub template_dir: Option<PathBuf>,
    /// Repository facts are loaded from and saved to this directory.
    pub cache_dir: Option<PathBuf>,
    /// Worker threads; 0 picks the number of cores. Not part of the digest.
    pub workers: usize,
    pub timing: TimingMode,
    pub llm: LlmSettings,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            alpha: 0.4,
            beta: 0.2,
            gamma: 0.4,
            lambda1: 0.5,
            lambda2: 0.3,
            lambda3: 0.2,
            k: 8,
            context_budget: 6000,
            tau_high: 0.82,
            tau_low: 0.48,
            weights: FusionWeights::default().to_array(),
            backend: BackendKind::Rules,
            verify_enabled: true,
            verify_timeout_secs: 10.0,
            preset: Preset::Full,
            disable: Vec::new(),
            rule_pack: None,
            taint_table: None,
            dead_branch_table: None,
            prompt_dir: None,
            template_dir: None,
            cache_dir: None,
            workers: 0,
            timing: TimingMode::Modeled,
            llm: LlmSettings::default(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config> {
        let config: Config = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Config::from_json(&text)?;
        // relative table paths are resolved against the config file
        if let Some(dir) = path.parent() {
            for p in [
                &mut config.rule_pack,
                &mut config.taint_table,
                &mut config.dead_branch_table,
                &mut config.prompt_dir,
                &mut config.template_dir,
                &mut config.cache_dir,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn triage(&self) -> TriageCoefficients {
        TriageCoefficients {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn relevance(&self) -> RelevanceCoefficients {
        RelevanceCoefficients {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
        }
    }

    pub fn fusion(&self) -> FusionWeights {
        let w = self.weights;
        FusionWeights {
            w1: w[0],
            w2: w[1],
            w3: w[2],
            w4: w[3],
            w5: w[4],
            w6: w[5],
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            tau_high: self.tau_high,
            tau_low: self.tau_low,
        }
    }

    pub fn is_disabled(&self, c: Component) -> bool {
        self.disable.contains(&c)
    }

    pub fn validate(&self) -> Result<()> {
        self.triage().validate()?;
        self.relevance().validate()?;
        self.fusion().validate()?;
        self.thresholds().validate()?;
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.context_budget == 0 {
            return Err(Error::InvalidConfig("context_budget must be at least 1".into()));
        }
        if !(self.verify_timeout_secs.is_finite() && self.verify_timeout_secs > 0.0) {
            return Err(Error::InvalidConfig("verify_timeout_secs must be positive".into()));
        }
        if !(self.llm.timeout_secs.is_finite() && self.llm.timeout_secs > 0.0) {
            return Err(Error::InvalidConfig("llm.timeout_secs must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring settings that do
    /// not change results.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serialises");
        if let Value::Object(map) = &mut value {
            map.remove("workers");
        }
        let canonical = serde_json::to_string(&value).expect("value serialises");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Applies `key=value` pairs; dotted keys reach nested settings.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Config> {
        let mut value = serde_json::to_value(self).expect("config serialises");
        for (key, raw) in overrides {
            let slot = key
                .split('.')
                .try_fold(&mut value, |v, part| v.as_object_mut().and_then(|m| m.get_mut(part)))
                .ok_or_else(|| Error::UnknownKey(key.clone()))?;
            *slot = parse_value(raw);
        }
        let config: Config = serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

/// JSON when it parses, otherwise a plain string.
fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    serde_json::from_str(raw).unwrap_or_else(|_| {
        if raw.starts_with('[') {
            // `disable=[sceptic,memory]` without quotes
            let inner = raw.trim_start_matches('[').trim_end_matches(']');
            Value::Array(
                inner
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| Value::String(s.to_string()))
                    .collect(),
            )
        } else {
            Value::String(raw.to_string())
        }
    })
}

/// Splits `a=1,b=[x,y]` on commas outside brackets.
pub fn parse_overrides(text: &str) -> Result<Vec<(String, String)>> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut current = String::new();
    for c in text.chars() {
        match c {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(std::mem::take(&mut current));
                continue;
            }
            _ => {}
        }
        current.push(c);
    }
    parts.push(current);
    parts
        .into_iter()
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override {p:?} is not key=value")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}
