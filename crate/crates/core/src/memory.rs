//! Session cache of agent reports and per-project repository facts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::agents::{AgentId, AgentReport};
use crate::error::{Error, Result};
use crate::model::SourceLocation;

/// Content fingerprint of what an agent sees. `extra` carries the sceptic's
/// findings and facts.
pub fn fingerprint(region_text: &str, bundle_digest: &str, extra: &str) -> String {
    let mut h = Sha256::new();
    for part in [region_text, bundle_digest, extra] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Write-once map from (fingerprint, agent) to the report and the location
/// it was produced for.
#[derive(Debug, Default)]
pub struct SessionMemory {
    entries: Mutex<HashMap<(String, AgentId), (SourceLocation, AgentReport)>>,
}

impl SessionMemory {
    pub fn new() -> Self {
        SessionMemory::default()
    }

    pub fn get(&self, fingerprint: &str, agent: AgentId) -> Option<(SourceLocation, AgentReport)> {
        self.entries
            .lock()
            .unwrap()
            .get(&(fingerprint.to_string(), agent))
            .cloned()
    }

    /// Stores `report` unless an entry exists; returns whichever is stored.
    pub fn insert(&self, fingerprint: &str, agent: AgentId, at: SourceLocation, report: AgentReport) -> (SourceLocation, AgentReport) {
        self.entries
            .lock()
            .unwrap()
            .entry((fingerprint.to_string(), agent))
            .or_insert((at, report))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Append-only, deduplicated facts per project, optionally backed by one
/// JSON file per project.
#[derive(Debug, Default)]
pub struct RepositoryMemory {
    facts: Mutex<BTreeMap<String, BTreeSet<String>>>,
    dir: Option<PathBuf>,
}

fn file_name(project: &str) -> String {
    let safe: String = project
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{}-{}.json", if safe.is_empty() { "default" } else { &safe }, &hex::encode(Sha256::digest(project.as_bytes()))[..8])
}

impl RepositoryMemory {
    pub fn in_memory() -> Self {
        RepositoryMemory::default()
    }

    /// Loads every fact file under `dir`, creating it if needed.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut facts = BTreeMap::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let stored: StoredFacts = serde_json::from_str(&text)?;
            facts.insert(stored.project, stored.facts.into_iter().collect());
        }
        Ok(RepositoryMemory {
            facts: Mutex::new(facts),
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn facts(&self, project: &str) -> Vec<String> {
        self.facts
            .lock()
            .unwrap()
            .get(project)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn append(&self, project: &str, new: impl IntoIterator<Item = String>) {
        let mut facts = self.facts.lock().unwrap();
        facts.entry(project.to_string()).or_default().extend(new);
    }

    /// Writes the fact files; a no-op for in-memory stores.
    pub fn save(&self) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        for (project, facts) in self.facts.lock().unwrap().iter() {
            let path = dir.join(file_name(project));
            let stored = StoredFacts {
                project: project.clone(),
                facts: facts.iter().cloned().collect(),
            };
            let text = serde_json::to_string_pretty(&stored)?;
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct StoredFacts {
    project: String,
    facts: Vec<String>,
}
