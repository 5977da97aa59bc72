use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::scanner::{called_names, scan_functions};
use crate::error::{Error, Result};
use crate::model::SourceLocation;

/// Default location of the change-history sidecar, relative to the root.
pub const HISTORY_SIDECAR: &str = ".vulnaudit/history.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    C,
    Cpp,
    Config,
}

impl Language {
    /// Languages with a function scanner.
    pub fn is_code(self) -> bool {
        matches!(self, Language::C | Language::Cpp)
    }
}

#[derive(Debug, Clone)]
pub struct SnapshotOptions {
    /// Lower-case extension → language tag.
    pub extensions: BTreeMap<String, Language>,
    pub max_file_bytes: u64,
    pub skip_dirs: Vec<String>,
    /// Overrides [`HISTORY_SIDECAR`].
    pub history: Option<PathBuf>,
}

impl Default for SnapshotOptions {
    fn default() -> Self {
        let mut extensions = BTreeMap::new();
        for e in ["c", "h"] {
            extensions.insert(e.to_string(), Language::C);
        }
        for e in ["cc", "cpp", "cxx", "hpp", "hh", "hxx"] {
            extensions.insert(e.to_string(), Language::Cpp);
        }
        for e in ["ini", "yaml", "yml", "toml", "json", "conf", "cfg"] {
            extensions.insert(e.to_string(), Language::Config);
        }
        SnapshotOptions {
            extensions,
            max_file_bytes: 1 << 20,
            skip_dirs: vec![".git".into(), ".vulnaudit".into(), "target".into(), "node_modules".into()],
            history: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileEntry {
    /// Repository-relative, `/`-separated.
    pub path: String,
    pub size: u64,
    pub language: Language,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionRecord {
    pub id: String,
    pub name: String,
    pub location: SourceLocation,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub path: String,
    pub commits: u32,
    pub last_touch_rank: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CallEdge {
    pub caller: String,
    pub callee: String,
}

/// Lightweight index of a repository.
#[derive(Debug, Clone, Default)]
pub struct RepoSnapshot {
    pub root: PathBuf,
    pub files: Vec<FileEntry>,
    pub functions: Vec<FunctionRecord>,
    pub call_edges: Vec<CallEdge>,
    pub change_log: Vec<ChangeRecord>,
    pub warnings: Vec<String>,
}

impl RepoSnapshot {
    pub fn empty() -> Self {
        RepoSnapshot::default()
    }

    /// Builds a snapshot from in-memory files. Paths are used verbatim.
    pub fn from_files(
        files: impl IntoIterator<Item = (String, String)>,
        change_log: Vec<ChangeRecord>,
        options: &SnapshotOptions,
    ) -> Self {
        let mut entries: Vec<FileEntry> = files
            .into_iter()
            .filter_map(|(path, content)| {
                let language = language_of(&path, options)?;
                Some(FileEntry {
                    size: content.len() as u64,
                    path,
                    language,
                    content,
                })
            })
            .collect();
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        let mut snap = RepoSnapshot {
            root: PathBuf::new(),
            files: entries,
            change_log,
            ..Default::default()
        };
        snap.index();
        snap
    }

    fn index(&mut self) {
        let mut functions = Vec::new();
        for file in self.files.iter().filter(|f| f.language.is_code()) {
            for f in scan_functions(&file.content) {
                let location = SourceLocation {
                    file: file.path.clone(),
                    line_start: f.line_start,
                    line_end: f.line_end,
                    side: Default::default(),
                };
                functions.push(FunctionRecord {
                    id: format!("{}::{}@{}", file.path, f.name, f.line_start),
                    name: f.name,
                    location,
                    body: file.content[f.start..f.end].to_string(),
                });
            }
        }
        let known: BTreeSet<&str> = functions.iter().map(|f| f.name.as_str()).collect();
        let mut edges = Vec::new();
        for f in &functions {
            // skip the header so a definition does not call itself
            let body = f.body.find('{').map_or(f.body.as_str(), |i| &f.body[i..]);
            for callee in called_names(body) {
                if known.contains(callee.as_str()) {
                    edges.push(CallEdge {
                        caller: f.id.clone(),
                        callee,
                    });
                }
            }
        }
        self.functions = functions;
        self.call_edges = edges;
        if self.files.is_empty() {
            let msg = format!("no files indexed under {}", self.root.display());
            log::warn!("{msg}");
            self.warnings.push(msg);
        }
    }

    pub fn file(&self, path: &str) -> Option<&FileEntry> {
        self.files
            .binary_search_by(|f| f.path.as_str().cmp(path))
            .ok()
            .map(|i| &self.files[i])
    }

    pub fn function(&self, id: &str) -> Option<&FunctionRecord> {
        self.functions.iter().find(|f| f.id == id)
    }

    pub fn functions_named(&self, name: &str) -> Vec<&FunctionRecord> {
        self.functions.iter().filter(|f| f.name == name).collect()
    }

    /// Functions with an edge to `name`.
    pub fn callers_of(&self, name: &str) -> Vec<&FunctionRecord> {
        let ids: BTreeSet<&str> = self
            .call_edges
            .iter()
            .filter(|e| e.callee == name)
            .map(|e| e.caller.as_str())
            .collect();
        self.functions.iter().filter(|f| ids.contains(f.id.as_str())).collect()
    }

    pub fn change(&self, path: &str) -> Option<&ChangeRecord> {
        self.change_log.iter().find(|c| c.path == path)
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

fn language_of(path: &str, options: &SnapshotOptions) -> Option<Language> {
    let ext = Path::new(path).extension()?.to_str()?.to_ascii_lowercase();
    options.extensions.get(&ext).copied()
}

/// Indexes `root`: files with configured extensions, their functions, the
/// name-based call edges between them, and optional change history.
pub fn build_snapshot(root: &Path, options: &SnapshotOptions) -> Result<RepoSnapshot> {
    let meta = fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if !meta.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a directory"),
        ));
    }
    fs::read_dir(root).map_err(|e| Error::io(root, e))?;

    let mut files = Vec::new();
    let walker = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            e.depth() == 0
                || !e.file_type().is_dir()
                || !options
                    .skip_dirs
                    .iter()
                    .any(|d| e.file_name().to_str() == Some(d.as_str()))
        });
    for entry in walker {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            Error::io(path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields children of root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if language_of(&rel, options).is_none() {
            continue;
        }
        let size = entry.metadata().map(|m| m.len()).unwrap_or(0);
        if size > options.max_file_bytes {
            log::debug!("skipping oversized {rel}");
            continue;
        }
        let bytes = fs::read(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        files.push((rel, String::from_utf8_lossy(&bytes).into_owned()));
    }

    let history = options
        .history
        .clone()
        .unwrap_or_else(|| root.join(HISTORY_SIDECAR));
    let change_log = if history.exists() {
        read_history(&history)?
    } else {
        Vec::new()
    };

    let mut snap = RepoSnapshot::from_files(files, change_log, options);
    snap.root = root.to_path_buf();
    if let Some(w) = snap.warnings.first_mut() {
        *w = format!("no files indexed under {}", root.display());
    }
    Ok(snap)
}

/// Reads the JSON-lines change history sidecar.
pub fn read_history(path: &Path) -> Result<Vec<ChangeRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ChangeRecord = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidInput(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(rec);
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_functions_one_edge() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.c"), "int f(){ g(); }\nint g(){ return 0; }\n").unwrap();
        let snap = build_snapshot(dir.path(), &SnapshotOptions::default()).unwrap();
        assert_eq!(snap.functions.len(), 2);
        assert_eq!(snap.call_edges.len(), 1);
        assert_eq!(snap.call_edges[0].caller, "a.c::f@1");
        assert_eq!(snap.call_edges[0].callee, "g");
    }

    #[test]
    fn empty_directory_warns() {
        let dir = tempfile::tempdir().unwrap();
        let snap = build_snapshot(dir.path(), &SnapshotOptions::default()).unwrap();
        assert!(snap.files.is_empty() && snap.functions.is_empty());
        assert_eq!(snap.warnings.len(), 1);
    }

    #[test]
    fn missing_root_is_io_error() {
        let err = build_snapshot(Path::new("/definitely/not/here"), &SnapshotOptions::default());
        assert!(matches!(err, Err(Error::Io { .. })));
    }

    #[test]
    fn reads_history_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join(".vulnaudit")).unwrap();
        fs::write(
            dir.path().join(HISTORY_SIDECAR),
            "{\"path\":\"src/b.c\",\"commits\":3,\"last_touch_rank\":1}\n\n{\"path\":\"src/a.c\",\"commits\":9,\"last_touch_rank\":2}\n",
        )
        .unwrap();
        fs::create_dir_all(dir.path().join("src")).unwrap();
        fs::write(dir.path().join("src/a.c"), "int a(void){return 1;}\n").unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let snap = build_snapshot(dir.path(), &SnapshotOptions::default()).unwrap();
        assert_eq!(snap.files.len(), 1);
        assert_eq!(snap.change_log.len(), 2);
        assert_eq!(snap.change("src/a.c").unwrap().commits, 9);
    }

    #[test]
    fn ids_unique_and_callers_exist() {
        let src = "int a(){return b()+c();}\nint b(){return c();}\nint c(){return 0;}\nint a2(){a();return 0;}\n";
        let snap = RepoSnapshot::from_files(
            [("x.c".to_string(), src.to_string()), ("y.c".to_string(), src.to_string())],
            vec![],
            &SnapshotOptions::default(),
        );
        let ids: BTreeSet<_> = snap.functions.iter().map(|f| &f.id).collect();
        assert_eq!(ids.len(), snap.functions.len());
        for e in &snap.call_edges {
            let caller = snap.function(&e.caller).unwrap();
            assert!(caller.body.contains(&e.callee));
        }
        assert_eq!(snap.callers_of("a").len(), 2);
    }
}
