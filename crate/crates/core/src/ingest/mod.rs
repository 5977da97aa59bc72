//! Repository snapshots and region extraction.

pub mod diff;
pub mod regions;
pub mod scanner;
pub mod snapshot;

pub use diff::{parse_unified_diff, serialize_hunks, DiffHunk, DiffLine, FileHeader, LineMarker};
pub use regions::extract_regions;
pub use snapshot::{
    build_snapshot, CallEdge, ChangeRecord, FileEntry, FunctionRecord, Language, RepoSnapshot,
    SnapshotOptions,
};
