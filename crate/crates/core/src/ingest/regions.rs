use super::diff::{parse_unified_diff, DiffHunk, LineMarker};
use super::snapshot::RepoSnapshot;
use crate::error::{Error, Result};
use crate::model::{Region, RegionKind, SignalSet, Side, SourceLocation};
use crate::sample::{Sample, Task};

/// Splits a sample into analysis regions: one per function-level sample,
/// one per hunk for commit-level samples.
pub fn extract_regions(sample: &Sample, _snapshot: &RepoSnapshot) -> Result<Vec<Region>> {
    match sample.task {
        Task::Function => {
            let lines = sample.code_or_diff.lines().count().max(1) as u32;
            let location = SourceLocation::new(sample.function_path(), 1, lines)?;
            let region = Region::new(
                format!("{}#fn", sample.id),
                RegionKind::Function,
                location,
                sample.code_or_diff.clone(),
            )?;
            Ok(vec![region])
        }
        Task::Commit => {
            let hunks = parse_unified_diff(&sample.code_or_diff)?;
            if hunks.is_empty() {
                return Err(Error::EmptySample(sample.id.clone()));
            }
            hunks
                .iter()
                .enumerate()
                .map(|(i, h)| hunk_region(format!("{}#h{}", sample.id, i), h))
                .collect()
        }
    }
}

/// Builds the region for one hunk. The text keeps the context and added
/// lines with their markers; removed lines go to [`Region::removed`].
pub fn hunk_region(id: String, hunk: &DiffHunk) -> Result<Region> {
    let mut text = String::new();
    let mut removed = Vec::new();
    let mut new_line = hunk.new_start.max(1);
    let mut pending = Vec::new();
    for line in &hunk.lines {
        match line.marker {
            LineMarker::Removed => pending.push(line.text.clone()),
            LineMarker::Context | LineMarker::Added => {
                removed.extend(pending.drain(..).map(|t| (new_line, t)));
                text.push(line.marker.as_char());
                text.push_str(&line.text);
                text.push('\n');
                new_line += 1;
            }
        }
    }
    let last = if hunk.new_len == 0 {
        hunk.new_start.max(1)
    } else {
        hunk.new_start.max(1) + hunk.new_len - 1
    };
    removed.extend(pending.drain(..).map(|t| (last, t)));

    if text.trim().is_empty() {
        // pure deletion: keep the removed lines so the region is auditable
        for (_, t) in &removed {
            text.push('-');
            text.push_str(t);
            text.push('\n');
        }
    }
    if text.trim().is_empty() {
        text.push_str("-\n");
    }
    let location = SourceLocation {
        file: hunk.file.clone(),
        line_start: hunk.new_start.max(1),
        line_end: last,
        side: Side::New,
    };
    let region = Region {
        id,
        kind: RegionKind::Hunk,
        location,
        text,
        removed,
        signals: SignalSet::default(),
    };
    region.validate()?;
    Ok(region)
}
