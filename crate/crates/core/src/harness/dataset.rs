//! JSONL dataset loading.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::parse_unified_diff;
use crate::sample::{Sample, Task};

/// Share of malformed lines above which a dataset is rejected.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub malformed: usize,
    pub warnings: Vec<String>,
}

fn check_sample(sample: &Sample) -> std::result::Result<(), String> {
    if sample.id.trim().is_empty() {
        return Err("empty id".into());
    }
    if sample.code_or_diff.trim().is_empty() {
        return Err("empty code_or_diff".into());
    }
    if sample.task == Task::Commit {
        parse_unified_diff(&sample.code_or_diff).map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// Parses one sample per nonblank line. Bad lines are skipped with a
/// warning unless they exceed [`MAX_MALFORMED_FRACTION`].
pub fn parse_dataset(text: &str, origin: &str) -> Result<Dataset> {
    let mut data = Dataset::default();
    let mut total = 0usize;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parsed = serde_json::from_str::<Sample>(line)
            .map_err(|e| e.to_string())
            .and_then(|s| check_sample(&s).map(|_| s));
        match parsed {
            Ok(s) => data.samples.push(s),
            Err(e) => {
                data.malformed += 1;
                data.warnings.push(format!("{origin}:{}: skipped malformed sample: {e}", n + 1));
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput(format!("{origin}: dataset is empty")));
    }
    if data.malformed as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(Error::InvalidInput(format!(
            "{origin}: {} of {total} lines are malformed",
            data.malformed
        )));
    }
    Ok(data)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_dataset(&text, &path.display().to_string())
}

pub fn write_dataset<W: Write>(samples: &[Sample], mut out: W) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"id":"a","task":"function","code_or_diff":"int f(void) { return 0; }","label":"benign","project":"p"}"#;

    #[test]
    fn skips_a_few_bad_lines() {
        let mut text = String::new();
        for _ in 0..19 {
            text.push_str(GOOD);
            text.push('\n');
        }
        text.push_str("{not json\n");
        let d = parse_dataset(&text, "t").unwrap();
        assert_eq!(d.samples.len(), 19);
        assert_eq!(d.malformed, 1);
    }

    #[test]
    fn aborts_on_many_bad_lines() {
        let text = format!("{GOOD}\n{{bad\n");
        assert!(parse_dataset(&text, "t").is_err());
        assert!(parse_dataset("\n", "t").is_err());
    }

    #[test]
    fn commit_samples_must_parse() {
        let bad = r#"{"id":"c","task":"commit","code_or_diff":"@@ -1,2 +1,2 @@\n x\n","label":"benign"}"#;
        let mut text = String::new();
        for _ in 0..10 {
            text.push_str(GOOD);
            text.push('\n');
        }
        text.push_str(bad);
        let d = parse_dataset(&text, "t").unwrap();
        assert_eq!(d.malformed, 1);
    }
}
