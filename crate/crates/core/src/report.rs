//! Canonical findings report.
//!
//! Field order follows struct declaration order and every float is written
//! with six fractional digits, so equal inputs give byte-identical output.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CaseResult;

pub const SCHEMA: &str = "vulnaudit/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub config_digest: String,
    pub results: Vec<CaseResult>,
}

impl Report {
    pub fn new(config_digest: impl Into<String>, results: Vec<CaseResult>) -> Self {
        Report {
            schema: SCHEMA.to_string(),
            config_digest: config_digest.into(),
            results,
        }
    }
}

/// Writes the canonical JSON document for `results`.
pub fn write_report<W: Write>(results: &[CaseResult], config_digest: &str, mut dest: W) -> Result<()> {
    for r in results {
        r.validate()?;
    }
    #[derive(Serialize)]
    struct Borrowed<'a> {
        schema: &'a str,
        config_digest: &'a str,
        results: &'a [CaseResult],
    }
    let doc = Borrowed {
        schema: SCHEMA,
        config_digest,
        results,
    };
    serde_json::to_writer_pretty(&mut dest, &doc)?;
    dest.write_all(b"\n")?;
    dest.flush()?;
    Ok(())
}

pub fn report_to_string(results: &[CaseResult], config_digest: &str) -> Result<String> {
    let mut buf = Vec::new();
    write_report(results, config_digest, &mut buf)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn read_report<R: Read>(src: R) -> Result<Report> {
    let report: Report = serde_json::from_reader(src)?;
    if report.schema != SCHEMA {
        return Err(Error::InvalidInput(format!(
            "unsupported report schema {:?}",
            report.schema
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn benign(id: &str) -> CaseResult {
        CaseResult {
            sample_id: id.into(),
            verdict: Verdict::Benign,
            case_score: Unit::ZERO,
            findings: vec![],
            stage_path: vec![Stage::Triage],
            tokens_used: 0,
            wall_time: 0.0,
            early_exit: true,
            verified: false,
            trace: CaseTrace::default(),
            warnings: vec![],
            error: None,
        }
    }

    #[test]
    fn empty_report_has_header() {
        let s = report_to_string(&[], "abc").unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["schema"], "vulnaudit/1");
        assert_eq!(v["results"], serde_json::json!([]));
    }

    #[test]
    fn benign_entry() {
        let s = report_to_string(&[benign("s1")], "abc").unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["results"][0]["verdict"], "benign");
        assert_eq!(v["results"][0]["findings"], serde_json::json!([]));
        assert!(s.contains("\"case_score\": 0.000000"));
    }

    #[test]
    fn rejects_inconsistent_case() {
        let mut c = benign("s1");
        c.tokens_used = 5;
        assert!(report_to_string(&[c], "abc").is_err());
    }

    #[test]
    fn schema_checked_on_read() {
        let s = r#"{"schema":"other/2","config_digest":"x","results":[]}"#;
        assert!(read_report(s.as_bytes()).is_err());
    }
}
