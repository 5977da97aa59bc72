//! Benchmark runs, parameter sweeps and ablations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::corpus::SyntheticCorpus;
use super::dataset::load_dataset;
use super::metrics::{aggregate, MetricsReport};
use crate::config::{Component, Config, Preset};
use crate::error::{Error, Result};
use crate::ingest::snapshot::{build_snapshot, SnapshotOptions};
use crate::ingest::RepoSnapshot;
use crate::model::CaseResult;
use crate::pipeline::Engine;
use crate::report::report_to_string;
use crate::sample::Sample;

pub const METRICS_HEADER: [&str; 13] = [
    "preset",
    "config_digest",
    "precision",
    "recall",
    "f1",
    "auroc",
    "top1",
    "top3",
    "mrr",
    "avg_tokens",
    "avg_time",
    "early_exit_rate",
    "verification_rate",
];

/// Samples plus the repository snapshot of every project they name.
#[derive(Debug, Clone, Default)]
pub struct BenchData {
    pub samples: Vec<Sample>,
    pub snapshots: BTreeMap<String, RepoSnapshot>,
    pub warnings: Vec<String>,
}

impl BenchData {
    /// Loads a JSONL dataset. Project `p` is indexed from
    /// `<dataset dir>/repos/<p>` when that directory exists.
    pub fn load(dataset: &Path) -> Result<BenchData> {
        let data = load_dataset(dataset)?;
        let root = dataset.parent().unwrap_or(Path::new(".")).join("repos");
        let mut snapshots = BTreeMap::new();
        let mut warnings = data.warnings;
        for s in &data.samples {
            if snapshots.contains_key(&s.project) {
                continue;
            }
            let dir = root.join(&s.project);
            let snap = if !s.project.is_empty() && dir.is_dir() {
                build_snapshot(&dir, &SnapshotOptions::default())?
            } else {
                warnings.push(format!("no repository for project `{}`; running without context", s.project));
                RepoSnapshot::empty()
            };
            snapshots.insert(s.project.clone(), snap);
        }
        Ok(BenchData {
            samples: data.samples,
            snapshots,
            warnings,
        })
    }

    pub fn from_corpus(corpus: &SyntheticCorpus) -> Result<BenchData> {
        let mut snapshots = BTreeMap::new();
        for project in corpus.repos.keys() {
            snapshots.insert(project.clone(), corpus.snapshot(project)?);
        }
        Ok(BenchData {
            samples: corpus.samples.clone(),
            snapshots,
            warnings: Vec::new(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub preset: Preset,
    pub config_digest: String,
    pub results: Vec<CaseResult>,
    pub metrics: MetricsReport,
}

impl BenchRun {
    pub fn report_json(&self) -> Result<String> {
        report_to_string(&self.results, &self.config_digest)
    }

    pub fn csv_row(&self) -> Vec<String> {
        let m = &self.metrics;
        let f = |x: f64| format!("{x:.6}");
        vec![
            self.preset.as_str().to_string(),
            self.config_digest.clone(),
            f(m.precision),
            f(m.recall),
            f(m.f1),
            f(m.auroc),
            f(m.top1),
            f(m.top3),
            f(m.mrr),
            f(m.avg_tokens),
            f(m.avg_time),
            f(m.early_exit_rate),
            f(m.verification_rate),
        ]
    }
}

/// Runs every sample through `engine`. Projects run in parallel; cases of
/// one project run in dataset order so repository facts evolve
/// deterministically.
pub fn run_engine(engine: &Engine, data: &BenchData) -> Result<Vec<CaseResult>> {
    let mut by_project: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.samples.iter().enumerate() {
        by_project.entry(s.project.as_str()).or_default().push(i);
    }
    let empty = RepoSnapshot::empty();
    let groups: Vec<(&str, Vec<usize>)> = by_project.into_iter().collect();
    let work = || {
        groups
            .par_iter()
            .map(|(project, indices)| {
                let snapshot = data.snapshots.get(*project).unwrap_or(&empty);
                indices
                    .iter()
                    .map(|&i| (i, engine.run_case(&data.samples[i], snapshot)))
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(engine.config.workers)
        .build()
        .map_err(|e| Error::InvalidState(format!("worker pool: {e}")))?;
    let mut slots: Vec<Option<CaseResult>> = vec![None; data.samples.len()];
    for (i, r) in pool.install(work).into_iter().flatten() {
        slots[i] = Some(r);
    }
    engine.repository.save()?;
    Ok(slots.into_iter().map(|r| r.expect("every sample ran")).collect())
}

/// Runs the configured preset over `data` and aggregates metrics.
pub fn run_benchmark(data: &BenchData, config: Config) -> Result<BenchRun> {
    if data.samples.is_empty() {
        return Err(Error::InvalidInput("dataset has no samples".into()));
    }
    let digest = config.digest();
    let preset = config.preset;
    let threshold = config.tau_low;
    let engine = Engine::from_config(config)?;
    let results = run_engine(&engine, data)?;
    let metrics = aggregate(&data.samples, &results, threshold)?;
    Ok(BenchRun {
        preset,
        config_digest: digest,
        results,
        metrics,
    })
}

/// Same as [`run_benchmark`] with `components` switched off.
pub fn run_ablation(data: &BenchData, config: &Config, components: &[Component]) -> Result<BenchRun> {
    let mut config = config.clone();
    for c in components {
        if !config.disable.contains(c) {
            config.disable.push(*c);
        }
    }
    config.disable.sort();
    run_benchmark(data, config)
}

pub fn write_metrics_csv<W: Write>(runs: &[&BenchRun], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in runs {
        w.write_record(r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report-<preset>.json` and `metrics-<preset>.csv` under `dir`.
pub fn write_run(run: &BenchRun, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report = dir.join(format!("report-{}.json", run.preset.as_str()));
    std::fs::write(&report, run.report_json()?).map_err(|e| Error::io(&report, e))?;
    let csv_path = dir.join(format!("metrics-{}.csv", run.preset.as_str()));
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_metrics_csv(&[run], file)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    K,
    ContextBudget,
    TauHigh,
    TauLow,
    /// Both thresholds at once, values written `high:low`.
    Tau,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::K => "k",
            SweepParam::ContextBudget => "context_budget",
            SweepParam::TauHigh => "tau_high",
            SweepParam::TauLow => "tau_low",
            SweepParam::Tau => "tau",
        }
    }

    /// Applies one sweep value to a copy of `base`.
    pub fn apply(self, base: &Config, value: &str) -> Result<Config> {
        let overrides: Vec<(String, String)> = match self {
            SweepParam::Tau => {
                let (high, low) = value
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidValue(format!("expected high:low, got `{value}`")))?;
                vec![("tau_high".into(), high.trim().into()), ("tau_low".into(), low.trim().into())]
            }
            p => vec![(p.as_str().into(), value.trim().into())],
        };
        let config = base.with_overrides(&overrides)?;
        config.validate()?;
        Ok(config)
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepParam::K),
            "context_budget" | "b" | "B" => Ok(SweepParam::ContextBudget),
            "tau_high" => Ok(SweepParam::TauHigh),
            "tau_low" => Ok(SweepParam::TauLow),
            "tau" => Ok(SweepParam::Tau),
            _ => Err(Error::UnknownKey(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub f1: Option<f64>,
    pub avg_tokens: Option<f64>,
    pub verification_rate: Option<f64>,
    /// `ok`, or `invalid: <reason>`.
    pub status: String,
}

/// One benchmark per value with everything else fixed. Bad values yield
/// an invalid row and the sweep continues.
pub fn sweep(param: SweepParam, values: &[String], base: &Config, data: &BenchData) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let row = match param.apply(base, v).and_then(|c| run_benchmark(data, c)) {
            Ok(run) => SweepRow {
                param: param.as_str().into(),
                value: v.clone(),
                f1: Some(run.metrics.f1),
                avg_tokens: Some(run.metrics.avg_tokens),
                verification_rate: Some(run.metrics.verification_rate),
                status: "ok".into(),
            },
            Err(e @ (Error::InvalidValue(_) | Error::InvalidConfig(_) | Error::UnknownKey(_))) => SweepRow {
                param: param.as_str().into(),
                value: v.clone(),
                f1: None,
                avg_tokens: None,
                verification_rate: None,
                status: format!("invalid: {e}"),
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(rows)
}

pub const SWEEP_HEADER: [&str; 6] = ["param", "value", "f1", "avg_tokens", "verification_rate", "status"];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    let f = |x: Option<f64>| x.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.param.clone(),
            r.value.clone(),
            f(r.f1),
            f(r.avg_tokens),
            f(r.verification_rate),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
