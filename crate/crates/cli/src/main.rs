use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vulnaudit::config::{parse_overrides, Component, Config, Preset};
use vulnaudit::harness::bench::{write_metrics_csv, write_run, write_sweep_csv};
use vulnaudit::harness::{
    aggregate, generate_synthetic_corpus, load_dataset, run_ablation, run_benchmark, sweep, BenchData, SweepParam,
};
use vulnaudit::ingest::snapshot::{build_snapshot, SnapshotOptions};
use vulnaudit::pipeline::{run_pipeline, Engine};
use vulnaudit::report::{read_report, report_to_string, Report};
use vulnaudit::sample::{Label, Sample, Task};

#[derive(Parser)]
#[command(name = "vulnaudit", version, about = "Evidence-driven vulnerability auditing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit one source file or unified diff against a repository.
    Analyze {
        #[arg(long)]
        repo: PathBuf,
        /// A source file, or a `.diff`/`.patch` file.
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one preset over a JSONL dataset.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Rerun the benchmark once per value of one parameter.
    Sweep {
        #[arg(long)]
        dataset: PathBuf,
        /// k, context_budget, tau_high, tau_low or tau (values `high:low`).
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Benchmark with components switched off.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        /// Any of sceptic, verification, context, memory, scheduler.
        #[arg(long, value_delimiter = ',', required = true)]
        disable: Vec<String>,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write a seeded synthetic corpus with ground truth.
    GenCorpus {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Share of vulnerable samples.
        #[arg(long, default_value_t = 0.3)]
        fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render report JSON files as markdown, plus Pareto points when labels are known.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Dataset holding the labels, enabling detection metrics.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` pairs applied over the config file.
    #[arg(long)]
    overrides: Option<String>,
    #[arg(long)]
    preset: Option<String>,
}

/// Bad flags, keys or values; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl fmt::Display) -> anyhow::Error {
    Usage(e.to_string()).into()
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let base = match &self.config {
            Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => Config::default(),
        };
        let mut pairs = match &self.overrides {
            Some(text) => parse_overrides(text).map_err(usage)?,
            None => Vec::new(),
        };
        if let Some(p) = &self.preset {
            p.parse::<Preset>().map_err(usage)?;
            pairs.push(("preset".into(), p.clone()));
        }
        base.with_overrides(&pairs).map_err(usage)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Analyze {
            repo,
            target,
            config,
            out,
        } => analyze(&repo, &target, config.resolve()?, out.as_deref()),
        Command::Bench { dataset, config, out } => {
            let config = config.resolve()?;
            let data = load_bench(&dataset)?;
            let run = run_benchmark(&data, config)?;
            write_run(&run, &out)?;
            write_metrics_csv(&[&run], std::io::stdout().lock())?;
            Ok(())
        }
        Command::Sweep {
            dataset,
            param,
            values,
            config,
            out,
        } => {
            let param: SweepParam = param.parse().map_err(usage)?;
            let config = config.resolve()?;
            let data = load_bench(&dataset)?;
            let rows = sweep(param, &values, &config, &data)?;
            create_dir(&out)?;
            let path = out.join(format!("sweep-{}.csv", param.as_str()));
            let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_sweep_csv(&rows, file)?;
            write_sweep_csv(&rows, std::io::stdout().lock())?;
            Ok(())
        }
        Command::Ablate {
            dataset,
            disable,
            config,
            out,
        } => {
            let mut components = disable
                .iter()
                .map(|s| s.trim().parse::<Component>().map_err(usage))
                .collect::<Result<Vec<_>>>()?;
            components.sort();
            components.dedup();
            let config = config.resolve()?;
            let data = load_bench(&dataset)?;
            let run = run_ablation(&data, &config, &components)?;
            let names: Vec<&str> = components.iter().map(|c| c.as_str()).collect();
            write_run(&run, &out.join(format!("ablate-{}", names.join("+"))))?;
            write_metrics_csv(&[&run], std::io::stdout().lock())?;
            Ok(())
        }
        Command::GenCorpus { seed, n, fraction, out } => {
            let corpus = generate_synthetic_corpus(seed, n, fraction).map_err(usage)?;
            corpus.write(&out)?;
            let vulnerable = corpus.samples.iter().filter(|s| s.label == Label::Vulnerable).count();
            eprintln!("wrote {} samples ({vulnerable} vulnerable) to {}", corpus.samples.len(), out.display());
            Ok(())
        }
        Command::Report { inputs, dataset, out } => report(&inputs, dataset.as_deref(), out.as_deref()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_bench(dataset: &Path) -> Result<BenchData> {
    let data = BenchData::load(dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
    for w in &data.warnings {
        log::warn!("{w}");
    }
    Ok(data)
}

fn analyze(repo: &Path, target: &Path, config: Config, out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(target).with_context(|| format!("reading {}", target.display()))?;
    let snapshot = build_snapshot(repo, &SnapshotOptions::default())
        .with_context(|| format!("indexing repository {}", repo.display()))?;
    let is_diff = matches!(target.extension().and_then(|e| e.to_str()), Some("diff" | "patch"));
    let file = if is_diff {
        None
    } else {
        let rel = target.strip_prefix(repo).unwrap_or(target);
        Some(rel.to_string_lossy().replace('\\', "/"))
    };
    let id = target.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "target".into());
    let sample = Sample {
        id,
        task: if is_diff { Task::Commit } else { Task::Function },
        code_or_diff: text,
        // unknown; only used for metrics
        label: Label::Benign,
        project: String::new(),
        vulnerable_lines: None,
        split: Default::default(),
        file,
    };
    let digest = config.digest();
    let engine = Engine::from_config(config)?;
    let result = run_pipeline(&sample, &snapshot, &engine);
    engine.repository.save()?;
    if let Some(e) = &result.error {
        bail!("analysis of {} failed: {e}", target.display());
    }
    let json = report_to_string(std::slice::from_ref(&result), &digest)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        let path = dir.join("report-analyze.json");
        std::fs::write(&path, &json).with_context(|| format!("writing {}", path.display()))?;
    }
    std::io::stdout().lock().write_all(json.as_bytes())?;
    Ok(())
}

fn report(inputs: &[PathBuf], dataset: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let labels: Option<BTreeMap<String, Sample>> = match dataset {
        Some(p) => {
            let d = load_dataset(p).with_context(|| format!("loading dataset {}", p.display()))?;
            Some(d.samples.into_iter().map(|s| (s.id.clone(), s)).collect())
        }
        None => None,
    };
    let mut md = String::new();
    let mut pareto = Vec::new();
    for path in inputs {
        let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let report: Report = read_report(file).with_context(|| format!("reading {}", path.display()))?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let name = name.strip_prefix("report-").unwrap_or(&name).to_string();
        md.push_str(&render_markdown(&name, &report));
        if let Some(labels) = &labels {
            let samples = report
                .results
                .iter()
                .map(|r| {
                    labels
                        .get(&r.sample_id)
                        .cloned()
                        .with_context(|| format!("sample {} is not in the dataset", r.sample_id))
                })
                .collect::<Result<Vec<_>>>()?;
            let threshold = Config::default().tau_low;
            let m = aggregate(&samples, &report.results, threshold)?;
            md.push_str(&format!(
                "\nprecision {:.3}, recall {:.3}, f1 {:.3}, auroc {:.3}, top1 {:.3}, mrr {:.3}\n",
                m.precision, m.recall, m.f1, m.auroc, m.top1, m.mrr
            ));
            pareto.push((name, m.avg_tokens, m.f1));
        }
        md.push('\n');
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        let path = dir.join("report.md");
        std::fs::write(&path, &md).with_context(|| format!("writing {}", path.display()))?;
        if !pareto.is_empty() {
            let path = dir.join("pareto.csv");
            let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
            w.write_record(["run", "avg_tokens", "f1"])?;
            for (name, tokens, f1) in &pareto {
                w.write_record([name.clone(), format!("{tokens:.6}"), format!("{f1:.6}")])?;
            }
            w.flush()?;
        }
    } else if dataset.is_none() {
        log::info!("no dataset given; skipping Pareto points");
    }
    std::io::stdout().lock().write_all(md.as_bytes())?;
    Ok(())
}

fn render_markdown(name: &str, report: &Report) -> String {
    let n = report.results.len().max(1) as f64;
    let tokens: u64 = report.results.iter().map(|r| r.tokens_used).sum();
    let early = report.results.iter().filter(|r| r.early_exit).count();
    let verified = report.results.iter().filter(|r| r.verified).count();
    let mut s = format!(
        "## {name}\n\nconfig `{}`, {} cases, avg tokens {:.1}, early exits {:.3}, verified {:.3}\n\n",
        &report.config_digest[..report.config_digest.len().min(12)],
        report.results.len(),
        tokens as f64 / n,
        early as f64 / n,
        verified as f64 / n,
    );
    s.push_str("| case | verdict | score | findings | top finding | stages | tokens |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for r in &report.results {
        let top = r
            .findings
            .first()
            .map(|f| format!("{} @ {}:{}", f.finding.issue_type, f.finding.location.file, f.finding.location.line_start))
            .unwrap_or_else(|| "-".into());
        let stages: Vec<String> = r.stage_path.iter().map(|s| format!("{s:?}").to_lowercase()).collect();
        s.push_str(&format!(
            "| {} | {:?} | {:.3} | {} | {} | {} | {} |\n",
            r.sample_id,
            r.verdict,
            r.case_score.get(),
            r.findings.len(),
            top,
            stages.join(">"),
            r.tokens_used
        ));
    }
    s
}
