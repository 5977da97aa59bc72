//! Detection, localisation and cost metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CaseResult, Stage};
use crate::sample::{Label, LineRef, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Nothing was predicted positive, so precision is reported as 0.
    pub degenerate: bool,
}

/// Precision, recall and F1 when predicting positive iff score ≥ threshold.
pub fn prf1(results: &[(f64, bool)], threshold: f64) -> Result<Prf1> {
    if results.is_empty() {
        return Err(Error::InvalidInput("no results to score".into()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for &(score, positive) in results {
        match (score >= threshold, positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let degenerate = tp + fp == 0;
    let precision = if degenerate { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Prf1 {
        precision,
        recall,
        f1,
        degenerate,
    })
}

/// Mann–Whitney AUROC with average ranks for ties.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput("scores and labels differ in length".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("auroc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; a tie block shares the mean of its ranks
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = labels.iter().zip(&ranks).filter(|(l, _)| **l).map(|(_, r)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Localisation {
    pub hit1: f64,
    pub hit3: f64,
    pub reciprocal_rank: f64,
}

/// Ranks the case's flagged lines by finding score (ties by path, then
/// line) and locates the first truth line.
pub fn localisation(case: &CaseResult, truth: &[LineRef]) -> Localisation {
    let mut best: BTreeMap<(String, u32), f64> = BTreeMap::new();
    for f in &case.findings {
        let loc = &f.finding.location;
        for line in loc.line_start..=loc.line_end {
            let e = best.entry((loc.file.clone(), line)).or_insert(f64::NEG_INFINITY);
            *e = e.max(f.score.get());
        }
    }
    let mut ranked: Vec<((String, u32), f64)> = best.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let rank = ranked
        .iter()
        .position(|((file, line), _)| truth.iter().any(|t| &t.file == file && t.line == *line))
        .map(|i| i + 1);
    match rank {
        Some(r) => Localisation {
            hit1: (r <= 1) as u8 as f64,
            hit3: (r <= 3) as u8 as f64,
            reciprocal_rank: 1.0 / r as f64,
        },
        None => Localisation {
            hit1: 0.0,
            hit3: 0.0,
            reciprocal_rank: 0.0,
        },
    }
}

pub fn mean_reciprocal_rank(ranks: &[f64]) -> f64 {
    if ranks.is_empty() {
        0.0
    } else {
        ranks.iter().sum::<f64>() / ranks.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Zero when only one class is present.
    pub auroc: f64,
    pub top1: f64,
    pub top3: f64,
    pub mrr: f64,
    pub avg_tokens: f64,
    pub avg_time: f64,
    pub early_exit_rate: f64,
    pub verification_rate: f64,
    pub cases: usize,
    pub errored: usize,
    pub degenerate_precision: bool,
    pub localised_cases: usize,
}

/// Aggregates per-case results; `samples` and `results` are index-aligned.
pub fn aggregate(samples: &[Sample], results: &[CaseResult], threshold: f64) -> Result<MetricsReport> {
    if samples.len() != results.len() {
        return Err(Error::InvalidInput("samples and results differ in length".into()));
    }
    let pairs: Vec<(f64, bool)> = samples
        .iter()
        .zip(results)
        .map(|(s, r)| (r.case_score.get(), s.label == Label::Vulnerable))
        .collect();
    let p = prf1(&pairs, threshold)?;
    let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
    let auc = match auroc(&scores, &labels) {
        Ok(a) => a,
        Err(Error::UndefinedMetric(_)) => 0.0,
        Err(e) => return Err(e),
    };

    let mut loc = Vec::new();
    for (s, r) in samples.iter().zip(results) {
        if s.label != Label::Vulnerable {
            continue;
        }
        if let Some(truth) = s.vulnerable_lines.as_ref().filter(|t| !t.is_empty()) {
            loc.push(localisation(r, truth));
        }
    }
    let mean = |f: &dyn Fn(&Localisation) -> f64| {
        if loc.is_empty() {
            0.0
        } else {
            loc.iter().map(f).sum::<f64>() / loc.len() as f64
        }
    };
    let n = results.len() as f64;
    let rate = |pred: &dyn Fn(&CaseResult) -> bool| results.iter().filter(|r| pred(r)).count() as f64 / n;
    Ok(MetricsReport {
        precision: p.precision,
        recall: p.recall,
        f1: p.f1,
        auroc: auc,
        top1: mean(&|l| l.hit1),
        top3: mean(&|l| l.hit3),
        mrr: mean_reciprocal_rank(&loc.iter().map(|l| l.reciprocal_rank).collect::<Vec<_>>()),
        avg_tokens: results.iter().map(|r| r.tokens_used as f64).sum::<f64>() / n,
        avg_time: results.iter().map(|r| r.wall_time).sum::<f64>() / n,
        early_exit_rate: rate(&|r| r.early_exit),
        verification_rate: rate(&|r| r.stage_path.contains(&Stage::Verification)),
        cases: results.len(),
        errored: results.iter().filter(|r| r.error.is_some()).count(),
        degenerate_precision: p.degenerate,
        localised_cases: loc.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prf1_examples() {
        // TP=2, FP=1, FN=1
        let r = [(0.9, true), (0.8, true), (0.7, false), (0.1, true), (0.0, false)];
        let p = prf1(&r, 0.5).unwrap();
        assert!((p.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.f1 - 2.0 / 3.0).abs() < 1e-12);
        let p = prf1(&[(1.0, true), (0.0, false)], 0.5).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = prf1(&[(0.1, true), (0.0, false)], 0.5).unwrap();
        assert!(p.degenerate);
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        assert!(prf1(&[], 0.5).is_err());
    }

    #[test]
    fn auroc_examples() {
        let a = auroc(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]).unwrap();
        assert!((a - 0.75).abs() < 1e-12);
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn mrr_example() {
        let m = mean_reciprocal_rank(&[1.0, 1.0 / 3.0]);
        assert!((m - 0.666_666_666_666_666_6).abs() < 1e-12);
    }
}
