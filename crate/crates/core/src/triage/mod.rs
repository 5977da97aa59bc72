//! Low-cost screening: three risk signals per region, a convex blend of
//! them, and top-K retention.

pub mod rules;
pub mod signals;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RepoSnapshot;
use crate::model::{Region, SignalSet, Unit};

pub use rules::{static_signal, PatternKind, Rule, RulePack, RuleSpec};
pub use signals::{
    blend_meta, lm_signal, meta_features, meta_signal, KeywordScorer, LlmScorer, LmSignal,
    RiskScorer, ScorerOutput,
};

/// Tolerance for "sums to one" checks on coefficient vectors.
pub const CONVEX_EPS: f64 = 1e-9;

pub(crate) fn check_convex(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidConfig(format!("{name} must be nonnegative: {values:?}")));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > CONVEX_EPS {
        return Err(Error::InvalidConfig(format!("{name} must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Weights of the static, metadata and language-model signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriageCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for TriageCoefficients {
    fn default() -> Self {
        TriageCoefficients {
            alpha: 0.4,
            beta: 0.2,
            gamma: 0.4,
        }
    }
}

impl TriageCoefficients {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let c = TriageCoefficients { alpha, beta, gamma };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        check_convex("triage coefficients", &[self.alpha, self.beta, self.gamma])
    }
}

/// `α·s_stat + β·s_meta + γ·s_lm`.
pub fn risk0(signals: &SignalSet, c: &TriageCoefficients) -> Unit {
    let raw = c.alpha * signals.s_stat.get() + c.beta * signals.s_meta.get() + c.gamma * signals.s_lm.get();
    // convex coefficients keep this in range up to rounding
    Unit::saturating(raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRegion {
    pub region: Region,
    pub risk0: Unit,
}

/// Orders by descending risk, then ascending region id.
pub fn triage_order(a: &ScoredRegion, b: &ScoredRegion) -> std::cmp::Ordering {
    b.risk0
        .get()
        .total_cmp(&a.risk0.get())
        .then_with(|| a.region.id.cmp(&b.region.id))
}

/// Keeps the `k` riskiest regions in deterministic order.
pub fn select_top_k(mut regions: Vec<ScoredRegion>, k: usize) -> Result<Vec<ScoredRegion>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    regions.sort_by(triage_order);
    regions.truncate(k);
    Ok(regions)
}

#[derive(Debug, Clone, Default)]
pub struct TriageOutcome {
    /// Every region with its signals filled in, in triage order.
    pub scored: Vec<ScoredRegion>,
    pub tokens: u64,
    pub warnings: Vec<String>,
}

impl TriageOutcome {
    pub fn max_risk0(&self) -> Unit {
        self.scored.first().map_or(Unit::ZERO, |s| s.risk0)
    }
}

/// Computes all signals and Risk₀ for each region.
pub fn triage_regions(
    regions: Vec<Region>,
    snapshot: &RepoSnapshot,
    pack: &RulePack,
    scorer: &dyn RiskScorer,
    coeffs: &TriageCoefficients,
) -> TriageOutcome {
    let mut out = TriageOutcome::default();
    for mut region in regions {
        let (s_stat, hits) = static_signal(&region, pack);
        let lm = lm_signal(&region, scorer);
        out.tokens += lm.tokens;
        out.warnings.extend(lm.warning);
        region.signals = SignalSet {
            s_stat,
            s_meta: meta_signal(&region, snapshot),
            s_lm: lm.value,
            rule_hits: hits,
        };
        let risk = risk0(&region.signals, coeffs);
        out.scored.push(ScoredRegion { region, risk0: risk });
    }
    out.scored.sort_by(triage_order);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RegionKind, SourceLocation};

    fn signals(s: f64, m: f64, l: f64) -> SignalSet {
        SignalSet {
            s_stat: Unit::new(s).unwrap(),
            s_meta: Unit::new(m).unwrap(),
            s_lm: Unit::new(l).unwrap(),
            rule_hits: vec![],
        }
    }

    fn scored(id: &str, risk: f64) -> ScoredRegion {
        ScoredRegion {
            region: Region::new(id, RegionKind::Function, SourceLocation::new("f.c", 1, 1).unwrap(), "x;").unwrap(),
            risk0: Unit::new(risk).unwrap(),
        }
    }

    #[test]
    fn risk0_examples() {
        let c = TriageCoefficients::new(0.5, 0.2, 0.3).unwrap();
        assert!((risk0(&signals(0.8, 0.5, 0.6), &c).get() - 0.68).abs() < 1e-12);
        assert_eq!(risk0(&signals(0.0, 0.0, 0.0), &c), Unit::ZERO);
        assert!((risk0(&signals(1.0, 1.0, 1.0), &c).get() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coefficients_must_be_convex() {
        assert!(TriageCoefficients::new(0.5, 0.5, 0.5).is_err());
        assert!(TriageCoefficients::new(-0.1, 0.6, 0.5).is_err());
        TriageCoefficients::default().validate().unwrap();
    }

    #[test]
    fn top_k_tie_broken_by_id() {
        let v = vec![scored("c", 0.5), scored("a", 0.9), scored("d", 0.1), scored("b", 0.5)];
        let top = select_top_k(v, 2).unwrap();
        let ids: Vec<_> = top.iter().map(|s| s.region.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn top_k_fewer_than_k() {
        let top = select_top_k(vec![scored("x", 0.1), scored("y", 0.3), scored("z", 0.2)], 8).unwrap();
        let ids: Vec<_> = top.iter().map(|s| s.region.id.as_str()).collect();
        assert_eq!(ids, ["y", "z", "x"]);
        assert!(select_top_k(vec![], 0).is_err());
    }

    #[test]
    fn triage_fills_signals() {
        let r = Region::new(
            "s#fn",
            RegionKind::Function,
            SourceLocation::new("s.c", 1, 3).unwrap(),
            "void f(char *in) {\n  char buf[8];\n  strcpy(buf, in);\n}\n",
        )
        .unwrap();
        let out = triage_regions(
            vec![r],
            &RepoSnapshot::empty(),
            &RulePack::builtin(),
            &KeywordScorer::default(),
            &TriageCoefficients::default(),
        );
        let s = &out.scored[0];
        assert_eq!(s.region.signals.s_stat.get(), 0.6);
        assert_eq!(s.region.signals.rule_hits[0].line, 3);
        assert!(s.risk0.get() > 0.24);
        assert_eq!(out.tokens, 0);
    }
}
