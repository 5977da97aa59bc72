//! Weighted evidence fusion and threshold decisions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{clamp_unit, Action, EvidenceVector, Severity, Unit};
use crate::triage::check_convex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    /// Penalty weight on counter-evidence.
    pub w6: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights {
            w1: 0.20,
            w2: 0.15,
            w3: 0.15,
            w4: 0.25,
            w5: 0.25,
            w6: 0.30,
        }
    }
}

impl FusionWeights {
    pub fn from_array(w: [f64; 6]) -> Result<Self> {
        let weights = FusionWeights {
            w1: w[0],
            w2: w[1],
            w3: w[2],
            w4: w[3],
            w5: w[4],
            w6: w[5],
        };
        weights.validate()?;
        Ok(weights)
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.w1, self.w2, self.w3, self.w4, self.w5, self.w6]
    }

    pub fn validate(&self) -> Result<()> {
        check_convex("fusion weights w1..w5", &[self.w1, self.w2, self.w3, self.w4, self.w5])?;
        if !(0.0..=1.0).contains(&self.w6) {
            return Err(Error::InvalidConfig(format!("w6 must lie in [0, 1], got {}", self.w6)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau_high: f64,
    pub tau_low: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tau_high: 0.82,
            tau_low: 0.48,
        }
    }
}

impl Thresholds {
    pub fn new(tau_high: f64, tau_low: f64) -> Result<Self> {
        let t = Thresholds { tau_high, tau_low };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_high", self.tau_high), ("tau_low", self.tau_low)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.tau_low >= self.tau_high {
            return Err(Error::InvalidConfig(format!(
                "tau_low ({}) must be below tau_high ({})",
                self.tau_low, self.tau_high
            )));
        }
        Ok(())
    }

    /// The band where a score is neither accepted early nor rejected.
    pub fn in_band(&self, score: f64) -> bool {
        score >= self.tau_low && score < self.tau_high
    }
}

/// Unclamped weighted sum.
pub fn raw_score(ev: &EvidenceVector, w: &FusionWeights) -> f64 {
    w.w1 * ev.risk0.get() + w.w2 * ev.e_stat.get() + w.w3 * ev.e_ctx.get() + w.w4 * ev.e_agt.get()
        + w.w5 * ev.e_dyn.get()
        - w.w6 * ev.e_ctr.get()
}

pub fn fuse(ev: &EvidenceVector, w: &FusionWeights) -> Unit {
    clamp_unit(raw_score(ev, w)).unwrap_or(Unit::ZERO)
}

/// Routing decision for a fused score.
pub fn decide(score: f64, severity: Severity, t: &Thresholds) -> Action {
    if score >= t.tau_high {
        Action::AcceptEarly
    } else if score < t.tau_low {
        Action::Reject
    } else if severity.is_high() {
        Action::VerifyThenDecide
    } else {
        Action::Escalate
    }
}

/// Final label once every channel is in: accepted iff the score clears
/// `tau_low`.
pub fn final_action(score: f64, t: &Thresholds) -> Action {
    if score >= t.tau_low {
        Action::Accept
    } else {
        Action::Reject
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: [f64; 6]) -> EvidenceVector {
        let u = |x| Unit::new(x).unwrap();
        EvidenceVector {
            risk0: u(v[0]),
            e_stat: u(v[1]),
            e_ctx: u(v[2]),
            e_agt: u(v[3]),
            e_dyn: u(v[4]),
            e_ctr: u(v[5]),
        }
    }

    #[test]
    fn fuse_examples() {
        // these weights sum to 0.9, so they bypass validation
        let w = FusionWeights {
            w1: 0.2,
            w2: 0.1,
            w3: 0.1,
            w4: 0.3,
            w5: 0.2,
            w6: 0.3,
        };
        assert!(w.validate().is_err());
        let s = fuse(&ev([0.5, 0.8, 0.6, 1.0, 0.0, 0.4]), &w).get();
        assert!((s - 0.42).abs() < 1e-12);
        assert_eq!(fuse(&ev([0.0; 6]), &w).get(), 0.0);
        let w = FusionWeights::from_array([0.2, 0.2, 0.2, 0.2, 0.2, 1.0]).unwrap();
        assert_eq!(fuse(&ev([1.0; 6]), &w).get(), 0.0);
    }

    #[test]
    fn weights_validation() {
        assert!(FusionWeights::default().validate().is_ok());
        assert!(FusionWeights::from_array([0.2, 0.2, 0.2, 0.2, 0.3, 0.3]).is_err());
        assert!(FusionWeights::from_array([0.2, 0.2, 0.2, 0.2, 0.2, 1.5]).is_err());
        assert!(FusionWeights::from_array([-0.1, 0.3, 0.2, 0.3, 0.3, 0.1]).is_err());
    }

    #[test]
    fn decisions() {
        let t = Thresholds::default();
        assert_eq!(decide(0.90, Severity::Low, &t), Action::AcceptEarly);
        assert_eq!(decide(0.30, Severity::Critical, &t), Action::Reject);
        assert_eq!(decide(0.60, Severity::High, &t), Action::VerifyThenDecide);
        assert_eq!(decide(0.60, Severity::Medium, &t), Action::Escalate);
        assert_eq!(decide(0.48, Severity::Low, &t), Action::Escalate);
        assert!(Thresholds::new(0.5, 0.5).is_err());
        assert!(Thresholds::new(0.4, 0.6).is_err());
    }
}
