//! Alert-limit ranging check and the session verdict.

use serde::{Deserialize, Serialize};

use crate::bb84::{QberBlock, QBER_THRESHOLD};
use crate::estimator::Solution;
use crate::geometry::C;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityPolicy {
    /// Alert limit `L` on |R − R_p|, metres.
    pub alert_limit: f64,
    pub qber_threshold: f64,
    /// Residual clip in units of each link's RMS.
    pub residual_k: f64,
}

impl Default for SecurityPolicy {
    fn default() -> Self {
        SecurityPolicy::igs()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("alert limit must be positive, got {0}")]
    AlertLimit(f64),
    #[error("QBER threshold must lie in (0, 0.25), got {0}")]
    Threshold(f64),
    #[error("residual clip must be positive, got {0}")]
    ResidualK(f64),
}

impl SecurityPolicy {
    /// 5 cm, a precise-orbit prediction class.
    pub fn igs() -> Self {
        SecurityPolicy { alert_limit: 0.05, qber_threshold: QBER_THRESHOLD, residual_k: 3.0 }
    }

    /// 3 m, for metre-class orbit predictions.
    pub fn micius() -> Self {
        SecurityPolicy { alert_limit: 3.0, ..SecurityPolicy::igs() }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.alert_limit > 0.0 && self.alert_limit.is_finite()) {
            return Err(PolicyError::AlertLimit(self.alert_limit));
        }
        if !(self.qber_threshold > 0.0 && self.qber_threshold < 0.25) {
            return Err(PolicyError::Threshold(self.qber_threshold));
        }
        if !(self.residual_k > 0.0) {
            return Err(PolicyError::ResidualK(self.residual_k));
        }
        Ok(())
    }

    /// Largest offset error an undetected attack can induce, seconds.
    pub fn offset_bound(&self) -> f64 {
        self.alert_limit / C
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlertDecision {
    Keep,
    Discard,
}

pub fn alert_check(solution: &Solution, predicted_range: f64, policy: &SecurityPolicy) -> AlertDecision {
    if (solution.r0 - predicted_range).abs() <= policy.alert_limit {
        AlertDecision::Keep
    } else {
        AlertDecision::Discard
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowCheck {
    pub window_index: usize,
    pub epoch: f64,
    pub measured_range: f64,
    pub predicted_range: f64,
    pub decision: AlertDecision,
}

impl WindowCheck {
    pub fn discrepancy(&self) -> f64 {
        (self.measured_range - self.predicted_range).abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Secure,
    Compromised,
    InsufficientData,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Secure => 0,
            Verdict::Compromised => 2,
            Verdict::InsufficientData => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub blocks_total: usize,
    pub blocks_kept: usize,
    pub windows_total: usize,
    pub windows_kept: usize,
    pub frames_total: usize,
    pub frames_authentic: usize,
    pub max_range_discrepancy: f64,
    pub verdict: Verdict,
    /// `L/c` when secure.
    pub guaranteed_offset_bound: Option<f64>,
    /// Three times the averaged ranging RMS, as a time, to be read
    /// alongside the bound.
    pub statistical_offset_term: f64,
    pub reasons: Vec<String>,
}

pub fn session_verdict(
    blocks: &[QberBlock],
    windows: &[WindowCheck],
    frames_authentic: &[bool],
    policy: &SecurityPolicy,
    averaged_ranging_rms: f64,
) -> SessionReport {
    let mut reasons = Vec::new();
    let failed_blocks = blocks.iter().filter(|b| b.failed()).count();
    if failed_blocks > 0 {
        reasons.push(format!("{failed_blocks} block(s) above the QBER threshold"));
    }
    let discarded = windows.iter().filter(|w| w.decision == AlertDecision::Discard).count();
    if discarded > 0 {
        reasons.push(format!("{discarded} window(s) outside the alert limit"));
    }
    let rejected = frames_authentic.iter().filter(|a| !**a).count();
    if rejected > 0 {
        reasons.push(format!("{rejected} frame(s) failed authentication"));
    }
    let windows_kept = windows.len() - discarded;
    let verdict = if !reasons.is_empty() {
        Verdict::Compromised
    } else if windows_kept > 0 {
        Verdict::Secure
    } else {
        reasons.push("no window survived".into());
        Verdict::InsufficientData
    };
    SessionReport {
        blocks_total: blocks.len(),
        blocks_kept: blocks.iter().filter(|b| b.kept).count(),
        windows_total: windows.len(),
        windows_kept,
        frames_total: frames_authentic.len(),
        frames_authentic: frames_authentic.len() - rejected,
        max_range_discrepancy: windows.iter().map(WindowCheck::discrepancy).fold(0.0, f64::max),
        verdict,
        guaranteed_offset_bound: (verdict == Verdict::Secure).then(|| policy.offset_bound()),
        statistical_offset_term: 3.0 * averaged_ranging_rms / C,
        reasons,
    }
}
