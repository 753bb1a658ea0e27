//! Station clock models.
//!
//! A clock maps true time `T` to its local reading `t` through
//!
//! ```text
//! T = τ + κ·(t + d·t²/2)
//! ```
//!
//! i.e. an offset `τ` at local zero, a rate factor `κ` and a linear drift `d`
//! of the rate (`dT/dt = κ·(1 + d·t)`). Timestamp jitter is applied only when
//! an event is tagged.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockModel {
    /// Offset τ at local time zero, seconds.
    pub offset_tau: f64,
    /// Rate factor κ.
    pub rate_kappa: f64,
    /// Linear drift of the rate, 1/s.
    pub freq_drift: f64,
    /// RMS of Gaussian tagging noise, seconds.
    pub timestamp_jitter_rms: f64,
}

impl Default for ClockModel {
    fn default() -> Self {
        ClockModel::ideal()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClockError {
    #[error("rate factor must be positive and finite, got {0}")]
    Rate(f64),
    #[error("timestamp jitter must be non-negative, got {0}")]
    Jitter(f64),
    #[error("clock parameter {0} is not finite")]
    NonFinite(&'static str),
}

impl ClockModel {
    pub const fn ideal() -> Self {
        ClockModel { offset_tau: 0.0, rate_kappa: 1.0, freq_drift: 0.0, timestamp_jitter_rms: 0.0 }
    }

    pub fn new(offset_tau: f64, rate_kappa: f64) -> Result<Self, ClockError> {
        let clock = ClockModel { offset_tau, rate_kappa, ..ClockModel::ideal() };
        clock.validate()?;
        Ok(clock)
    }

    pub fn with_drift(mut self, freq_drift: f64) -> Self {
        self.freq_drift = freq_drift;
        self
    }

    pub fn with_jitter(mut self, rms: f64) -> Self {
        self.timestamp_jitter_rms = rms;
        self
    }

    pub fn validate(&self) -> Result<(), ClockError> {
        for (name, v) in [
            ("offset_tau", self.offset_tau),
            ("freq_drift", self.freq_drift),
            ("timestamp_jitter_rms", self.timestamp_jitter_rms),
        ] {
            if !v.is_finite() {
                return Err(ClockError::NonFinite(name));
            }
        }
        if !(self.rate_kappa > 0.0 && self.rate_kappa.is_finite()) {
            return Err(ClockError::Rate(self.rate_kappa));
        }
        if self.timestamp_jitter_rms < 0.0 {
            return Err(ClockError::Jitter(self.timestamp_jitter_rms));
        }
        Ok(())
    }

    /// Local reading at a true instant (inverse of [`ClockModel::to_true`]).
    pub fn to_local(&self, true_time: f64) -> f64 {
        let u = (true_time - self.offset_tau) / self.rate_kappa;
        if self.freq_drift == 0.0 {
            return u;
        }
        // Root of d/2·t² + t − u = 0 nearest u, written to avoid cancellation.
        let disc = 1.0 + 2.0 * self.freq_drift * u;
        2.0 * u / (1.0 + disc.max(0.0).sqrt())
    }

    /// True time at a local reading.
    pub fn to_true(&self, local_time: f64) -> f64 {
        let t = local_time;
        self.offset_tau + self.rate_kappa * (t + 0.5 * self.freq_drift * t * t)
    }

    /// Tags a true instant: local reading plus jitter, quantised to 1 ps.
    pub fn tag<R: Rng + ?Sized>(&self, true_time: f64, rng: &mut R) -> Timestamp {
        let local = self.to_local(true_time);
        let noisy = if self.timestamp_jitter_rms > 0.0 {
            let n = Normal::new(0.0, self.timestamp_jitter_rms).expect("validated jitter");
            local + n.sample(rng)
        } else {
            local
        };
        Timestamp::from_secs_ps(noisy)
    }

    /// Instantaneous rate dT/dt at a local reading.
    pub fn rate_at(&self, local_time: f64) -> f64 {
        self.rate_kappa * (1.0 + self.freq_drift * local_time)
    }
}
