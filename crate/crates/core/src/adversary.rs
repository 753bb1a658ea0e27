//! Attack injection: intercept-resend, per-direction delays and tampering
//! with classical frames.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bb84::{self, Basis};
use crate::channel::{InFlight, Photon, UplinkPulse};
use crate::profile::Profile;
use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy", content = "seconds")]
pub enum ResendTiming {
    #[default]
    PassThrough,
    FixedShift(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TamperMode {
    #[default]
    BitFlip,
    Replay,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackScenario {
    pub intercept_resend_fraction: f64,
    /// Extra downlink delay, seconds, as a function of emission time.
    pub delay_down: Profile,
    pub delay_up: Profile,
    pub tamper_frames: bool,
    pub tamper_mode: TamperMode,
    pub resend_timing: ResendTiming,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttackError {
    #[error("intercept-resend fraction {0} outside [0, 1]")]
    Fraction(f64),
    /// Propagation time cannot be shortened.
    #[error("{0}: delays must be non-negative")]
    NegativeDelay(String),
    #[error("resend shift {0} s would make the photon arrive early")]
    NegativeShift(f64),
}

impl AttackScenario {
    pub fn none() -> Self {
        AttackScenario::default()
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(0.0..=1.0).contains(&self.intercept_resend_fraction) {
            return Err(AttackError::Fraction(self.intercept_resend_fraction));
        }
        for (name, p) in [("delay_down", &self.delay_down), ("delay_up", &self.delay_up)] {
            p.validate(name, 0.0, f64::INFINITY).map_err(AttackError::NegativeDelay)?;
        }
        if let ResendTiming::FixedShift(s) = self.resend_timing {
            if !(s >= 0.0) {
                return Err(AttackError::NegativeShift(s));
            }
        }
        Ok(())
    }

    pub fn is_passive(&self) -> bool {
        self.intercept_resend_fraction == 0.0
            && self.delay_down == Profile::Constant(0.0)
            && self.delay_up == Profile::Constant(0.0)
            && !self.tamper_frames
    }
}

/// The attacker on the optical links.
pub struct Eve {
    scenario: AttackScenario,
    rng: SimRng,
    pub intercepted: u64,
}

impl Eve {
    pub fn new(scenario: AttackScenario, rng: SimRng) -> Result<Self, AttackError> {
        scenario.validate()?;
        Ok(Eve { scenario, rng, intercepted: 0 })
    }
}

/// Measures in a random basis and re-prepares the outcome.
pub fn intercept_resend<R: Rng + ?Sized>(photon: &mut Photon, timing: ResendTiming, rng: &mut R) {
    let basis = Basis::random(rng);
    let bit = bb84::measure(&photon.state, basis, 0.0, rng);
    photon.state = bb84::encode(bit, basis, photon.state.intensity);
    if let ResendTiming::FixedShift(s) = timing {
        photon.arrival_true += s;
    }
}

impl InFlight for Eve {
    fn downlink(&mut self, photon: &mut Photon) {
        let f = self.scenario.intercept_resend_fraction;
        if f > 0.0 && (f >= 1.0 || self.rng.random::<f64>() < f) {
            intercept_resend(photon, self.scenario.resend_timing, &mut self.rng);
            self.intercepted += 1;
        }
        photon.arrival_true += self.scenario.delay_down.eval(photon.emit_true);
    }

    fn uplink(&mut self, pulse: &mut UplinkPulse) {
        pulse.arrival_true += self.scenario.delay_up.eval(pulse.emit_true);
    }
}

/// Applies a delay profile to arrival times.
pub fn apply_delay(arrivals: &mut [(f64, f64)], delay: &Profile) -> Result<(), AttackError> {
    delay.validate("delay", 0.0, f64::INFINITY).map_err(AttackError::NegativeDelay)?;
    for (emit, arrival) in arrivals {
        *arrival += delay.eval(*emit);
    }
    Ok(())
}

/// Corrupts a frame stream in place: either one random ciphertext bit per
/// frame, or each frame after the first replaced by its predecessor.
/// `header_len` bytes at the front of each frame are left untouched by
/// bit flips. Frame count is preserved.
pub fn tamper_frames<R: Rng + ?Sized>(frames: &mut [Vec<u8>], mode: TamperMode, header_len: usize, rng: &mut R) {
    match mode {
        TamperMode::BitFlip => {
            for f in frames.iter_mut().filter(|f| f.len() > header_len) {
                let i = rng.random_range(header_len..f.len());
                f[i] ^= 1 << rng.random_range(0..8);
            }
        }
        TamperMode::Replay => {
            for i in (1..frames.len()).rev() {
                frames[i] = frames[i - 1].clone();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bb84::{encode, IntensityClass};
    use crate::rng::seeded;

    fn photons(n: usize, seed: u64) -> Vec<Photon> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|k| Photon {
                pulse_index: k as u64,
                emit_true: k as f64 * 1e-6,
                arrival_true: k as f64 * 1e-6 + 2e-3,
                state: encode(rng.random::<u8>() & 1, Basis::random(&mut rng), IntensityClass::Signal),
            })
            .collect()
    }

    fn sifted_qber(f: f64, seed: u64) -> f64 {
        let scenario = AttackScenario { intercept_resend_fraction: f, ..AttackScenario::none() };
        let mut eve = Eve::new(scenario, seeded(seed + 1)).unwrap();
        let mut rng = seeded(seed + 2);
        let (mut n, mut e) = (0, 0);
        for mut p in photons(300_000, seed) {
            let sent = p.state;
            eve.downlink(&mut p);
            let b = Basis::random(&mut rng);
            if b == sent.basis {
                n += 1;
                e += usize::from(bb84::measure(&p.state, b, 0.0, &mut rng) != sent.bit);
            }
        }
        assert!(n > 140_000);
        e as f64 / n as f64
    }

    #[test]
    fn zero_fraction_is_identity() {
        let mut eve = Eve::new(AttackScenario::none(), seeded(1)).unwrap();
        let orig = photons(1000, 3);
        let mut out = orig.clone();
        out.iter_mut().for_each(|p| eve.downlink(p));
        assert_eq!(orig, out);
    }

    #[test]
    fn full_intercept_gives_quarter_qber() {
        let q = sifted_qber(1.0, 10);
        assert!((q - 0.25).abs() < 0.01, "{q}");
    }

    #[test]
    fn partial_intercept_is_linear() {
        for f in [0.1, 0.5] {
            let q = sifted_qber(f, 20);
            assert!((q - 0.25 * f).abs() < 0.01, "f={f} q={q}");
        }
    }

    #[test]
    fn intercept_preserves_counts_and_timing() {
        let scenario = AttackScenario { intercept_resend_fraction: 1.0, ..AttackScenario::none() };
        let mut eve = Eve::new(scenario, seeded(1)).unwrap();
        let orig = photons(100, 4);
        let mut out = orig.clone();
        out.iter_mut().for_each(|p| eve.downlink(p));
        assert_eq!(out.len(), orig.len());
        assert!(orig.iter().zip(&out).all(|(a, b)| a.arrival_true == b.arrival_true && a.state.intensity == b.state.intensity));
    }

    #[test]
    fn delays_shift_arrivals() {
        let scenario = AttackScenario { delay_down: 2e-9.into(), delay_up: 1e-9.into(), ..AttackScenario::none() };
        let mut eve = Eve::new(scenario, seeded(1)).unwrap();
        let mut p = photons(1, 5)[0];
        let before = p.arrival_true;
        eve.downlink(&mut p);
        assert!((p.arrival_true - before - 2e-9).abs() < 1e-18);
        let mut u = UplinkPulse { index: 0, emit_true: 1.0, arrival_true: 1.002 };
        eve.uplink(&mut u);
        assert!((u.arrival_true - 1.002 - 1e-9).abs() < 1e-15);
    }

    #[test]
    fn negative_delay_rejected() {
        let scenario = AttackScenario { delay_up: Profile::Constant(-1e-9), ..AttackScenario::none() };
        assert!(matches!(Eve::new(scenario, seeded(1)), Err(AttackError::NegativeDelay(_))));
        let mut a = vec![(0.0, 1.0)];
        assert!(apply_delay(&mut a, &Profile::Table(vec![[0.0, 0.0], [1.0, -1e-12]])).is_err());
        assert!(apply_delay(&mut a, &Profile::Constant(0.0)).is_ok());
        assert_eq!(a, vec![(0.0, 1.0)]);
    }

    #[test]
    fn tamper_preserves_count() {
        let mut rng = seeded(1);
        let orig: Vec<Vec<u8>> = (0..10u8).map(|i| vec![i; 64]).collect();
        let mut flipped = orig.clone();
        tamper_frames(&mut flipped, TamperMode::BitFlip, 16, &mut rng);
        assert_eq!(flipped.len(), 10);
        for (a, b) in orig.iter().zip(&flipped) {
            let diff: u32 = a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum();
            assert_eq!(diff, 1);
            assert_eq!(a[..16], b[..16]);
        }
        let mut replayed = orig.clone();
        tamper_frames(&mut replayed, TamperMode::Replay, 16, &mut rng);
        assert_eq!(replayed.len(), 10);
        assert_eq!(replayed[0], orig[0]);
        assert_eq!(replayed[5], orig[4]);
    }
}
