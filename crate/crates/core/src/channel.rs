//! Downlink single-photon and uplink classical pulse links.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Geometric, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::bb84::{self, Basis, IntensityClass, QubitLookup, QubitRecord};
use crate::geometry::{Direction, GeometryError, PassEphemeris};
use crate::profile::Profile;
use crate::rng::{self, SimRng, Stream};
use crate::time::{Duration, Timestamp};
use crate::timebase::ClockModel;

/// Ratio of FWHM to RMS for a Gaussian pulse.
pub const FWHM_PER_RMS: f64 = 2.354_820_045_030_949;

pub fn fwhm_to_rms(fwhm: f64) -> f64 {
    fwhm / FWHM_PER_RMS
}

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("invalid link configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownlinkConfig {
    pub rep_rate: f64,
    pub pulse_width_rms: f64,
    /// Signal, decoy, vacuum.
    pub mean_photon_numbers: [f64; 3],
    pub intensity_probabilities: [f64; 3],
    /// Total loss including detector efficiency, dB, as a function of true time.
    pub loss_db: Profile,
    pub detector_jitter_rms: f64,
    /// Dark and background counts per detector, Hz.
    pub background_rate: f64,
    pub detectors: u32,
    /// Probability that a matched-basis measurement flips the bit.
    pub polarization_error: f64,
}

impl Default for DownlinkConfig {
    fn default() -> Self {
        DownlinkConfig {
            rep_rate: 2e8,
            pulse_width_rms: fwhm_to_rms(200e-12),
            mean_photon_numbers: [0.8, 0.1, 0.0],
            intensity_probabilities: [0.5, 0.25, 0.25],
            loss_db: Profile::Constant(32.0),
            detector_jitter_rms: 298.1e-12,
            background_rate: 50.0,
            detectors: 4,
            polarization_error: 0.005,
        }
    }
}

impl DownlinkConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: String| Err(ChannelError::Config(m));
        if !(self.rep_rate > 0.0 && self.rep_rate.is_finite()) {
            return bad(format!("downlink rep_rate {}", self.rep_rate));
        }
        let period_ps = 1e12 / self.rep_rate;
        if (period_ps - period_ps.round()).abs() > 1e-6 * period_ps {
            return bad(format!("downlink period {period_ps} ps is not a whole number of ps"));
        }
        let sum: f64 = self.intensity_probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.intensity_probabilities.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return bad(format!("intensity probabilities {:?} must be in [0,1] and sum to 1", self.intensity_probabilities));
        }
        if self.mean_photon_numbers.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return bad(format!("mean photon numbers {:?}", self.mean_photon_numbers));
        }
        for (name, v) in [
            ("pulse_width_rms", self.pulse_width_rms),
            ("detector_jitter_rms", self.detector_jitter_rms),
            ("background_rate", self.background_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v}"));
            }
        }
        if !(0.0..=0.5).contains(&self.polarization_error) {
            return bad(format!("polarization_error {}", self.polarization_error));
        }
        self.loss_db.validate("downlink loss_db", 0.0, f64::INFINITY).map_err(ChannelError::Config)
    }

    pub fn period(&self) -> Duration {
        Duration::from_ps((1e12 / self.rep_rate).round() as i64)
    }

    pub fn combined_jitter_rms(&self) -> f64 {
        self.pulse_width_rms.hypot(self.detector_jitter_rms)
    }

    pub fn click_probability(&self, class: IntensityClass, loss_db: f64) -> f64 {
        let eta = 10f64.powf(-loss_db / 10.0);
        -(-self.mean_photon_numbers[class.index()] * eta).exp_m1()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UplinkConfig {
    pub rep_rate: f64,
    pub pulse_width_rms: f64,
    pub detection_jitter_rms: f64,
    pub loss_db: Profile,
    /// Per-pulse detection probability before `loss_db`.
    pub detection_probability: Profile,
}

impl Default for UplinkConfig {
    fn default() -> Self {
        UplinkConfig {
            rep_rate: 1e4,
            pulse_width_rms: fwhm_to_rms(0.8e-9),
            detection_jitter_rms: 113e-12,
            loss_db: Profile::Constant(0.0),
            detection_probability: Profile::Constant(0.93),
        }
    }
}

impl UplinkConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.rep_rate > 0.0 && self.rep_rate.is_finite()) {
            return Err(ChannelError::Config(format!("uplink rep_rate {}", self.rep_rate)));
        }
        for (name, v) in [("pulse_width_rms", self.pulse_width_rms), ("detection_jitter_rms", self.detection_jitter_rms)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ChannelError::Config(format!("uplink {name} = {v}")));
            }
        }
        self.loss_db.validate("uplink loss_db", 0.0, f64::INFINITY).map_err(ChannelError::Config)?;
        self.detection_probability.validate("uplink detection_probability", 0.0, 1.0).map_err(ChannelError::Config)
    }

    pub fn period(&self) -> Duration {
        Duration::from_fs((1e15 / self.rep_rate).round() as i64)
    }

    pub fn combined_jitter_rms(&self) -> f64 {
        self.pulse_width_rms.hypot(self.detection_jitter_rms)
    }
}

/// Alice's prepared states, drawn by random access so that the payload of
/// pulse `k` depends only on the seed and `k`.
#[derive(Clone, Debug)]
pub struct QubitSource {
    proto: SimRng,
    cumulative: [f64; 2],
    probabilities: [f64; 3],
}

impl QubitSource {
    pub fn new(seed: u64, intensity_probabilities: [f64; 3]) -> Self {
        let p = intensity_probabilities;
        QubitSource { proto: rng::stream(seed, Stream::QubitSource), cumulative: [p[0], p[0] + p[1]], probabilities: p }
    }

    pub fn record(&self, k: u64) -> QubitRecord {
        let mut r = self.proto.clone();
        r.set_word_pos(u128::from(k) * 2);
        let w = r.next_u64();
        let bit = (w & 1) as u8;
        let basis = if w & 2 == 0 { Basis::Rectilinear } else { Basis::Diagonal };
        let u = (w >> 11) as f64 / (1u64 << 53) as f64;
        let intensity = if u < self.cumulative[0] {
            IntensityClass::Signal
        } else if u < self.cumulative[1] {
            IntensityClass::Decoy
        } else {
            IntensityClass::Vacuum
        };
        bb84::encode(bit, basis, intensity)
    }

    pub fn probabilities(&self) -> [f64; 3] {
        self.probabilities
    }
}

/// Regular emission schedule in a station's local time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PulseTrain {
    pub start: Timestamp,
    pub period: Duration,
    pub count: u64,
}

impl PulseTrain {
    /// Pulses of `clock` whose local times fall inside the true window.
    pub fn covering(clock: &ClockModel, t_start: f64, t_end: f64, period: Duration) -> Self {
        if t_end <= t_start {
            return PulseTrain { start: Timestamp::from_secs_ps(clock.to_local(t_start)), period, count: 0 };
        }
        let lo = Timestamp::from_secs(clock.to_local(t_start));
        let hi = Timestamp::from_secs(clock.to_local(t_end));
        let ps = Duration::from_ps(1).as_as();
        let start = Timestamp::from_as((lo.as_as() + ps - 1).div_euclid(ps) * ps);
        let span = (hi - start).as_as();
        let count = if span < 0 { 0 } else { (span / period.as_as()) as u64 + 1 };
        PulseTrain { start, period, count }
    }

    pub fn local(&self, k: u64) -> Timestamp {
        self.start + self.period * k
    }

    /// Indices whose local time lies in `[lo, hi]`.
    pub fn indices_between(&self, lo: Timestamp, hi: Timestamp) -> std::ops::Range<u64> {
        if self.count == 0 || hi < lo {
            return 0..0;
        }
        let p = self.period.as_as();
        let from = (lo - self.start).as_as();
        let first = from.div_euclid(p) + i128::from(from.rem_euclid(p) != 0);
        let last = (hi - self.start).as_as().div_euclid(p);
        let first = first.clamp(0, self.count as i128) as u64;
        let end = (last + 1).clamp(0, self.count as i128) as u64;
        first..end.max(first)
    }
}

/// Downlink emissions: the pulse schedule plus the source of their payloads.
#[derive(Clone, Debug)]
pub struct DownlinkEmissions {
    pub train: PulseTrain,
    pub source: QubitSource,
}

impl QubitLookup for DownlinkEmissions {
    fn qubit(&self, k: u64) -> Option<QubitRecord> {
        (k < self.train.count).then(|| self.source.record(k))
    }
}

/// A downlink photon between the source and Bob's receiver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Photon {
    pub pulse_index: u64,
    pub emit_true: f64,
    pub arrival_true: f64,
    pub state: QubitRecord,
}

/// An uplink laser pulse between Bob and Alice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UplinkPulse {
    pub index: u64,
    pub emit_true: f64,
    pub arrival_true: f64,
}

/// Hook applied to every signal while in flight.
pub trait InFlight {
    fn downlink(&mut self, _photon: &mut Photon) {}
    fn uplink(&mut self, _pulse: &mut UplinkPulse) {}
}

/// No one on the link.
pub struct Passive;

impl InFlight for Passive {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DownlinkDetection {
    pub local: Timestamp,
    pub basis: Basis,
    pub bit: u8,
    /// Ground truth for tests; `None` for background clicks.
    pub source_pulse: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Tagged {
    pub index: u64,
    pub local: Timestamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct UplinkArrival {
    pub local: Timestamp,
    /// Ground truth for tests.
    pub source_pulse: u64,
}

#[derive(Clone, Debug)]
pub struct DownlinkRun {
    pub emissions: DownlinkEmissions,
    pub detections: Vec<DownlinkDetection>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UplinkRun {
    pub emissions: Vec<Tagged>,
    pub detections: Vec<UplinkArrival>,
}

fn normal(rms: f64) -> Option<Normal<f64>> {
    (rms > 0.0).then(|| Normal::new(0.0, rms).expect("validated rms"))
}

fn draw<R: Rng + ?Sized>(n: &Option<Normal<f64>>, rng: &mut R) -> f64 {
    n.as_ref().map_or(0.0, |n| n.sample(rng))
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_downlink<R: Rng + ?Sized>(
    cfg: &DownlinkConfig,
    eph: &PassEphemeris,
    clock_a: &ClockModel,
    clock_b: &ClockModel,
    source: QubitSource,
    window: (f64, f64),
    eve: &mut dyn InFlight,
    rng: &mut R,
) -> Result<DownlinkRun, ChannelError> {
    cfg.validate()?;
    let (t_start, t_end) = window;
    let train = PulseTrain::covering(clock_a, t_start, t_end, cfg.period());
    let mut detections = Vec::new();

    let min_loss = cfg.loss_db.min_over(t_start, t_end);
    let p_max = IntensityClass::ALL
        .iter()
        .filter(|c| cfg.intensity_probabilities[c.index()] > 0.0)
        .map(|&c| cfg.click_probability(c, min_loss))
        .fold(0.0, f64::max);
    let pulse = normal(cfg.pulse_width_rms);
    let det = normal(cfg.detector_jitter_rms);

    if p_max > 0.0 && train.count > 0 {
        let geo = (p_max < 1.0).then(|| Geometric::new(p_max).expect("p in (0,1)"));
        let mut k = 0u64;
        loop {
            if let Some(g) = &geo {
                k = k.saturating_add(g.sample(rng));
            }
            if k >= train.count {
                break;
            }
            let state = source.record(k);
            let emit_nominal = clock_a.to_true(train.local(k).as_secs());
            let p = cfg.click_probability(state.intensity, cfg.loss_db.eval(emit_nominal));
            if p >= p_max || rng.random::<f64>() * p_max < p {
                let emit_true = emit_nominal + draw(&pulse, rng);
                let arrival_true = emit_true + eph.propagation_delay(emit_true, Direction::Down)?;
                let mut photon = Photon { pulse_index: k, emit_true, arrival_true, state };
                eve.downlink(&mut photon);
                let basis = Basis::random(rng);
                let bit = bb84::measure(&photon.state, basis, cfg.polarization_error, rng);
                let local = clock_b.tag(photon.arrival_true + draw(&det, rng), rng);
                detections.push(DownlinkDetection { local, basis, bit, source_pulse: Some(k) });
            }
            k += 1;
        }
    }

    let span = t_end - t_start;
    let rate = cfg.background_rate * f64::from(cfg.detectors);
    if span > 0.0 && rate > 0.0 {
        let n = Poisson::new(rate * span).expect("positive mean").sample(rng) as u64;
        for _ in 0..n {
            let t = t_start + rng.random::<f64>() * span;
            let local = clock_b.tag(t, rng);
            let basis = Basis::random(rng);
            let bit = u8::from(rng.random::<bool>());
            detections.push(DownlinkDetection { local, basis, bit, source_pulse: None });
        }
    }
    detections.sort_by_key(|d| d.local);
    Ok(DownlinkRun { emissions: DownlinkEmissions { train, source }, detections })
}

pub fn simulate_uplink<R: Rng + ?Sized>(
    cfg: &UplinkConfig,
    eph: &PassEphemeris,
    clock_a: &ClockModel,
    clock_b: &ClockModel,
    window: (f64, f64),
    eve: &mut dyn InFlight,
    rng: &mut R,
) -> Result<UplinkRun, ChannelError> {
    cfg.validate()?;
    let (t_start, t_end) = window;
    let train = PulseTrain::covering(clock_b, t_start, t_end, cfg.period());
    let pulse = normal(cfg.pulse_width_rms);
    let det = normal(cfg.detection_jitter_rms);
    let mut emissions = Vec::with_capacity(train.count as usize);
    let mut detections = Vec::with_capacity(train.count as usize);
    for j in 0..train.count {
        let fire_true = clock_b.to_true(train.local(j).as_secs());
        let t_bs = clock_b.tag(fire_true, rng);
        emissions.push(Tagged { index: j, local: t_bs });
        let emit_true = fire_true + draw(&pulse, rng);
        let arrival_true = emit_true + eph.propagation_delay(emit_true, Direction::Up)?;
        let mut p = UplinkPulse { index: j, emit_true, arrival_true };
        eve.uplink(&mut p);
        let prob = cfg.detection_probability.eval(emit_true) * 10f64.powf(-cfg.loss_db.eval(emit_true) / 10.0);
        if rng.random::<f64>() < prob {
            let local = clock_a.tag(p.arrival_true + draw(&det, rng), rng);
            detections.push(UplinkArrival { local, source_pulse: j });
        }
    }
    detections.sort_by_key(|d| d.local);
    Ok(UplinkRun { emissions, detections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn eph() -> PassEphemeris {
        PassEphemeris::constant(600e3, -1.0, 20.0).unwrap()
    }

    fn quiet() -> DownlinkConfig {
        DownlinkConfig { background_rate: 0.0, ..DownlinkConfig::default() }
    }

    fn run_down(cfg: &DownlinkConfig, window: (f64, f64), seed: u64) -> DownlinkRun {
        let ideal = ClockModel::ideal();
        let src = QubitSource::new(seed, cfg.intensity_probabilities);
        simulate_downlink(cfg, &eph(), &ideal, &ideal, src, window, &mut Passive, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn fwhm_conversion() {
        assert!((fwhm_to_rms(200e-12) - 84.93e-12).abs() < 0.01e-12);
        assert!((DownlinkConfig::default().combined_jitter_rms() - 310e-12).abs() < 0.5e-12);
        assert!((UplinkConfig::default().combined_jitter_rms() - 358e-12).abs() < 0.5e-12);
    }

    #[test]
    fn qubit_source_random_access() {
        let s = QubitSource::new(9, [0.5, 0.25, 0.25]);
        let forward: Vec<_> = (0..1000).map(|k| s.record(k)).collect();
        let backward: Vec<_> = (0..1000).rev().map(|k| s.record(k)).collect();
        assert!(forward.iter().eq(backward.iter().rev()));
        let n = 200_000;
        let mut classes = [0usize; 3];
        let mut ones = 0;
        for k in 0..n {
            let r = s.record(k);
            classes[r.intensity.index()] += 1;
            ones += r.bit as usize;
        }
        assert!((classes[0] as f64 / n as f64 - 0.5).abs() < 0.01);
        assert!((classes[1] as f64 / n as f64 - 0.25).abs() < 0.01);
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn pulse_train_indices() {
        let t = PulseTrain { start: Timestamp::from_ps(1000), period: Duration::from_fs(5_000_000), count: 10 };
        assert_eq!(t.indices_between(Timestamp::from_ps(0), Timestamp::from_ps(1000)), 0..1);
        assert_eq!(t.indices_between(Timestamp::from_ps(1001), Timestamp::from_ps(11000)), 1..3);
        assert_eq!(t.indices_between(Timestamp::from_ps(100_000), Timestamp::from_ps(200_000)), 10..10);
        let c = PulseTrain::covering(&ClockModel::ideal(), 0.0, 1e-6, Duration::from_fs(5_000_000));
        assert_eq!(c.count, 201);
    }

    #[test]
    fn infinite_loss_no_detections() {
        let cfg = DownlinkConfig { loss_db: Profile::Constant(f64::INFINITY), ..quiet() };
        assert!(run_down(&cfg, (0.0, 0.1), 1).detections.is_empty());
    }

    #[test]
    fn empty_window_is_empty() {
        let run = run_down(&DownlinkConfig::default(), (1.0, 1.0), 1);
        assert!(run.detections.is_empty());
        assert_eq!(run.emissions.train.count, 0);
    }

    #[test]
    fn poisson_click_rate() {
        // 1 − exp(−0.8·1e−4) per pulse at 200 MHz ≈ 16.0 kHz.
        let cfg = DownlinkConfig {
            intensity_probabilities: [1.0, 0.0, 0.0],
            loss_db: Profile::Constant(40.0),
            ..quiet()
        };
        let run = run_down(&cfg, (0.0, 1.0), 3);
        let expected = -(-0.8e-4f64).exp_m1() * 2e8;
        let rate = run.detections.len() as f64;
        assert!((rate / expected - 1.0).abs() < 0.03, "{rate} vs {expected}");
    }

    #[test]
    fn noiseless_detection_matches_delay() {
        let cfg = DownlinkConfig {
            loss_db: Profile::Constant(0.0),
            pulse_width_rms: 0.0,
            detector_jitter_rms: 0.0,
            mean_photon_numbers: [5.0, 5.0, 5.0],
            ..quiet()
        };
        let run = run_down(&cfg, (0.0, 1e-5), 4);
        assert!(run.detections.len() > 1000);
        let e = eph();
        for d in &run.detections {
            let k = d.source_pulse.unwrap();
            let emit = run.emissions.train.local(k).as_secs();
            let expected = Timestamp::from_secs_ps(emit + e.propagation_delay(emit, Direction::Down).unwrap());
            assert_eq!(d.local, expected);
        }
    }

    #[test]
    fn downlink_jitter_composition() {
        let cfg = DownlinkConfig { loss_db: Profile::Constant(20.0), ..quiet() };
        let run = run_down(&cfg, (0.0, 0.15), 5);
        let e = eph();
        let res: Vec<f64> = run
            .detections
            .iter()
            .map(|d| {
                let emit = run.emissions.train.local(d.source_pulse.unwrap()).as_secs();
                d.local.as_secs() - emit - e.propagation_delay(emit, Direction::Down).unwrap()
            })
            .collect();
        assert!(res.len() > 100_000);
        let rms = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
        assert!((rms / cfg.combined_jitter_rms() - 1.0).abs() < 0.02, "{rms}");
    }

    #[test]
    fn background_clicks_are_uniform_and_unmatched() {
        let cfg = DownlinkConfig { loss_db: Profile::Constant(f64::INFINITY), background_rate: 1e4, ..quiet() };
        let run = run_down(&cfg, (0.0, 2.0), 6);
        assert!((run.detections.len() as f64 / 8e4 - 1.0).abs() < 0.02);
        assert!(run.detections.iter().all(|d| d.source_pulse.is_none()));
        let first_half = run.detections.iter().filter(|d| d.local.as_secs() < 1.0).count();
        assert!((first_half as f64 / run.detections.len() as f64 - 0.5).abs() < 0.01);
        assert!(run.detections.windows(2).all(|w| w[0].local <= w[1].local));
    }

    #[test]
    fn rate_budget_and_causality() {
        let run = run_down(&DownlinkConfig { loss_db: Profile::Constant(25.0), ..DownlinkConfig::default() }, (0.0, 0.1), 7);
        let budget = 2e8 * 0.1 + 200.0 * 0.1;
        assert!((run.detections.len() as f64) < budget);
        let min_delay = 600e3 / crate::geometry::C;
        for d in &run.detections {
            if let Some(k) = d.source_pulse {
                // Jitter can pull a tag before the nominal arrival; 10σ bound.
                assert!(d.local.as_secs() - run.emissions.train.local(k).as_secs() > min_delay - 3.1e-9);
            }
        }
    }

    fn run_up(cfg: &UplinkConfig, window: (f64, f64), seed: u64) -> UplinkRun {
        let ideal = ClockModel::ideal();
        simulate_uplink(cfg, &eph(), &ideal, &ideal, window, &mut Passive, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn uplink_noiseless_exact() {
        let cfg = UplinkConfig {
            pulse_width_rms: 0.0,
            detection_jitter_rms: 0.0,
            detection_probability: Profile::Constant(1.0),
            ..UplinkConfig::default()
        };
        let run = run_up(&cfg, (0.0, 0.1), 1);
        assert_eq!(run.detections.len(), run.emissions.len());
        let e = eph();
        for d in &run.detections {
            let emit = run.emissions[d.source_pulse as usize].local.as_secs();
            let expected = Timestamp::from_secs_ps(emit + e.propagation_delay(emit, Direction::Up).unwrap());
            assert_eq!(d.local, expected);
        }
    }

    #[test]
    fn uplink_rate_and_jitter() {
        let run = run_up(&UplinkConfig::default(), (0.0, 12.0), 2);
        let rate = run.detections.len() as f64 / 12.0;
        assert!((rate / 9300.0 - 1.0).abs() < 0.02, "{rate}");
        let e = eph();
        let res: Vec<f64> = run
            .detections
            .iter()
            .map(|d| {
                let emit = run.emissions[d.source_pulse as usize].local.as_secs();
                d.local.as_secs() - emit - e.propagation_delay(emit, Direction::Up).unwrap()
            })
            .collect();
        assert!(res.len() > 100_000);
        let rms = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
        assert!((rms / 358e-12 - 1.0).abs() < 0.05, "{rms}");
    }

    #[test]
    fn rejects_bad_config() {
        let bad = DownlinkConfig { intensity_probabilities: [0.5, 0.5, 0.5], ..DownlinkConfig::default() };
        assert!(bad.validate().is_err());
        let bad = UplinkConfig { detection_probability: Profile::Constant(1.5), ..UplinkConfig::default() };
        assert!(bad.validate().is_err());
        let bad = DownlinkConfig { rep_rate: 3e8, ..DownlinkConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn deterministic() {
        let a = run_down(&DownlinkConfig::default(), (0.0, 0.01), 8).detections;
        let b = run_down(&DownlinkConfig::default(), (0.0, 0.01), 8).detections;
        assert_eq!(a, b);
    }
}
