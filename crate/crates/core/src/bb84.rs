//! BB84 polarisation encoding, sifting, per-block QBER filtering and
//! decoy-state key accounting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::DownlinkDetection;
use crate::pairing::MatchedPair;
use crate::time::Timestamp;

/// Default secure QBER threshold for a block.
pub const QBER_THRESHOLD: f64 = 0.0125;

/// Error-correction inefficiency used in key accounting.
pub const EC_EFFICIENCY: f64 = 1.16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Rectilinear,
    Diagonal,
}

impl Basis {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.random::<bool>() { Basis::Diagonal } else { Basis::Rectilinear }
    }

    pub fn code(self) -> &'static str {
        match self {
            Basis::Rectilinear => "Z",
            Basis::Diagonal => "X",
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        match s {
            "Z" => Some(Basis::Rectilinear),
            "X" => Some(Basis::Diagonal),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityClass {
    Signal,
    Decoy,
    Vacuum,
}

impl IntensityClass {
    pub const ALL: [IntensityClass; 3] = [IntensityClass::Signal, IntensityClass::Decoy, IntensityClass::Vacuum];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            IntensityClass::Signal => "S",
            IntensityClass::Decoy => "D",
            IntensityClass::Vacuum => "V",
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        match s {
            "S" => Some(IntensityClass::Signal),
            "D" => Some(IntensityClass::Decoy),
            "V" => Some(IntensityClass::Vacuum),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarization {
    H,
    V,
    D,
    A,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QubitRecord {
    pub basis: Basis,
    pub bit: u8,
    pub intensity: IntensityClass,
}

impl QubitRecord {
    pub fn polarization(&self) -> Polarization {
        match (self.basis, self.bit) {
            (Basis::Rectilinear, 0) => Polarization::H,
            (Basis::Rectilinear, _) => Polarization::V,
            (Basis::Diagonal, 0) => Polarization::D,
            (Basis::Diagonal, _) => Polarization::A,
        }
    }
}

/// Prepares a BB84 state. The randomness lives in the caller's choice of
/// inputs.
pub fn encode(bit: u8, basis: Basis, intensity: IntensityClass) -> QubitRecord {
    QubitRecord { basis, bit: bit & 1, intensity }
}

/// Measures `state` in `basis`. A matched basis returns the prepared bit,
/// flipped with probability `intrinsic_error`; a conjugate basis gives a
/// uniform outcome.
pub fn measure<R: Rng + ?Sized>(state: &QubitRecord, basis: Basis, intrinsic_error: f64, rng: &mut R) -> u8 {
    debug_assert!((0.0..=0.5).contains(&intrinsic_error));
    if state.basis == basis {
        let flip = intrinsic_error > 0.0 && rng.random::<f64>() < intrinsic_error;
        state.bit ^ u8::from(flip)
    } else {
        u8::from(rng.random::<bool>())
    }
}

/// Access to Alice's prepared states by pulse index.
pub trait QubitLookup {
    fn qubit(&self, pulse_index: u64) -> Option<QubitRecord>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiftedBit {
    /// Index into the detection stream.
    pub detection: usize,
    pub detection_local: Timestamp,
    pub pulse_index: u64,
    pub intensity: IntensityClass,
    pub alice_bit: u8,
    pub bob_bit: u8,
}

impl SiftedBit {
    pub fn is_error(&self) -> bool {
        self.alice_bit != self.bob_bit
    }
}

/// Keeps matched-basis pairs, in input order. Detections without a matched
/// emission never appear in `pairs` and so never reach the sifted key.
pub fn sift<Q: QubitLookup + ?Sized>(pairs: &[MatchedPair], detections: &[DownlinkDetection], qubits: &Q) -> Vec<SiftedBit> {
    pairs
        .iter()
        .filter_map(|p| {
            let alice = qubits.qubit(p.emission_index)?;
            let bob = &detections[p.detection];
            (alice.basis == bob.basis).then_some(SiftedBit {
                detection: p.detection,
                detection_local: p.detection_local,
                pulse_index: p.emission_index,
                intensity: alice.intensity,
                alice_bit: alice.bit,
                bob_bit: bob.bit,
            })
        })
        .collect()
}

/// Fixed partition of a local time axis into equal blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockGrid {
    pub origin: Timestamp,
    pub duration: f64,
    pub count: usize,
}

impl BlockGrid {
    pub fn index_of(&self, t: Timestamp) -> Option<usize> {
        let x = t.secs_since(self.origin) / self.duration;
        if x < 0.0 {
            return None;
        }
        let i = x.floor() as usize;
        (i < self.count).then_some(i)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QberBlock {
    pub block_index: usize,
    pub duration: f64,
    pub sifted_count: u64,
    pub error_count: u64,
    /// `None` for an empty block.
    pub qber: Option<f64>,
    pub kept: bool,
    /// `1 − 4Q` for kept blocks.
    pub confidence: Option<f64>,
}

impl QberBlock {
    /// True when the block had data and failed the threshold.
    pub fn failed(&self) -> bool {
        self.qber.is_some() && !self.kept
    }
}

/// Per-block QBER over the non-vacuum sifted bits; blocks are kept when
/// `Q ≤ threshold`. Empty blocks are dropped with an undefined QBER.
pub fn filter_blocks(sifted: &[SiftedBit], grid: BlockGrid, threshold: f64) -> Vec<QberBlock> {
    let mut counts = vec![(0u64, 0u64); grid.count];
    for s in sifted.iter().filter(|s| s.intensity != IntensityClass::Vacuum) {
        if let Some(i) = grid.index_of(s.detection_local) {
            counts[i].0 += 1;
            counts[i].1 += u64::from(s.is_error());
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(block_index, (n, e))| {
            let qber = (n > 0).then(|| e as f64 / n as f64);
            let kept = qber.is_some_and(|q| q <= threshold);
            QberBlock {
                block_index,
                duration: grid.duration,
                sifted_count: n,
                error_count: e,
                qber,
                kept,
                confidence: if kept { qber.map(|q| 1.0 - 4.0 * q) } else { None },
            }
        })
        .collect()
}

/// Counts for one intensity class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntensityStats {
    /// Pulses sent in this class.
    pub emitted: f64,
    /// Detections matched to pulses of this class.
    pub detected: u64,
    pub sifted: u64,
    pub errors: u64,
}

impl IntensityStats {
    pub fn gain(&self) -> f64 {
        if self.emitted > 0.0 { self.detected as f64 / self.emitted } else { 0.0 }
    }

    pub fn error_rate(&self) -> f64 {
        if self.sifted > 0 { self.errors as f64 / self.sifted as f64 } else { 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecoyStatistics {
    pub mu_signal: f64,
    pub mu_decoy: f64,
    pub signal: IntensityStats,
    pub decoy: IntensityStats,
    pub vacuum: IntensityStats,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatisticsError {
    #[error("decoy intensity {decoy} must be below signal intensity {signal}")]
    Intensities { signal: f64, decoy: f64 },
    #[error("no pulses recorded for the {0:?} class")]
    NoPulses(IntensityClass),
    #[error("decoy gain {decoy:.3e} exceeds signal gain {signal:.3e}")]
    GainOrder { signal: f64, decoy: f64 },
}

pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Single-photon bounds from the vacuum + weak-decoy method.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinglePhotonBounds {
    pub yield_lower: f64,
    pub gain_lower: f64,
    pub error_upper: f64,
}

pub fn single_photon_bounds(stats: &DecoyStatistics) -> Result<SinglePhotonBounds, StatisticsError> {
    let (mu, nu) = (stats.mu_signal, stats.mu_decoy);
    if !(nu > 0.0 && nu < mu) {
        return Err(StatisticsError::Intensities { signal: mu, decoy: nu });
    }
    for (class, s) in [
        (IntensityClass::Signal, &stats.signal),
        (IntensityClass::Decoy, &stats.decoy),
        (IntensityClass::Vacuum, &stats.vacuum),
    ] {
        if !(s.emitted > 0.0) {
            return Err(StatisticsError::NoPulses(class));
        }
    }
    let (q_mu, q_nu, y0) = (stats.signal.gain(), stats.decoy.gain(), stats.vacuum.gain());
    // A weaker pulse cannot click more often, up to a few standard errors.
    let slack = 5.0 * (q_nu / stats.decoy.emitted).sqrt();
    if q_nu > q_mu + slack {
        return Err(StatisticsError::GainOrder { signal: q_mu, decoy: q_nu });
    }
    let e_nu = stats.decoy.error_rate();
    let y1 = mu / (mu * nu - nu * nu)
        * (q_nu * nu.exp() - q_mu * mu.exp() * nu * nu / (mu * mu) - (mu * mu - nu * nu) / (mu * mu) * y0);
    let y1 = y1.max(0.0);
    let e1 = if y1 > 0.0 { ((e_nu * q_nu * nu.exp() - 0.5 * y0) / (y1 * nu)).clamp(0.0, 0.5) } else { 0.5 };
    Ok(SinglePhotonBounds { yield_lower: y1, gain_lower: y1 * mu * (-mu).exp(), error_upper: e1 })
}

/// Asymptotic secret key length, in bits, distilled from the signal-class
/// sifted key. Never negative.
pub fn secret_key_length(stats: &DecoyStatistics) -> Result<u64, StatisticsError> {
    let b = single_photon_bounds(stats)?;
    let q_mu = stats.signal.gain();
    if q_mu <= 0.0 || stats.signal.sifted == 0 {
        return Ok(0);
    }
    let e_mu = stats.signal.error_rate();
    let per_sifted = -EC_EFFICIENCY * binary_entropy(e_mu) + b.gain_lower / q_mu * (1.0 - binary_entropy(b.error_upper));
    let bits = stats.signal.sifted as f64 * per_sifted;
    Ok(if bits > 0.0 { bits.floor() as u64 } else { 0 })
}

/// Tallies decoy statistics over matched pairs and sifted bits inside kept
/// blocks. `emitted` gives pulses sent per class over the same span.
pub fn tally_statistics<Q: QubitLookup + ?Sized>(
    pairs: &[MatchedPair],
    sifted: &[SiftedBit],
    qubits: &Q,
    in_kept_block: impl Fn(Timestamp) -> bool,
    emitted: [f64; 3],
    mu_signal: f64,
    mu_decoy: f64,
) -> DecoyStatistics {
    let mut per = [IntensityStats::default(); 3];
    for (i, e) in emitted.iter().enumerate() {
        per[i].emitted = *e;
    }
    for p in pairs.iter().filter(|p| in_kept_block(p.detection_local)) {
        if let Some(q) = qubits.qubit(p.emission_index) {
            per[q.intensity.index()].detected += 1;
        }
    }
    for s in sifted.iter().filter(|s| in_kept_block(s.detection_local)) {
        let c = &mut per[s.intensity.index()];
        c.sifted += 1;
        c.errors += u64::from(s.is_error());
    }
    DecoyStatistics { mu_signal, mu_decoy, signal: per[0], decoy: per[1], vacuum: per[2] }
}
