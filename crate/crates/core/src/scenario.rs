//! Scenario files: one TOML document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::AttackScenario;
use crate::channel::{DownlinkConfig, UplinkConfig};
use crate::geometry::{PassEphemeris, RangePredictor};
use crate::pairing::SyncConfig;
use crate::security::SecurityPolicy;
use crate::timebase::ClockModel;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Pass geometry source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EphemerisSpec {
    /// CSV with header `t_s,range_m,radial_velocity_mps`, relative to the
    /// scenario file.
    File { path: PathBuf },
    Constant { range: f64 },
    /// `R(t) = r0 + nu·(t − t0) + accel·(t − t0)²/2`.
    Quadratic {
        r0: f64,
        nu: f64,
        #[serde(default)]
        accel: f64,
        #[serde(default)]
        t0: f64,
        #[serde(default = "default_step")]
        step: f64,
    },
    OverheadPass {
        altitude: f64,
        offset_angle: f64,
        closest_t: f64,
        #[serde(default = "default_step")]
        step: f64,
    },
}

fn default_step() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Fit window length, seconds (A-local, from the pass start).
    pub fit_window: f64,
    /// Raw points per normal point.
    pub normal_point: usize,
    /// QBER block length, seconds (B-local).
    pub qber_block: f64,
    /// Largest separation of paired downlink and uplink emissions, seconds.
    pub pairing_window: f64,
    /// Floor on the one-way gate jitter scale, seconds.
    pub min_gate_sigma: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { fit_window: 1.0, normal_point: 300, qber_block: 1.0, pairing_window: 50e-6, min_gate_sigma: 10e-12 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyConfig {
    /// Bits of key material from earlier passes, in addition to the live pass.
    pub preseed_bits: u64,
    /// Skip the live-pass deposit.
    pub preseed_only: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    /// Pass length, seconds.
    pub duration: f64,
    /// True time at the start of the pass, seconds.
    #[serde(default)]
    pub start: f64,
    pub ephemeris: EphemerisSpec,
    /// Atmospheric excess delay added to each direction, seconds.
    #[serde(default)]
    pub atmosphere_delay: f64,
    #[serde(default)]
    pub clock_a: ClockModel,
    #[serde(default)]
    pub clock_b: ClockModel,
    #[serde(default)]
    pub downlink: DownlinkConfig,
    #[serde(default)]
    pub uplink: UplinkConfig,
    #[serde(default)]
    pub attack: AttackScenario,
    #[serde(default)]
    pub policy: SecurityPolicy,
    #[serde(default)]
    pub predictor: RangePredictor,
    #[serde(default)]
    pub sync: SyncConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub keys: KeyConfig,
}

impl Scenario {
    /// Minimal scenario with every optional table at its default.
    pub fn new(seed: u64, duration: f64, ephemeris: EphemerisSpec) -> Self {
        Scenario {
            seed,
            duration,
            start: 0.0,
            ephemeris,
            atmosphere_delay: 0.0,
            clock_a: ClockModel::ideal(),
            clock_b: ClockModel::ideal(),
            downlink: DownlinkConfig::default(),
            uplink: UplinkConfig::default(),
            attack: AttackScenario::none(),
            policy: SecurityPolicy::default(),
            predictor: RangePredictor::default(),
            sync: SyncConfig::default(),
            analysis: AnalysisConfig::default(),
            keys: KeyConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Ok(s)
    }

    /// Reads and validates a scenario; a relative ephemeris path is resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
        let mut s = Self::from_toml(&text).map_err(|e| match e {
            ScenarioError::Parse(m) => ScenarioError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let EphemerisSpec::File { path: p } = &mut s.ephemeris {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn window(&self) -> (f64, f64) {
        (self.start, self.start + self.duration)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !self.start.is_finite() {
            return bad("start is not finite".into());
        }
        if !(self.atmosphere_delay >= 0.0) {
            return bad("atmosphere_delay must be non-negative".into());
        }
        self.clock_a.validate().map_err(|e| ScenarioError::Invalid(format!("clock_a: {e}")))?;
        self.clock_b.validate().map_err(|e| ScenarioError::Invalid(format!("clock_b: {e}")))?;
        self.downlink.validate().map_err(|e| ScenarioError::Invalid(format!("downlink: {e}")))?;
        self.uplink.validate().map_err(|e| ScenarioError::Invalid(format!("uplink: {e}")))?;
        self.attack.validate().map_err(|e| ScenarioError::Invalid(format!("attack: {e}")))?;
        self.policy.validate().map_err(|e| ScenarioError::Invalid(format!("policy: {e}")))?;
        RangePredictor::new(self.predictor.bias, self.predictor.noise_rms)
            .map_err(|e| ScenarioError::Invalid(format!("predictor: {e}")))?;
        let a = &self.analysis;
        if !(a.fit_window > 0.0 && a.qber_block > 0.0 && a.pairing_window > 0.0 && a.min_gate_sigma >= 0.0) || a.normal_point == 0 {
            return bad("analysis: window lengths and normal_point must be positive".into());
        }
        if !(self.sync.offset_bound >= 0.0 && self.sync.gate_sigmas > 0.0 && self.sync.block > 0.0) {
            return bad("sync: offset_bound, gate_sigmas and block must be positive".into());
        }
        if let EphemerisSpec::File { path } = &self.ephemeris {
            if !path.is_file() {
                return bad(format!("ephemeris file {} does not exist", path.display()));
            }
        }
        Ok(())
    }

    /// Ephemeris covering the pass with margin for light time.
    pub fn build_ephemeris(&self) -> Result<PassEphemeris, ScenarioError> {
        let (t0, t1) = self.window();
        let (lo, hi) = (t0 - 1.0, t1 + 1.0);
        let eph = match &self.ephemeris {
            EphemerisSpec::File { path } => {
                let f = std::fs::File::open(path).map_err(|source| ScenarioError::Io { path: path.clone(), source })?;
                PassEphemeris::read_csv(f)
            }
            EphemerisSpec::Constant { range } => PassEphemeris::constant(*range, lo, hi),
            EphemerisSpec::Quadratic { r0, nu, accel, t0, step } => PassEphemeris::quadratic(*r0, *nu, *accel, *t0, lo, hi, *step),
            EphemerisSpec::OverheadPass { altitude, offset_angle, closest_t, step } => {
                PassEphemeris::overhead_pass(*altitude, *offset_angle, *closest_t, lo, hi, *step)
            }
        }
        .map_err(|e| ScenarioError::Invalid(format!("ephemeris: {e}")))?;
        let (s, e) = eph.span();
        if s > t0 || e < t1 {
            return Err(ScenarioError::Invalid(format!("ephemeris span [{s}, {e}] does not cover the pass [{t0}, {t1}]")));
        }
        Ok(eph.with_atmosphere(self.atmosphere_delay))
    }
}

const FIELD_DOCS: &[(&str, &str)] = &[
    ("seed", "required; master seed for every random stream"),
    ("duration", "required; pass length, s"),
    ("start", "true time at the pass start, s"),
    ("ephemeris.kind", "required; file | constant | quadratic | overhead-pass"),
    ("ephemeris.path", "file: CSV t_s,range_m,radial_velocity_mps, relative to the scenario"),
    ("ephemeris.range", "constant: range, m"),
    ("ephemeris.r0 / nu / accel / t0", "quadratic: range, m; rate, m/s; acceleration, m/s^2; reference time, s"),
    ("ephemeris.altitude / offset_angle / closest_t", "overhead-pass: circular orbit altitude, m; ground-track offset, rad; closest approach, s"),
    ("ephemeris.step", "tabulation step, s (default 0.1)"),
    ("atmosphere_delay", "excess one-way delay, s"),
    ("clock_a / clock_b", "offset_tau (s), rate_kappa, freq_drift (1/s), timestamp_jitter_rms (s); t_true = tau + kappa*(t + drift*t^2/2)"),
    ("downlink.rep_rate", "pulse rate, Hz"),
    ("downlink.pulse_width_rms", "source pulse RMS, s"),
    ("downlink.mean_photon_numbers", "[signal, decoy, vacuum]"),
    ("downlink.intensity_probabilities", "[signal, decoy, vacuum], sum 1"),
    ("downlink.loss_db", "channel loss, dB: constant or [[t, dB], ...]"),
    ("downlink.detector_jitter_rms", "detector plus tagger RMS, s"),
    ("downlink.background_rate", "dark/background counts per detector, Hz"),
    ("downlink.detectors", "detector count"),
    ("downlink.polarization_error", "intrinsic flip probability"),
    ("uplink.rep_rate", "laser rate, Hz"),
    ("uplink.pulse_width_rms", "laser pulse RMS, s"),
    ("uplink.detection_jitter_rms", "detector plus tagger RMS, s"),
    ("uplink.loss_db", "extra loss, dB: constant or table"),
    ("uplink.detection_probability", "per-pulse detection probability: constant or table"),
    ("attack.intercept_resend_fraction", "fraction of downlink photons intercepted and resent"),
    ("attack.delay_down / delay_up", "added delay, s: constant or [[t, s], ...]"),
    ("attack.tamper_frames", "corrupt encrypted frames in transit"),
    ("attack.tamper_mode", "bit-flip | replay"),
    ("attack.resend_timing", "{ policy = \"pass-through\" } or { policy = \"fixed-shift\", seconds = s }"),
    ("policy.alert_limit", "alert limit L on |R - R_p|, m"),
    ("policy.qber_threshold", "block discard threshold"),
    ("policy.residual_k", "per-link residual clip in RMS units"),
    ("predictor.bias / noise_rms", "range prediction bias and per-window noise, m"),
    ("sync.offset_bound", "bound on the initial clock offset, s"),
    ("sync.gate_sigmas", "coincidence gate half-width in jitter RMS units"),
    ("sync.ambiguity_periods", "whole downlink periods searched either side"),
    ("sync.ambiguity_sample", "detections sampled per ambiguity hypothesis"),
    ("sync.block", "block length for offset tracking, s"),
    ("analysis.fit_window", "estimator window, s"),
    ("analysis.normal_point", "raw points per normal point"),
    ("analysis.qber_block", "QBER block length, s"),
    ("analysis.pairing_window", "largest downlink/uplink emission separation in a two-way event, s"),
    ("analysis.min_gate_sigma", "floor on the gate jitter scale, s"),
    ("keys.preseed_bits", "key bits carried over from earlier passes"),
    ("keys.preseed_only", "do not deposit key from this pass"),
];

/// Field reference followed by a complete scenario at its defaults.
pub fn schema() -> String {
    let mut out = String::from("# Scenario reference\n#\n");
    let w = FIELD_DOCS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, d) in FIELD_DOCS {
        out.push_str(&format!("# {k:<w$}  {d}\n"));
    }
    out.push_str("#\n# Defaults:\n\n");
    let example = Scenario::new(1, 10.0, EphemerisSpec::Quadratic { r0: 8e5, nu: -3e3, accel: 0.0, t0: 0.0, step: default_step() });
    out.push_str(&example.to_toml());
    out
}
