//! Pass geometry: sampled satellite range, light-time delays and the
//! orbit-prediction model that supplies the prior-known range.
//!
//! The ground station is stationary. `R(t)` is the distance between the
//! satellite at true time `t` and the station, so a downlink photon emitted at
//! `t` travels `R(t)` while an uplink pulse emitted at `t` is caught by the
//! satellite at `t + d` after travelling `R(t + d)`.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Speed of light in vacuum, m/s.
pub const C: f64 = 299_792_458.0;

const EARTH_RADIUS_M: f64 = 6_371_000.0;
const EARTH_GM: f64 = 3.986_004_418e14;

const LIGHT_TIME_TOL_S: f64 = 1e-15;
const LIGHT_TIME_MAX_ITER: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("time {t} s is outside the ephemeris span [{start}, {end}] s")]
    OutOfSpan { t: f64, start: f64, end: f64 },
    #[error("ephemeris needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("ephemeris sample {index}: {reason}")]
    BadSample { index: usize, reason: String },
    #[error("light-time iteration did not converge at t = {0} s")]
    NoConvergence(f64),
    #[error("invalid predictor: {0}")]
    Predictor(String),
    #[error("ephemeris csv: {0}")]
    Csv(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EphemerisSample {
    pub t: f64,
    pub range: f64,
    pub radial_velocity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Satellite to ground.
    Down,
    /// Ground to satellite.
    Up,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PassEphemeris {
    samples: Vec<EphemerisSample>,
    /// Excess delay of the atmosphere over vacuum, seconds, added to each
    /// direction.
    pub atmosphere_excess_delay: f64,
}

impl PassEphemeris {
    pub fn new(samples: Vec<EphemerisSample>) -> Result<Self, GeometryError> {
        if samples.len() < 2 {
            return Err(GeometryError::TooFewSamples(samples.len()));
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.range.is_finite() && s.radial_velocity.is_finite()) {
                return Err(GeometryError::BadSample { index: i, reason: "non-finite field".into() });
            }
            if s.range <= 0.0 {
                return Err(GeometryError::BadSample { index: i, reason: format!("range {} m is not positive", s.range) });
            }
            if i > 0 {
                let p = &samples[i - 1];
                if s.t <= p.t {
                    return Err(GeometryError::BadSample { index: i, reason: "time not strictly increasing".into() });
                }
                let slope = (s.range - p.range) / (s.t - p.t);
                let lo = p.radial_velocity.min(s.radial_velocity) - 1.0;
                let hi = p.radial_velocity.max(s.radial_velocity) + 1.0;
                if slope < lo || slope > hi {
                    return Err(GeometryError::BadSample {
                        index: i,
                        reason: format!("range slope {slope:.3} m/s disagrees with stored radial velocity"),
                    });
                }
            }
        }
        Ok(PassEphemeris { samples, atmosphere_excess_delay: 0.0 })
    }

    pub fn with_atmosphere(mut self, excess_delay: f64) -> Self {
        self.atmosphere_excess_delay = excess_delay;
        self
    }

    /// Constant range over `[start, end]`.
    pub fn constant(range: f64, start: f64, end: f64) -> Result<Self, GeometryError> {
        Self::new(vec![
            EphemerisSample { t: start, range, radial_velocity: 0.0 },
            EphemerisSample { t: end, range, radial_velocity: 0.0 },
        ])
    }

    /// `R(t) = r0 + ν·(t − t0) + a·(t − t0)²/2`, tabulated every `step` seconds.
    pub fn quadratic(r0: f64, nu: f64, accel: f64, t0: f64, start: f64, end: f64, step: f64) -> Result<Self, GeometryError> {
        Self::tabulate(start, end, step, |t| {
            let dt = t - t0;
            (r0 + nu * dt + 0.5 * accel * dt * dt, nu + accel * dt)
        })
    }

    /// A circular-orbit pass over a ground station (no Earth rotation).
    ///
    /// `min_elevation_offset` is the angular separation, at Earth's centre,
    /// between the ground track and the station at closest approach.
    pub fn overhead_pass(
        altitude: f64,
        min_elevation_offset: f64,
        closest_approach_t: f64,
        start: f64,
        end: f64,
        step: f64,
    ) -> Result<Self, GeometryError> {
        let circular = CircularPass::new(altitude, min_elevation_offset, closest_approach_t);
        Self::tabulate(start, end, step, |t| (circular.range(t), circular.range_rate(t)))
    }

    fn tabulate(start: f64, end: f64, step: f64, f: impl Fn(f64) -> (f64, f64)) -> Result<Self, GeometryError> {
        if !(step > 0.0) || !(end > start) {
            return Err(GeometryError::TooFewSamples(0));
        }
        let n = ((end - start) / step).ceil() as usize;
        let samples = (0..=n)
            .map(|i| {
                let t = if i == n { end } else { start + i as f64 * step };
                let (range, radial_velocity) = f(t);
                EphemerisSample { t, range, radial_velocity }
            })
            .collect();
        Self::new(samples)
    }

    pub fn samples(&self) -> &[EphemerisSample] {
        &self.samples
    }

    pub fn span(&self) -> (f64, f64) {
        (self.samples[0].t, self.samples[self.samples.len() - 1].t)
    }

    fn segment(&self, t: f64) -> Result<usize, GeometryError> {
        let (start, end) = self.span();
        if !(t >= start && t <= end) {
            return Err(GeometryError::OutOfSpan { t, start, end });
        }
        let i = self.samples.partition_point(|s| s.t <= t);
        Ok(i.clamp(1, self.samples.len() - 1) - 1)
    }

    /// Piecewise-linear range at true time `t`.
    pub fn range_at(&self, t: f64) -> Result<f64, GeometryError> {
        let i = self.segment(t)?;
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let w = (t - a.t) / (b.t - a.t);
        Ok(a.range + w * (b.range - a.range))
    }

    /// Radial velocity consistent with the interpolated range.
    pub fn radial_velocity_at(&self, t: f64) -> Result<f64, GeometryError> {
        let i = self.segment(t)?;
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        Ok((b.range - a.range) / (b.t - a.t))
    }

    /// One-way light time for a signal emitted at true time `emit`.
    ///
    /// Downlink: `d = R(emit)/c`. Uplink: the fixed point of
    /// `d = R(emit + d)/c`, iterated to 1 fs (equal to `R(emit)/(c − ν)` when
    /// the range is locally linear). The atmosphere term is added afterwards.
    pub fn propagation_delay(&self, emit: f64, direction: Direction) -> Result<f64, GeometryError> {
        let vacuum = match direction {
            Direction::Down => self.range_at(emit)? / C,
            Direction::Up => {
                let mut d = self.range_at(emit)? / C;
                let mut converged = false;
                for _ in 0..LIGHT_TIME_MAX_ITER {
                    let next = self.range_at(emit + d)? / C;
                    let step = (next - d).abs();
                    d = next;
                    if step < LIGHT_TIME_TOL_S {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return Err(GeometryError::NoConvergence(emit));
                }
                d
            }
        };
        Ok(vacuum + self.atmosphere_excess_delay)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, GeometryError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(|e| GeometryError::Csv(e.to_string()))?.clone();
        let expected = ["t_s", "range_m", "radial_velocity_mps"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(GeometryError::Csv(format!("expected header {}", expected.join(","))));
        }
        let mut samples = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| GeometryError::Csv(e.to_string()))?;
            let field = |i: usize| -> Result<f64, GeometryError> {
                rec.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| GeometryError::Csv(format!("row {}: bad field {}", line + 2, expected[i])))
            };
            samples.push(EphemerisSample { t: field(0)?, range: field(1)?, radial_velocity: field(2)? });
        }
        Self::new(samples)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_s,range_m,radial_velocity_mps")?;
        for s in &self.samples {
            writeln!(w, "{},{},{}", s.t, s.range, s.radial_velocity)?;
        }
        Ok(())
    }
}

/// Closed-form circular-orbit pass used to tabulate ephemerides.
#[derive(Clone, Copy, Debug)]
pub struct CircularPass {
    orbit_radius: f64,
    angular_rate: f64,
    cos_offset: f64,
    closest_t: f64,
}

impl CircularPass {
    pub fn new(altitude: f64, offset_angle: f64, closest_t: f64) -> Self {
        let orbit_radius = EARTH_RADIUS_M + altitude;
        CircularPass {
            orbit_radius,
            angular_rate: (EARTH_GM / orbit_radius.powi(3)).sqrt(),
            cos_offset: offset_angle.cos(),
            closest_t,
        }
    }

    fn cos_separation(&self, t: f64) -> f64 {
        self.cos_offset * (self.angular_rate * (t - self.closest_t)).cos()
    }

    pub fn range(&self, t: f64) -> f64 {
        let (re, rs) = (EARTH_RADIUS_M, self.orbit_radius);
        (re * re + rs * rs - 2.0 * re * rs * self.cos_separation(t)).sqrt()
    }

    pub fn range_rate(&self, t: f64) -> f64 {
        let (re, rs) = (EARTH_RADIUS_M, self.orbit_radius);
        let w = self.angular_rate;
        re * rs * self.cos_offset * w * (w * (t - self.closest_t)).sin() / self.range(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangePredictor {
    /// Constant prediction error, metres.
    pub bias: f64,
    /// Per-query Gaussian error, metres.
    pub noise_rms: f64,
}

impl Default for RangePredictor {
    fn default() -> Self {
        RangePredictor { bias: 0.0, noise_rms: 0.0 }
    }
}

impl RangePredictor {
    pub fn new(bias: f64, noise_rms: f64) -> Result<Self, GeometryError> {
        if !(noise_rms >= 0.0) || !bias.is_finite() || !noise_rms.is_finite() {
            return Err(GeometryError::Predictor(format!("bias {bias}, noise_rms {noise_rms}")));
        }
        Ok(RangePredictor { bias, noise_rms })
    }

    /// Prior-known range `R_p` at true time `t`.
    pub fn predicted_range<R: Rng + ?Sized>(&self, eph: &PassEphemeris, t: f64, rng: &mut R) -> Result<f64, GeometryError> {
        let truth = eph.range_at(t)?;
        let noise = if self.noise_rms > 0.0 {
            Normal::new(0.0, self.noise_rms).expect("validated noise").sample(rng)
        } else {
            0.0
        };
        Ok(truth + self.bias + noise)
    }
}
