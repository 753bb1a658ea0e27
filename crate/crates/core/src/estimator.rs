//! Clock offset and range from two-way events: point-wise values and a
//! windowed least-squares solve for `(R₀, ν, τ, κ)`.
//!
//! Convention: `t_A = κ·t_B + τ`. The point-wise offset `τ_BA` is the
//! reverse quantity, so for a symmetric path `τ_BA = −τ`.

use nalgebra::{DMatrix, DVector, Matrix4};
use serde::Serialize;

use crate::geometry::C;
use crate::pairing::TwoWayEvent;
use crate::time::{Duration, Timestamp};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error("need at least 4 events, got {0}")]
    TooFewEvents(usize),
    #[error("{0} is not identifiable from this data ({1})")]
    RankDeficient(&'static str, String),
}

const UNKNOWNS: [&str; 4] = ["R0", "nu", "tau", "kappa"];

/// Point-wise offset `τ_BA` (seconds) and range (metres) of one event.
pub fn offset_and_range_point(ev: &TwoWayEvent) -> (f64, f64) {
    let down = (ev.t_br - ev.t_as).as_as();
    let up = (ev.t_ar - ev.t_bs).as_as();
    let tau_ba = ((ev.t_br - ev.t_ar).as_as() + (ev.t_bs - ev.t_as).as_as()) as f64 * 0.5e-18;
    (tau_ba, C * (up + down) as f64 * 0.5e-18)
}

/// Epoch of a point-wise value: midway between A's emission and reception.
pub fn event_epoch(ev: &TwoWayEvent) -> Timestamp {
    ev.t_as + Duration::from_as((ev.t_ar - ev.t_as).as_as() / 2)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Solution {
    pub r0: f64,
    pub nu: f64,
    /// Offset at local time zero.
    pub tau: f64,
    pub kappa: f64,
    /// Reference epoch, A-local.
    pub t_a0: Timestamp,
    pub rms_down: f64,
    pub rms_up: f64,
    pub n_down: usize,
    pub n_up: usize,
    pub n_events: usize,
    /// Covariance of `(R₀ [m], ν [m/s], τ(t_a0) [s], κ − 1)`.
    pub covariance: [[f64; 4]; 4],
}

impl Solution {
    /// Offset `τ + (κ − 1)·t_a0`, i.e. `t_A − κ·(t_B − t_a0) − t_a0` at the epoch.
    pub fn tau_at_epoch(&self) -> f64 {
        self.tau + (self.kappa - 1.0) * self.t_a0.as_secs()
    }

    /// Offset of B relative to A at the epoch, with the point-wise sign.
    pub fn offset_ba(&self) -> f64 {
        -self.tau_at_epoch()
    }

    /// Pooled one-way residual RMS, seconds.
    pub fn rms_pooled(&self) -> f64 {
        let n = (self.n_down + self.n_up) as f64;
        ((self.rms_down.powi(2) * self.n_down as f64 + self.rms_up.powi(2) * self.n_up as f64) / n).sqrt()
    }

    pub fn range_at(&self, t_a: Timestamp) -> f64 {
        self.r0 + self.nu * t_a.secs_since(self.t_a0)
    }

    // Both predictions are formed as small differences from the given stamp
    // so that f64 rounding stays far below an attosecond.
    pub fn predict_t_br(&self, t_as: Timestamp) -> Timestamp {
        // κ·b + τ' = a + R(a)/c with a, b measured from the epoch.
        let a = t_as.secs_since(self.t_a0);
        let eps = self.kappa - 1.0;
        let db = (self.range_at(t_as) / C - self.tau_at_epoch() - eps * a) / self.kappa;
        t_as + Duration::from_secs(db)
    }

    pub fn predict_t_ar(&self, t_bs: Timestamp) -> Timestamp {
        // r = κ·s + τ' + (R₀ + ν·r)/c
        let s = t_bs.secs_since(self.t_a0);
        let beta = self.nu / C;
        let dr = ((self.kappa - 1.0 + beta) * s + self.tau_at_epoch() + self.r0 / C) / (1.0 - beta);
        t_bs + Duration::from_secs(dr)
    }

    /// Observed minus model-predicted point-wise offset and range.
    pub fn point_residual(&self, ev: &TwoWayEvent) -> (f64, f64) {
        let d_br = ev.t_br.secs_since(self.predict_t_br(ev.t_as));
        let d_ar = ev.t_ar.secs_since(self.predict_t_ar(ev.t_bs));
        ((d_br - d_ar) / 2.0, C * (d_br + d_ar) / 2.0)
    }

    /// One-way residuals `(down, up)` in seconds.
    pub fn link_residuals(&self, ev: &TwoWayEvent) -> (f64, f64) {
        (ev.t_br.secs_since(self.predict_t_br(ev.t_as)), ev.t_ar.secs_since(self.predict_t_ar(ev.t_bs)))
    }
}

/// Least-squares solve over the given events with the epoch at the middle
/// of `window` (A-local).
pub fn solve_window(events: &[TwoWayEvent], window: (Timestamp, Timestamp)) -> Result<Solution, EstimatorError> {
    let t0 = window.0 + Duration::from_as((window.1 - window.0).as_as() / 2);
    solve_about(events, t0)
}

/// As [`solve_window`], with an explicit reference epoch.
pub fn solve_about(events: &[TwoWayEvent], t0: Timestamp) -> Result<Solution, EstimatorError> {
    let n = events.len();
    if n < 4 {
        return Err(EstimatorError::TooFewEvents(n));
    }
    solve_rows(&rows(events, t0), n, n, t0)
}

struct Row {
    coeffs: [f64; 4],
    rhs: f64,
    down: bool,
}

// Unknowns (R₀, ν, c·τ', c·(κ − 1)) with τ' = τ + (κ − 1)·t0:
//   down: R₀ + ν·Δt_as − cτ' − cε·Δt_br = c·(t_br − t_as)
//   up:   R₀ + ν·Δt_ar + cτ' + cε·Δt_bs = c·(t_ar − t_bs)
fn rows(events: &[TwoWayEvent], t0: Timestamp) -> Vec<Row> {
    let mut out = Vec::with_capacity(2 * events.len());
    for e in events {
        out.push(Row {
            coeffs: [1.0, e.t_as.secs_since(t0), -1.0, -e.t_br.secs_since(t0)],
            rhs: C * e.t_br.secs_since(e.t_as),
            down: true,
        });
        out.push(Row {
            coeffs: [1.0, e.t_ar.secs_since(t0), 1.0, e.t_bs.secs_since(t0)],
            rhs: C * e.t_ar.secs_since(e.t_bs),
            down: false,
        });
    }
    out
}

fn solve_rows(rows: &[Row], n_down: usize, n_up: usize, t0: Timestamp) -> Result<Solution, EstimatorError> {
    let m = rows.len();
    // Solving for R₀ about a nominal range keeps the right-hand side small.
    let r_ref = rows.iter().map(|r| r.rhs).sum::<f64>() / m as f64;
    let a = DMatrix::from_fn(m, 4, |i, j| rows[i].coeffs[j]);
    let b = DVector::from_fn(m, |i, _| rows[i].rhs - r_ref);
    let qr = a.clone().qr();
    let r = qr.r();
    let scale = (0..4).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..4 {
        if r[(i, i)].abs() <= 1e-10 * scale {
            let earlier = UNKNOWNS[..i].join(", ");
            return Err(EstimatorError::RankDeficient(
                UNKNOWNS[i],
                if earlier.is_empty() { "no excitation".into() } else { format!("degenerate with {earlier}") },
            ));
        }
    }
    let qtb = qr.q().transpose() * &b;
    let x = r.solve_upper_triangular(&qtb).expect("checked diagonal");
    let resid = &b - &a * &x;

    let (mut ss_d, mut ss_u) = (0.0, 0.0);
    for (row, e) in rows.iter().zip(resid.iter()) {
        if row.down { ss_d += e * e } else { ss_u += e * e }
    }
    let rms_down = (ss_d / n_down.max(1) as f64).sqrt() / C;
    let rms_up = (ss_u / n_up.max(1) as f64).sqrt() / C;

    let dof = (m as f64 - 4.0).max(1.0);
    let sigma2 = (ss_d + ss_u) / dof;
    let rinv = r.try_inverse().expect("checked diagonal");
    let cov_x = (&rinv * rinv.transpose()) * sigma2;
    let units = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 1.0, 1.0 / C, 1.0 / C));
    let cov = units * Matrix4::from_fn(|i, j| cov_x[(i, j)]) * units;

    let eps = x[3] / C;
    let tau_epoch = x[2] / C;
    Ok(Solution {
        r0: x[0] + r_ref,
        nu: x[1],
        tau: tau_epoch - eps * t0.as_secs(),
        kappa: 1.0 + eps,
        t_a0: t0,
        rms_down,
        rms_up,
        n_down,
        n_up,
        n_events: n_down.max(n_up),
        covariance: std::array::from_fn(|i| std::array::from_fn(|j| cov[(i, j)])),
    })
}

/// Solve, drop events whose downlink or uplink residual exceeds `k` times
/// that link's RMS, and solve once more.
pub fn solve_window_clipped(events: &[TwoWayEvent], window: (Timestamp, Timestamp), k: f64) -> Result<(Solution, Vec<TwoWayEvent>), EstimatorError> {
    let first = solve_window(events, window)?;
    let kept: Vec<TwoWayEvent> = events
        .iter()
        .filter(|e| {
            let (d, u) = first.link_residuals(e);
            d.abs() <= k * first.rms_down && u.abs() <= k * first.rms_up
        })
        .copied()
        .collect();
    if kept.len() == events.len() {
        return Ok((first, kept));
    }
    let second = solve_window(&kept, window)?;
    Ok((second, kept))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowSolution {
    pub index: usize,
    pub start: Timestamp,
    pub end: Timestamp,
    pub solution: Solution,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize)]
pub struct OffsetSeries {
    pub windows: Vec<WindowSolution>,
    /// Window indices with too few events.
    pub skipped: Vec<usize>,
}

impl OffsetSeries {
    pub fn epochs(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.solution.t_a0.as_secs()).collect()
    }
}

/// Windows of `duration` seconds from `origin` (A-local, keyed on `t_as`).
pub fn offset_series(events: &[TwoWayEvent], origin: Timestamp, duration: f64, count: usize) -> OffsetSeries {
    let step = Duration::from_secs(duration);
    let mut buckets: Vec<Vec<TwoWayEvent>> = vec![Vec::new(); count];
    for e in events {
        let x = e.t_as.secs_since(origin) / duration;
        if x >= 0.0 && (x as usize) < count {
            buckets[x as usize].push(*e);
        }
    }
    let mut series = OffsetSeries::default();
    for (i, b) in buckets.into_iter().enumerate() {
        let start = origin + step * i as u64;
        let end = start + step;
        match solve_window(&b, (start, end)) {
            Ok(solution) => series.windows.push(WindowSolution { index: i, start, end, solution }),
            Err(_) => series.skipped.push(i),
        }
    }
    series
}

/// A raw per-event point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RawPoint {
    pub epoch: f64,
    pub offset: f64,
    pub range: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalPoints {
    pub points: Vec<RawPoint>,
    /// Raw points left over after the last full block.
    pub dropped: usize,
}

/// Means of non-overlapping blocks of `n` consecutive points.
pub fn normal_points(raw: &[RawPoint], n: usize) -> NormalPoints {
    assert!(n >= 1, "block size must be positive");
    let points = raw
        .chunks_exact(n)
        .map(|c| {
            let k = c.len() as f64;
            RawPoint {
                epoch: c.iter().map(|p| p.epoch).sum::<f64>() / k,
                offset: c.iter().map(|p| p.offset).sum::<f64>() / k,
                range: c.iter().map(|p| p.range).sum::<f64>() / k,
            }
        })
        .collect();
    NormalPoints { points, dropped: raw.len() % n }
}

/// Sample standard deviation.
pub fn scatter(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Forward model: exact quadruples for given parameters, used by tests and
/// the demo.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardModel {
    pub r0: f64,
    pub nu: f64,
    pub tau: f64,
    pub kappa: f64,
    pub t_a0: Timestamp,
}

impl ForwardModel {
    fn as_solution(&self) -> Solution {
        Solution {
            r0: self.r0,
            nu: self.nu,
            tau: self.tau,
            kappa: self.kappa,
            t_a0: self.t_a0,
            rms_down: 0.0,
            rms_up: 0.0,
            n_down: 0,
            n_up: 0,
            n_events: 0,
            covariance: [[0.0; 4]; 4],
        }
    }

    /// Quadruple for an A emission at `t_as` and a B emission `after`
    /// seconds later on B's clock.
    pub fn event(&self, t_as: Timestamp, after: f64) -> TwoWayEvent {
        let s = self.as_solution();
        let t_br = s.predict_t_br(t_as);
        let t_bs = t_br + Duration::from_secs(after);
        let t_ar = s.predict_t_ar(t_bs);
        TwoWayEvent { t_as, t_br, t_bs, t_ar, block_index: 0 }
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn forward_model_inverts(r0 in 4e5f64..2e6, nu in -7e3f64..7e3, tau in -1e-3f64..1e-3, dk in -1e-8f64..1e-8, t0 in 0.0f64..1e4) {
            let m = ForwardModel { r0, nu, tau, kappa: 1.0 + dk, t_a0: Timestamp::from_secs(t0) };
            let ev: Vec<_> = (0..50)
                .map(|i| m.event(m.t_a0 + Duration::from_secs(-0.5 + i as f64 / 50.0), (i % 7) as f64 * 1e-5 - 3e-5))
                .collect();
            let s = solve_about(&ev, m.t_a0).unwrap();
            prop_assert!((s.r0 - r0).abs() < 1e-3, "r0 {} vs {}", s.r0, r0);
            prop_assert!((s.tau - tau).abs() < 1e-12, "tau {} vs {}", s.tau, tau);
            prop_assert!((s.nu - nu).abs() < 1e-2, "nu {} vs {}", s.nu, nu);
        }
    }
}
