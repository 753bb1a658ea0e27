//! The four-step pipeline: simulate, pair, solve, verify.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::{self, Eve};
use crate::bb84::{self, BlockGrid, DecoyStatistics, IntensityClass, QberBlock, QubitLookup, QubitRecord};
use crate::channel::{self, PulseTrain, QubitSource};
use crate::estimator::{self, NormalPoints, RawPoint, WindowSolution};
use crate::geometry::{GeometryError, C};
use crate::io::{self, EventLog, IoError};
use crate::keycrypto::{FrameReceiver, FrameSender, KeyError, KeyPool, Rejection, HEADER_LEN};
use crate::pairing::{self, LinkInputs, PairingError, TwoWayEvent};
use crate::profile::Profile;
use crate::rng::{self, Stream};
use crate::scenario::{Scenario, ScenarioError};
use crate::security::{self, SessionReport, WindowCheck};
use crate::time::{Duration, Timestamp};

/// Bob's share of one two-way event on the wire: `t_br`, `t_bs` in ps.
pub const RECORD_BYTES: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("channel: {0}")]
    Channel(#[from] channel::ChannelError),
    #[error("adversary: {0}")]
    Adversary(#[from] adversary::AttackError),
    #[error("pairing: {0}")]
    Pairing(#[from] PairingError),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("keycrypto: {0}")]
    Keys(#[from] KeyError),
    #[error("io: {0}")]
    Io(#[from] IoError),
    #[error("io: {0}")]
    File(#[from] std::io::Error),
}

/// Records every pulse payload the pipeline consults.
struct Recorder<'a> {
    inner: &'a dyn QubitLookup,
    seen: RefCell<BTreeMap<u64, QubitRecord>>,
}

impl QubitLookup for Recorder<'_> {
    fn qubit(&self, k: u64) -> Option<QubitRecord> {
        let q = self.inner.qubit(k)?;
        self.seen.borrow_mut().insert(k, q);
        Some(q)
    }
}

/// Plain-data summary written to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub session: SessionReport,
    pub seed: u64,
    pub duration: f64,
    pub down_detections: usize,
    pub down_pairs: usize,
    pub up_pairs: usize,
    pub ambiguity_qber: Vec<(i64, f64)>,
    pub sifted_bits: usize,
    pub qber_mean: Option<f64>,
    pub secret_key_bits: u64,
    pub key_bits_consumed: u64,
    pub two_way_events: usize,
    pub two_way_rate: f64,
    pub rms_down: f64,
    pub rms_up: f64,
    /// Per-window pooled one-way RMS, median over windows.
    pub window_rms_median: f64,
    pub offset_rms_raw: f64,
    pub offset_rms_averaged: f64,
    pub ranging_rms_raw: f64,
    pub ranging_rms_averaged: f64,
    pub normal_point_size: usize,
    pub normal_points: usize,
    pub frame_rejections: BTreeMap<String, usize>,
    pub windows: Vec<WindowCheck>,
}

/// Everything a run produces, kept in memory.
#[derive(Clone, Debug)]
pub struct Session {
    pub scenario: Scenario,
    pub log: EventLog,
    pub sifted: Vec<bb84::SiftedBit>,
    pub blocks: Vec<QberBlock>,
    pub statistics: DecoyStatistics,
    /// Two-way events in kept blocks, before transmission.
    pub events: Vec<TwoWayEvent>,
    /// Events reassembled at A from authenticated frames.
    pub received: Vec<TwoWayEvent>,
    pub frames: Vec<Vec<u8>>,
    pub frame_results: Vec<Result<(), Rejection>>,
    pub windows: Vec<WindowSolution>,
    pub raw_points: Vec<RawPoint>,
    pub normal_points: NormalPoints,
    pub report: RunReport,
    /// Downlink photons intercepted (simulation only).
    pub intercepted: u64,
}

fn down_train(s: &Scenario) -> PulseTrain {
    let (t0, t1) = s.window();
    PulseTrain::covering(&s.clock_a, t0, t1, s.downlink.period())
}

/// Runs the full simulation and analysis.
pub fn run(scenario: &Scenario) -> Result<Session, SessionError> {
    scenario.validate()?;
    let eph = scenario.build_ephemeris()?;
    let seed = scenario.seed;
    let mut eve = Eve::new(scenario.attack.clone(), rng::stream(seed, Stream::Adversary))?;
    let source = QubitSource::new(seed, scenario.downlink.intensity_probabilities);
    let window = scenario.window();
    let down = channel::simulate_downlink(
        &scenario.downlink,
        &eph,
        &scenario.clock_a,
        &scenario.clock_b,
        source,
        window,
        &mut eve,
        &mut rng::stream(seed, Stream::Downlink),
    )?;
    let up = channel::simulate_uplink(
        &scenario.uplink,
        &eph,
        &scenario.clock_a,
        &scenario.clock_b,
        window,
        &mut eve,
        &mut rng::stream(seed, Stream::Uplink),
    )?;
    let log = EventLog {
        qubits: BTreeMap::new(),
        down: down.detections,
        up_emissions: up.emissions,
        up_arrivals: up.detections.iter().map(|d| d.local).collect(),
    };
    let mut session = analyse(scenario, log, &down.emissions)?;
    session.intercepted = eve.intercepted;
    Ok(session)
}

/// Runs the analysis on recorded events.
pub fn replay(scenario: &Scenario, log: EventLog) -> Result<Session, SessionError> {
    scenario.validate()?;
    let table = log.clone();
    analyse(scenario, log, &table)
}

fn analyse(s: &Scenario, mut log: EventLog, qubits: &dyn QubitLookup) -> Result<Session, SessionError> {
    let eph = s.build_ephemeris()?;
    let window = s.window();
    let train = down_train(s);
    let rec = Recorder { inner: qubits, seen: RefCell::new(BTreeMap::new()) };
    let floor = s.analysis.min_gate_sigma;
    let down_sigma = s.downlink.combined_jitter_rms().hypot(s.clock_b.timestamp_jitter_rms).max(floor);
    let up_sigma = s.uplink.combined_jitter_rms().hypot(s.clock_a.timestamp_jitter_rms).hypot(s.clock_b.timestamp_jitter_rms).max(floor);

    // Step 1: one-way coincidences and the sifted key.
    let lock = pairing::acquire(
        &LinkInputs {
            eph: &eph,
            train: &train,
            qubits: &rec,
            down: &log.down,
            up_emissions: &log.up_emissions,
            up_arrivals: &log.up_arrivals,
            down_sigma,
            up_sigma,
            window,
        },
        &s.sync,
    )?;
    let sifted = bb84::sift(&lock.down_pairs, &log.down, &rec);
    let b_start = Timestamp::from_secs_ps(s.clock_b.to_local(window.0));
    let n_blocks = (s.duration / s.analysis.qber_block).ceil() as usize;
    let grid = BlockGrid { origin: b_start, duration: s.analysis.qber_block, count: n_blocks };
    let blocks = bb84::filter_blocks(&sifted, grid, s.policy.qber_threshold);
    let kept = |t: Timestamp| grid.index_of(t).is_some_and(|i| blocks[i].kept);
    let n_kept = blocks.iter().filter(|b| b.kept).count();
    let probs = s.downlink.intensity_probabilities;
    let share = n_kept as f64 / n_blocks as f64;
    let emitted = probs.map(|p| train.count as f64 * p * share);
    let mu = s.downlink.mean_photon_numbers;
    let statistics = bb84::tally_statistics(&lock.down_pairs, &sifted, &rec, kept, emitted, mu[0], mu[1]);
    let secret_key_bits = if n_kept > 0 { bb84::secret_key_length(&statistics).unwrap_or(0) } else { 0 };

    // Step 2: two-way events inside kept blocks.
    let mut events: Vec<TwoWayEvent> =
        pairing::pair_two_way(&lock.down_pairs, &lock.up_pairs, &lock.relation, s.analysis.pairing_window, |t| grid.index_of(t))
            .into_iter()
            .filter(|e| blocks[e.block_index].kept)
            .collect();
    events.sort_by_key(|e| (e.t_as, e.t_bs));

    // Step 3: Bob's time data to Alice in authenticated frames.
    let mut pool = KeyPool::preseeded(s.keys.preseed_bits, &mut rng::stream(s.seed, Stream::KeyMaterial));
    if !s.keys.preseed_only {
        pool.deposit(
            sifted
                .iter()
                .filter(|b| b.intensity == IntensityClass::Signal && kept(b.detection_local))
                .take(secret_key_bits as usize)
                .map(|b| b.alice_bit),
        );
    }
    let rx_pool = pool.clone();
    let mut payload = Vec::with_capacity(events.len() * RECORD_BYTES);
    for e in &events {
        payload.extend_from_slice(&e.t_br.as_ps().to_le_bytes());
        payload.extend_from_slice(&e.t_bs.as_ps().to_le_bytes());
    }
    let mut frames = if events.is_empty() { Vec::new() } else { FrameSender::new().encrypt_stream(&mut pool, &payload, 0)? };
    if s.attack.tamper_frames {
        adversary::tamper_frames(&mut frames, s.attack.tamper_mode, HEADER_LEN, &mut rng::stream(s.seed, Stream::Tamper));
    }
    let per_frame = crate::keycrypto::MAX_PAYLOAD / RECORD_BYTES;
    let mut receiver = FrameReceiver::new(&rx_pool);
    let mut received = Vec::new();
    let mut frame_results = Vec::with_capacity(frames.len());
    for f in &frames {
        match receiver.decrypt_verify(f) {
            Ok(plain) => {
                frame_results.push(Ok(()));
                let i = crate::keycrypto::frame_id(f).expect("authenticated header") as usize;
                let local = &events[(i * per_frame).min(events.len())..((i + 1) * per_frame).min(events.len())];
                for (e, chunk) in local.iter().zip(plain.chunks_exact(RECORD_BYTES)) {
                    let t_br = i64::from_le_bytes(chunk[..8].try_into().expect("8 bytes"));
                    let t_bs = i64::from_le_bytes(chunk[8..].try_into().expect("8 bytes"));
                    received.push(TwoWayEvent { t_br: Timestamp::from_ps(t_br), t_bs: Timestamp::from_ps(t_bs), ..*e });
                }
            }
            Err(r) => frame_results.push(Err(r)),
        }
    }

    // Step 4: per-window solutions and the alert-limit check.
    let a_start = train.start;
    let n_windows = (s.duration / s.analysis.fit_window).ceil() as usize;
    let step = Duration::from_secs(s.analysis.fit_window);
    let mut buckets: Vec<Vec<TwoWayEvent>> = vec![Vec::new(); n_windows];
    for e in &received {
        let x = e.t_as.secs_since(a_start) / s.analysis.fit_window;
        if x >= 0.0 && (x as usize) < n_windows {
            buckets[x as usize].push(*e);
        }
    }
    let mut predictor_rng = rng::stream(s.seed, Stream::Predictor);
    let mut windows = Vec::new();
    let mut checks = Vec::new();
    let mut raw_points = Vec::new();
    for (i, b) in buckets.iter().enumerate() {
        let start = a_start + step * i as u64;
        let Ok((solution, used)) = estimator::solve_window_clipped(b, (start, start + step), s.policy.residual_k) else {
            continue;
        };
        let epoch_true = s.clock_a.to_true(solution.t_a0.as_secs());
        let predicted = s.predictor.predicted_range(&eph, epoch_true, &mut predictor_rng)?;
        checks.push(WindowCheck {
            window_index: i,
            epoch: solution.t_a0.as_secs(),
            measured_range: solution.r0,
            predicted_range: predicted,
            decision: security::alert_check(&solution, predicted, &s.policy),
        });
        for e in &used {
            let (offset, range) = solution.point_residual(e);
            raw_points.push(RawPoint { epoch: estimator::event_epoch(e).as_secs(), offset, range });
        }
        windows.push(WindowSolution { index: i, start, end: start + step, solution });
    }
    let normal_points = estimator::normal_points(&raw_points, s.analysis.normal_point);

    let pooled = |f: fn(&estimator::Solution) -> (f64, usize)| {
        let (mut ss, mut n) = (0.0, 0usize);
        for w in &windows {
            let (rms, k) = f(&w.solution);
            ss += rms * rms * k as f64;
            n += k;
        }
        if n > 0 { (ss / n as f64).sqrt() } else { 0.0 }
    };
    let rms_down = pooled(|s| (s.rms_down, s.n_down));
    let rms_up = pooled(|s| (s.rms_up, s.n_up));
    let mut per_window: Vec<f64> = windows.iter().map(|w| w.solution.rms_pooled()).collect();
    per_window.sort_by(f64::total_cmp);
    let window_rms_median = per_window.get(per_window.len() / 2).copied().unwrap_or(0.0);
    let ranging_rms_averaged = estimator::scatter(normal_points.points.iter().map(|p| p.range));

    let authentic: Vec<bool> = frame_results.iter().map(Result::is_ok).collect();
    let session_report = security::session_verdict(&blocks, &checks, &authentic, &s.policy, ranging_rms_averaged);
    let mut frame_rejections = BTreeMap::new();
    for r in frame_results.iter().filter_map(|r| r.err()) {
        *frame_rejections.entry(r.to_string()).or_insert(0) += 1;
    }
    let (n, e) = blocks.iter().fold((0, 0), |(n, e), b| (n + b.sifted_count, e + b.error_count));

    log.qubits = rec.seen.into_inner().into_iter().map(|(k, q)| (k, (train.local(k), q))).collect();
    let report = RunReport {
        session: session_report,
        seed: s.seed,
        duration: s.duration,
        down_detections: log.down.len(),
        down_pairs: lock.down_pairs.len(),
        up_pairs: lock.up_pairs.len(),
        ambiguity_qber: lock.ambiguity_qber.clone(),
        sifted_bits: sifted.len(),
        qber_mean: (n > 0).then(|| e as f64 / n as f64),
        secret_key_bits,
        key_bits_consumed: pool.consumed_bits(),
        two_way_events: events.len(),
        two_way_rate: events.len() as f64 / s.duration,
        rms_down,
        rms_up,
        window_rms_median,
        offset_rms_raw: estimator::scatter(raw_points.iter().map(|p| p.offset)),
        offset_rms_averaged: estimator::scatter(normal_points.points.iter().map(|p| p.offset)),
        ranging_rms_raw: estimator::scatter(raw_points.iter().map(|p| p.range)),
        ranging_rms_averaged,
        normal_point_size: s.analysis.normal_point,
        normal_points: normal_points.points.len(),
        frame_rejections,
        windows: checks,
    };
    Ok(Session {
        scenario: s.clone(),
        log,
        sifted,
        blocks,
        statistics,
        events,
        received,
        frames,
        frame_results,
        windows,
        raw_points,
        normal_points,
        report,
        intercepted: 0,
    })
}

pub const ARTIFACTS: [&str; 6] = ["events.csv", "blocks.csv", "twoway.csv", "solutions.csv", "report.json", "frames.qstt"];

impl Session {
    /// Writes every artifact into `dir`, creating it if needed.
    pub fn write_artifacts(&self, dir: &Path) -> Result<(), SessionError> {
        std::fs::create_dir_all(dir)?;
        let file = |name: &str| -> Result<std::io::BufWriter<std::fs::File>, SessionError> {
            Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
        };
        io::write_events(file("events.csv")?, &self.log)?;
        io::write_blocks(file("blocks.csv")?, &self.blocks)?;
        io::write_twoway(file("twoway.csv")?, &self.events)?;
        io::write_solutions(file("solutions.csv")?, &self.windows)?;
        let mut json = serde_json::to_string_pretty(&self.report).expect("report serialises");
        json.push('\n');
        std::fs::write(dir.join("report.json"), json)?;
        std::fs::write(dir.join("frames.qstt"), self.frames.concat())?;
        let mut np = csv::Writer::from_writer(file("normal_points.csv")?);
        np.write_record(["epoch_s", "offset_ps", "range_mm"]).map_err(IoError::from)?;
        for p in &self.normal_points.points {
            np.write_record([p.epoch.to_string(), (p.offset * 1e12).to_string(), (p.range * 1e3).to_string()]).map_err(IoError::from)?;
        }
        np.flush()?;
        Ok(())
    }
}

pub fn read_report(dir: &Path) -> Result<RunReport, SessionError> {
    let path = dir.join("report.json");
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| SessionError::File(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))))
}

/// One cell of an attack sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub delay_down: f64,
    pub delay_up: f64,
    pub delta_offset: f64,
    pub expected_delta_offset: f64,
    pub delta_range: f64,
    pub expected_delta_range: f64,
    pub verdict: security::Verdict,
}

fn mean_offset_and_range(s: &Session) -> (f64, f64) {
    let n = s.windows.len().max(1) as f64;
    (
        s.windows.iter().map(|w| w.solution.offset_ba()).sum::<f64>() / n,
        s.windows.iter().map(|w| w.solution.r0).sum::<f64>() / n,
    )
}

/// Runs `base` with every delay pair and reports changes against the
/// undelayed run.
pub fn attack_sweep(base: &Scenario, downs: &[f64], ups: &[f64]) -> Result<Vec<SweepRow>, SessionError> {
    let mut clean = base.clone();
    clean.attack.delay_down = Profile::Constant(0.0);
    clean.attack.delay_up = Profile::Constant(0.0);
    let reference = run(&clean)?;
    let (tau0, r0) = mean_offset_and_range(&reference);
    let mut rows = Vec::new();
    for &dd in downs {
        for &du in ups {
            let session = if dd == 0.0 && du == 0.0 {
                reference.clone()
            } else {
                let mut s = clean.clone();
                s.attack.delay_down = Profile::Constant(dd);
                s.attack.delay_up = Profile::Constant(du);
                run(&s)?
            };
            let (tau, r) = mean_offset_and_range(&session);
            rows.push(SweepRow {
                delay_down: dd,
                delay_up: du,
                delta_offset: tau - tau0,
                expected_delta_offset: (dd - du) / 2.0,
                delta_range: r - r0,
                expected_delta_range: C * (dd + du) / 2.0,
                verdict: session.report.session.verdict,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep<W: std::io::Write>(w: W, rows: &[SweepRow]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "delay_down_ps",
        "delay_up_ps",
        "delta_tau_ps",
        "expected_delta_tau_ps",
        "delta_range_mm",
        "expected_delta_range_mm",
        "verdict",
    ])?;
    for r in rows {
        let v = serde_json::to_value(r.verdict).expect("verdict serialises");
        w.write_record([
            (r.delay_down * 1e12).to_string(),
            (r.delay_up * 1e12).to_string(),
            (r.delta_offset * 1e12).to_string(),
            (r.expected_delta_offset * 1e12).to_string(),
            (r.delta_range * 1e3).to_string(),
            (r.expected_delta_range * 1e3).to_string(),
            v.as_str().unwrap_or_default().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

impl RunReport {
    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let r = &self.session;
        let verdict = serde_json::to_value(r.verdict).expect("verdict serialises");
        let mut out = format!(
            "verdict: {}; offset precision (n={}): {:.1} ps\n",
            verdict.as_str().unwrap_or_default(),
            self.normal_point_size,
            self.offset_rms_averaged * 1e12
        );
        if let Some(b) = r.guaranteed_offset_bound {
            out += &format!("guaranteed offset bound: {:.1} ps (statistical term {:.1} ps)\n", b * 1e12, r.statistical_offset_term * 1e12);
        }
        for reason in &r.reasons {
            out += &format!("  - {reason}\n");
        }
        let q = self.qber_mean.map_or("n/a".to_string(), |q| format!("{:.3}%", q * 100.0));
        out += &format!("blocks kept: {}/{}; mean QBER {q}\n", r.blocks_kept, r.blocks_total);
        out += &format!("windows kept: {}/{}; max |R - R_p| {:.1} mm\n", r.windows_kept, r.windows_total, r.max_range_discrepancy * 1e3);
        out += &format!("frames authentic: {}/{}\n", r.frames_authentic, r.frames_total);
        out += &format!("two-way events: {} ({:.1} Hz)\n", self.two_way_events, self.two_way_rate);
        out += &format!("one-way RMS: down {:.1} ps, up {:.1} ps\n", self.rms_down * 1e12, self.rms_up * 1e12);
        out += &format!(
            "offset RMS: raw {:.1} ps, averaged {:.1} ps\n",
            self.offset_rms_raw * 1e12,
            self.offset_rms_averaged * 1e12
        );
        out += &format!(
            "ranging RMS: raw {:.2} cm, averaged {:.2} cm\n",
            self.ranging_rms_raw * 100.0,
            self.ranging_rms_averaged * 100.0
        );
        out += &format!("secret key: {} bits; consumed {} bits\n", self.secret_key_bits, self.key_bits_consumed);
        out
    }
}
