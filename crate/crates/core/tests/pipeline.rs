use std::path::PathBuf;

use qstt::adversary::{ResendTiming, TamperMode};
use qstt::keycrypto::Rejection;
use qstt::profile::Profile;
use qstt::rng::seeded;
use qstt::scenario::Scenario;
use qstt::security::{SecurityPolicy, Verdict};
use qstt::session::{self, ARTIFACTS};
use rand_distr::{Distribution, Normal};

fn short(name: &str, duration: f64) -> Scenario {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"));
    let mut s = Scenario::load(&p).unwrap();
    s.duration = duration;
    s
}

#[test]
fn replay_from_recorded_events_matches() {
    let s = short("clean_pass", 3.0);
    let live = session::run(&s).unwrap();
    let a = tempfile::tempdir().unwrap();
    live.write_artifacts(a.path()).unwrap();
    let log = qstt::io::read_events(std::fs::File::open(a.path().join("events.csv")).unwrap()).unwrap();
    let replayed = session::replay(&s, log).unwrap();
    let b = tempfile::tempdir().unwrap();
    replayed.write_artifacts(b.path()).unwrap();
    for name in ARTIFACTS {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    assert_eq!(live.report, replayed.report);
}

#[test]
fn seed_changes_outputs() {
    let mut s = short("clean_pass", 2.0);
    let a = session::run(&s).unwrap();
    s.seed += 1;
    let b = session::run(&s).unwrap();
    assert_ne!(a.events, b.events);
    assert_eq!(a.report.session.verdict, Verdict::Secure);
    assert_eq!(b.report.session.verdict, Verdict::Secure);
}

#[test]
fn clean_pass_guarantees_l_over_c() {
    let s = short("clean_pass", 3.0);
    let r = session::run(&s).unwrap().report;
    assert_eq!(r.session.verdict, Verdict::Secure);
    let bound = r.session.guaranteed_offset_bound.unwrap();
    assert!((bound - 166.78e-12).abs() < 0.01e-12, "{bound}");
    assert_eq!(r.session.frames_authentic, r.session.frames_total);
    assert!(r.session.frames_total > 0);
}

#[test]
fn tampered_frames_compromise() {
    for (mode, why) in [(TamperMode::BitFlip, Rejection::BadTag), (TamperMode::Replay, Rejection::Replay)] {
        let mut s = short("clean_pass", 2.0);
        s.attack.tamper_frames = true;
        s.attack.tamper_mode = mode;
        let out = session::run(&s).unwrap();
        assert_eq!(out.report.session.verdict, Verdict::Compromised, "{mode:?}");
        assert!(out.frame_results.contains(&Err(why)), "{mode:?}");
        assert!(out.received.len() < out.events.len());
    }
}

#[test]
fn replayed_frame_is_refused_and_later_frames_resume() {
    let mut s = short("clean_pass", 2.0);
    s.attack.tamper_frames = true;
    s.attack.tamper_mode = TamperMode::Replay;
    let out = session::run(&s).unwrap();
    // Wire order f0 f0 f1 f2 ...: only the duplicate is refused, the last
    // frame never arrives.
    assert!(out.frame_results[0].is_ok());
    assert_eq!(out.frame_results[1], Err(Rejection::Replay));
    assert!(out.frame_results[2..].iter().all(Result::is_ok));
    let per_frame = qstt::keycrypto::MAX_PAYLOAD / session::RECORD_BYTES;
    assert_eq!(out.received[..], out.events[..out.received.len()]);
    assert_eq!(out.received.len(), (out.frames.len() - 1) * per_frame);
}

#[test]
fn one_metre_delay_is_discarded() {
    let mut s = short("clean_pass", 2.0);
    // 1 m of extra range split as an uplink hold.
    s.attack.delay_up = Profile::Constant(2.0 / qstt::geometry::C);
    let r = session::run(&s).unwrap().report;
    assert_eq!(r.session.windows_kept, 0);
    assert_eq!(r.session.verdict, Verdict::Compromised);
}

#[test]
fn wider_alert_limit_admits_larger_offsets() {
    let mut s = short("delay_attack", 2.0);
    s.policy = SecurityPolicy::micius();
    let r = session::run(&s).unwrap().report;
    assert_eq!(r.session.verdict, Verdict::Secure);
    assert!((r.session.guaranteed_offset_bound.unwrap() - 3.0 / qstt::geometry::C).abs() < 1e-15);
}

#[test]
fn shifted_resend_is_still_caught_by_qber() {
    let mut s = short("intercept_resend", 2.0);
    s.attack.resend_timing = ResendTiming::FixedShift(1e-9);
    let r = session::run(&s).unwrap().report;
    assert_eq!(r.session.blocks_kept, 0);
    assert_eq!(r.session.verdict, Verdict::Compromised);
}

#[test]
fn false_alarms_below_five_percent_at_l_over_three() {
    let s = short("clean_pass", 10.0);
    let out = session::run(&s).unwrap();
    let eph = s.build_ephemeris().unwrap();
    let l = s.policy.alert_limit;
    let noise = Normal::new(0.0, l / 3.0).unwrap();
    let mut rng = seeded(31);
    let (mut alarms, mut checks) = (0, 0);
    for _ in 0..100 {
        for w in &out.windows {
            let truth = eph.range_at(s.clock_a.to_true(w.solution.t_a0.as_secs())).unwrap();
            let predicted = truth + noise.sample(&mut rng);
            checks += 1;
            alarms += usize::from((w.solution.r0 - predicted).abs() > l);
        }
    }
    let rate = alarms as f64 / checks as f64;
    assert!(rate < 0.05, "false-alarm rate {rate}");
    for w in &out.windows {
        let truth = eph.range_at(s.clock_a.to_true(w.solution.t_a0.as_secs())).unwrap();
        // Curvature biases a linear fit's centre by accel·T²/24, ~4 mm here.
        assert!((w.solution.r0 - truth).abs() < 1e-2, "window {} off by {}", w.index, w.solution.r0 - truth);
    }
}

#[test]
fn offset_tracks_true_clock_difference() {
    let s = short("clean_pass", 3.0);
    let out = session::run(&s).unwrap();
    for w in &out.windows {
        let t_a = w.solution.t_a0.as_secs();
        let t_true = s.clock_a.to_true(t_a);
        // B reads t_b at the same instant; its offset relative to A.
        let t_b = s.clock_b.to_local(t_true);
        let want = t_b - t_a;
        assert!((w.solution.offset_ba() - want).abs() < 20e-12, "{} vs {}", w.solution.offset_ba(), want);
    }
}
