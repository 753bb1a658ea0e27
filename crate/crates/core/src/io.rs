//! CSV artifacts.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::bb84::{Basis, IntensityClass, QberBlock, QubitLookup, QubitRecord};
use crate::channel::{DownlinkDetection, Tagged};
use crate::estimator::WindowSolution;
use crate::pairing::TwoWayEvent;
use crate::time::Timestamp;

pub const EVENTS_HEADER: [&str; 7] = ["station", "kind", "local_time_ps", "pulse_index", "basis", "bit", "intensity"];
pub const BLOCKS_HEADER: [&str; 6] = ["block_index", "sifted", "errors", "qber", "kept", "confidence"];
pub const TWOWAY_HEADER: [&str; 5] = ["t_as_ps", "t_br_ps", "t_bs_ps", "t_ar_ps", "block_index"];
pub const SOLUTIONS_HEADER: [&str; 8] =
    ["epoch_s", "tau_ps", "r0_mm", "nu_mmps", "kappa_minus_1", "rms_down_ps", "rms_up_ps", "n_events"];

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{file}: expected header {expected}")]
    Header { file: &'static str, expected: String },
    #[error("{file} row {row}: {reason}")]
    Row { file: &'static str, row: usize, reason: String },
}

/// Everything the post-processing sees from the two stations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    /// Alice's records for the downlink pulses the pipeline consulted.
    pub qubits: BTreeMap<u64, (Timestamp, QubitRecord)>,
    pub down: Vec<DownlinkDetection>,
    pub up_emissions: Vec<Tagged>,
    pub up_arrivals: Vec<Timestamp>,
}

impl QubitLookup for EventLog {
    fn qubit(&self, k: u64) -> Option<QubitRecord> {
        self.qubits.get(&k).map(|(_, q)| *q)
    }
}

fn ps(t: Timestamp) -> String {
    t.as_ps().to_string()
}

pub fn write_events<W: Write>(w: W, log: &EventLog) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(EVENTS_HEADER)?;
    for (k, (t, q)) in &log.qubits {
        w.write_record(["A", "emission", &ps(*t), &k.to_string(), q.basis.code(), &q.bit.to_string(), q.intensity.code()])?;
    }
    for (i, d) in log.down.iter().enumerate() {
        w.write_record(["B", "arrival", &ps(d.local), &i.to_string(), d.basis.code(), &d.bit.to_string(), ""])?;
    }
    for e in &log.up_emissions {
        w.write_record(["B", "emission", &ps(e.local), &e.index.to_string(), "", "", ""])?;
    }
    for (i, t) in log.up_arrivals.iter().enumerate() {
        w.write_record(["A", "arrival", &ps(*t), &i.to_string(), "", "", ""])?;
    }
    w.flush()?;
    Ok(())
}

fn check_header<R: Read>(r: &mut csv::Reader<R>, file: &'static str, expected: &[&str]) -> Result<(), IoError> {
    if r.headers()?.iter().ne(expected.iter().copied()) {
        return Err(IoError::Header { file, expected: expected.join(",") });
    }
    Ok(())
}

pub fn read_events<R: Read>(r: R) -> Result<EventLog, IoError> {
    const F: &str = "events.csv";
    let mut r = csv::Reader::from_reader(r);
    check_header(&mut r, F, &EVENTS_HEADER)?;
    let mut log = EventLog::default();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let err = |reason: String| IoError::Row { file: F, row, reason };
        let field = |j: usize| rec.get(j).unwrap_or("");
        let t = field(2).parse::<i64>().map_err(|_| err(format!("bad local_time_ps {:?}", field(2))))?;
        let t = Timestamp::from_ps(t);
        let index = field(3).parse::<u64>().map_err(|_| err(format!("bad pulse_index {:?}", field(3))))?;
        let basis = || Basis::from_code(field(4)).ok_or_else(|| err(format!("bad basis {:?}", field(4))));
        let bit = || match field(5) {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            b => Err(err(format!("bad bit {b:?}"))),
        };
        match (field(0), field(1)) {
            ("A", "emission") => {
                let intensity = IntensityClass::from_code(field(6)).ok_or_else(|| err(format!("bad intensity {:?}", field(6))))?;
                log.qubits.insert(index, (t, QubitRecord { basis: basis()?, bit: bit()?, intensity }));
            }
            ("B", "arrival") => log.down.push(DownlinkDetection { local: t, basis: basis()?, bit: bit()?, source_pulse: None }),
            ("B", "emission") => log.up_emissions.push(Tagged { index, local: t }),
            ("A", "arrival") => log.up_arrivals.push(t),
            (s, k) => return Err(err(format!("unknown station/kind {s}/{k}"))),
        }
    }
    Ok(log)
}

pub fn write_blocks<W: Write>(w: W, blocks: &[QberBlock]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(BLOCKS_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for b in blocks {
        w.write_record([
            b.block_index.to_string(),
            b.sifted_count.to_string(),
            b.error_count.to_string(),
            opt(b.qber),
            b.kept.to_string(),
            opt(b.confidence),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_twoway<W: Write>(w: W, events: &[TwoWayEvent]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(TWOWAY_HEADER)?;
    for e in events {
        w.write_record([ps(e.t_as), ps(e.t_br), ps(e.t_bs), ps(e.t_ar), e.block_index.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_twoway<R: Read>(r: R) -> Result<Vec<TwoWayEvent>, IoError> {
    const F: &str = "twoway.csv";
    let mut r = csv::Reader::from_reader(r);
    check_header(&mut r, F, &TWOWAY_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || IoError::Row { file: F, row: i + 2, reason: "non-integer field".into() };
        let t = |j: usize| rec.get(j).and_then(|s| s.parse::<i64>().ok()).map(Timestamp::from_ps).ok_or_else(bad);
        let block_index = rec.get(4).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        out.push(TwoWayEvent { t_as: t(0)?, t_br: t(1)?, t_bs: t(2)?, t_ar: t(3)?, block_index });
    }
    Ok(out)
}

pub fn write_solutions<W: Write>(w: W, windows: &[WindowSolution]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(SOLUTIONS_HEADER)?;
    for ws in windows {
        let s = &ws.solution;
        w.write_record([
            s.t_a0.as_secs().to_string(),
            (s.tau_at_epoch() * 1e12).to_string(),
            (s.r0 * 1e3).to_string(),
            (s.nu * 1e3).to_string(),
            (s.kappa - 1.0).to_string(),
            (s.rms_down * 1e12).to_string(),
            (s.rms_up * 1e12).to_string(),
            s.n_events.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bb84::encode;

    fn log() -> EventLog {
        let mut qubits = BTreeMap::new();
        qubits.insert(3, (Timestamp::from_ps(15_000), encode(1, Basis::Diagonal, IntensityClass::Decoy)));
        qubits.insert(9, (Timestamp::from_ps(45_000), encode(0, Basis::Rectilinear, IntensityClass::Vacuum)));
        EventLog {
            qubits,
            down: vec![DownlinkDetection { local: Timestamp::from_ps(-7), basis: Basis::Diagonal, bit: 1, source_pulse: None }],
            up_emissions: vec![Tagged { index: 0, local: Timestamp::from_ps(100) }, Tagged { index: 1, local: Timestamp::from_ps(100_000_100) }],
            up_arrivals: vec![Timestamp::from_ps(2_668_000_123)],
        }
    }

    #[test]
    fn events_roundtrip_bit_exact() {
        let mut buf = Vec::new();
        write_events(&mut buf, &log()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("station,kind,local_time_ps,pulse_index,basis,bit,intensity\nA,emission,15000,3,X,1,D\n"));
        assert!(text.contains("\nB,emission,100,0,,,\n"));
        let back = read_events(buf.as_slice()).unwrap();
        assert_eq!(back, log());
        let mut again = Vec::new();
        write_events(&mut again, &back).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn bad_rows_are_located() {
        let text = "station,kind,local_time_ps,pulse_index,basis,bit,intensity\nA,emission,1,0,Q,1,S\n";
        let e = read_events(text.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("row 2") && e.contains("basis"), "{e}");
        assert!(matches!(read_events("a,b\n".as_bytes()), Err(IoError::Header { .. })));
    }

    #[test]
    fn twoway_roundtrip() {
        let ev = vec![TwoWayEvent {
            t_as: Timestamp::from_ps(1),
            t_br: Timestamp::from_ps(2),
            t_bs: Timestamp::from_ps(-3),
            t_ar: Timestamp::from_ps(4),
            block_index: 5,
        }];
        let mut buf = Vec::new();
        write_twoway(&mut buf, &ev).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "t_as_ps,t_br_ps,t_bs_ps,t_ar_ps,block_index\n1,2,-3,4,5\n");
        assert_eq!(read_twoway(buf.as_slice()).unwrap(), ev);
    }

    #[test]
    fn blocks_missing_values_empty() {
        let b = QberBlock { block_index: 0, duration: 1.0, sifted_count: 0, error_count: 0, qber: None, kept: false, confidence: None };
        let mut buf = Vec::new();
        write_blocks(&mut buf, &[b]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "block_index,sifted,errors,qber,kept,confidence\n0,0,0,,false,\n");
    }
}
