//! Trace records, one JSON object per line.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::protocol::MsgKind;
use crate::time::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Send,
    Deliver,
    Timer,
    Notarize,
    Finalize,
    Epoch,
}

/// Records are written in processing order. Within one instant the engine
/// handles deliveries before timers, then orders by sender, receiver and
/// per-link sequence number; the records of one step follow their trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: Time,
    pub kind: RecordKind,
    pub node: u32,
    pub peer: Option<u32>,
    pub msg: Option<MsgKind>,
    pub epoch: u64,
    pub seq: Option<u64>,
    pub block: Option<String>,
    /// Chain length of `block`, on notarize and finalize records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub len: Option<u64>,
}

impl TraceRecord {
    pub fn new(t: Time, kind: RecordKind, node: u32, epoch: u64) -> TraceRecord {
        TraceRecord {
            t,
            kind,
            node,
            peer: None,
            msg: None,
            epoch,
            seq: None,
            block: None,
            len: None,
        }
    }
}

pub fn write_trace<W: Write>(mut w: W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn trace_to_string(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

/// Parses a JSON-lines trace. Blank lines are skipped; the error names the
/// offending line.
pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<TraceRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord =
            serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_line_format() {
        let mut r = TraceRecord::new(Time::from_units(1.5), RecordKind::Send, 1, 1);
        r.peer = Some(2);
        r.msg = Some(MsgKind::Vote);
        r.block = Some("ab".repeat(32));
        let s = trace_to_string(std::slice::from_ref(&r));
        assert!(s.starts_with(r#"{"t":1.5,"kind":"send","node":1,"peer":2,"msg":"vote","epoch":1,"seq":null,"block":"abab"#));
        assert!(!s.contains("len"));
        let back = read_trace(s.as_bytes()).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn bad_line_reported() {
        let err = read_trace("\n{\"t\":0}\n".as_bytes()).unwrap_err();
        assert!(err.starts_with("line 2"), "{err}");
    }
}
