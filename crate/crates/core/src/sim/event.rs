use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kinds of record in the event log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Arrival,
    Dispatch,
    SegmentDone,
    TimeoutFire,
    Preempt,
    Merge,
    Complete,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::Arrival => "ARRIVAL",
            EventKind::Dispatch => "DISPATCH",
            EventKind::SegmentDone => "SEGMENT_DONE",
            EventKind::TimeoutFire => "TIMEOUT_FIRE",
            EventKind::Preempt => "PREEMPT",
            EventKind::Merge => "MERGE",
            EventKind::Complete => "COMPLETE",
        };
        f.write_str(s)
    }
}

/// One line of the event log. `detail` holds space-separated `key=value`
/// pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time_ns: u64,
    pub kind: EventKind,
    pub batch_id: Option<u64>,
    pub sample_id: Option<u64>,
    pub detail: String,
}

impl LogRecord {
    /// Value of `key` in the detail string.
    pub fn field(&self, key: &str) -> Option<&str> {
        self.detail
            .split_ascii_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }

    pub fn field_u64(&self, key: &str) -> Result<u64> {
        let v = self
            .field(key)
            .ok_or_else(|| Error::Parse(format!("{} record at {} lacks `{key}`", self.kind, self.time_ns)))?;
        v.parse()
            .map_err(|_| Error::Parse(format!("`{key}={v}` is not an unsigned integer")))
    }

    pub fn field_i64(&self, key: &str) -> Result<i64> {
        let v = self
            .field(key)
            .ok_or_else(|| Error::Parse(format!("{} record at {} lacks `{key}`", self.kind, self.time_ns)))?;
        v.parse()
            .map_err(|_| Error::Parse(format!("`{key}={v}` is not an integer")))
    }
}

/// One JSON object per line.
pub fn to_json_lines(log: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    out
}

pub fn parse_json_lines(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1))))
        .collect()
}
