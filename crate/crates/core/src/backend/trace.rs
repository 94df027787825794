//! The adversary's view: one event per flush, listing which backend files
//! were replaced, when, and how many bytes moved.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "epoch_index,virtual_time_s,wall_time_s,written_indices,total_bytes";

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEvent {
    pub epoch_index: u64,
    pub virtual_time_s: f64,
    pub wall_time_s: f64,
    /// Sorted backend file indices written by this flush.
    pub indices: Vec<u32>,
    pub total_bytes: u64,
}

impl TraceEvent {
    pub fn to_csv_row(&self) -> String {
        let mut row = format!("{},{},{},", self.epoch_index, self.virtual_time_s, self.wall_time_s);
        for (i, idx) in self.indices.iter().enumerate() {
            if i > 0 {
                row.push(';');
            }
            write!(row, "{idx}").unwrap();
        }
        write!(row, ",{}", self.total_bytes).unwrap();
        row
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let bad = || Error::MalformedTrace(format!("bad row {line:?}"));
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 5 {
            return Err(bad());
        }
        let indices = if cols[3].is_empty() {
            Vec::new()
        } else {
            cols[3].split(';').map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?
        };
        Ok(TraceEvent {
            epoch_index: cols[0].parse().map_err(|_| bad())?,
            virtual_time_s: cols[1].parse().map_err(|_| bad())?,
            wall_time_s: cols[2].parse().map_err(|_| bad())?,
            indices,
            total_bytes: cols[4].parse().map_err(|_| bad())?,
        })
    }
}

pub fn trace_to_csv(events: &[TraceEvent]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for e in events {
        out.push_str(&e.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == TRACE_HEADER => {}
        _ => return Err(Error::MalformedTrace("missing header".into())),
    }
    lines.map(TraceEvent::parse_csv_row).collect()
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<Vec<TraceEvent>> {
    let f = File::open(path)?;
    let mut text = String::new();
    for line in BufReader::new(f).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_trace(&text)
}

/// Append-only CSV trace file.
pub struct TraceSink {
    file: File,
}

impl TraceSink {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(file, "{TRACE_HEADER}")?;
        }
        Ok(TraceSink { file })
    }

    pub fn append(&mut self, event: &TraceEvent) -> Result<()> {
        writeln!(self.file, "{}", event.to_csv_row())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let events = vec![
            TraceEvent { epoch_index: 0, virtual_time_s: 10.0, wall_time_s: 10.0, indices: vec![0, 5, 9, 12], total_bytes: 4 * 4136 },
            TraceEvent { epoch_index: 1, virtual_time_s: 20.5, wall_time_s: 0.25, indices: vec![], total_bytes: 0 },
        ];
        let text = trace_to_csv(&events);
        assert!(text.starts_with(TRACE_HEADER));
        assert!(text.contains("0,10,10,0;5;9;12,16544"));
        assert_eq!(parse_trace(&text).unwrap(), events);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_trace("nope\n1,2,3,4,5").is_err());
        assert!(parse_trace(&format!("{TRACE_HEADER}\n1,2,3")).is_err());
        assert!(parse_trace(&format!("{TRACE_HEADER}\n1,2,3,a;b,5")).is_err());
    }
}
