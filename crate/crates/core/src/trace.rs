//! Mobility trace files: `t_ms,id,x_m,y_m,speed_mph`, one sample per row.
//!
//! Export is canonical (three decimals for reals, LF endings), so an exported
//! trace re-imports and re-exports byte-identically.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::model::{Position, VehicleId, VehicleState};

pub const TRACE_HEADER: [&str; 5] = ["t_ms", "id", "x_m", "y_m", "speed_mph"];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("vehicle {id}: time {t_ms} ms does not follow its previous sample")]
    NonMonotonicTime { id: VehicleId, t_ms: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub t_ms: u64,
    pub id: VehicleId,
    pub pos: Position,
    pub true_speed: f64,
}

/// Samples ordered by `(t_ms, id)`; per-vehicle times strictly increase.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceTimeline {
    samples: Vec<TraceSample>,
}

impl TraceTimeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Appends a snapshot of every vehicle at `t_ms`. Snapshots must be pushed in time order.
    pub fn push_snapshot(&mut self, t_ms: u64, states: &[VehicleState]) {
        if let Some(last) = self.samples.last() {
            assert!(t_ms > last.t_ms, "snapshots must be pushed in time order");
        }
        let mut snap: Vec<TraceSample> = states
            .iter()
            .map(|s| TraceSample {
                t_ms,
                id: s.id,
                pos: s.pos,
                true_speed: s.true_speed,
            })
            .collect();
        snap.sort_by_key(|s| s.id);
        self.samples.extend(snap);
    }

    /// Builds a timeline from samples in any order, enforcing per-vehicle monotonic time
    /// in the order given.
    pub fn from_samples(samples: Vec<TraceSample>) -> Result<Self, TraceError> {
        let mut last: HashMap<VehicleId, u64> = HashMap::new();
        for s in &samples {
            if let Some(&prev) = last.get(&s.id) {
                if s.t_ms <= prev {
                    return Err(TraceError::NonMonotonicTime {
                        id: s.id,
                        t_ms: s.t_ms,
                    });
                }
            }
            last.insert(s.id, s.t_ms);
        }
        let mut samples = samples;
        samples.sort_by_key(|s| (s.t_ms, s.id));
        Ok(TraceTimeline { samples })
    }

    /// Samples taken at exactly `t_ms`.
    pub fn at(&self, t_ms: u64) -> &[TraceSample] {
        let lo = self.samples.partition_point(|s| s.t_ms < t_ms);
        let hi = self.samples.partition_point(|s| s.t_ms <= t_ms);
        &self.samples[lo..hi]
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(32 * (self.samples.len() + 1));
        out.push_str(&TRACE_HEADER.join(","));
        out.push('\n');
        for s in &self.samples {
            writeln!(
                out,
                "{},{},{:.3},{:.3},{:.3}",
                s.t_ms, s.id, s.pos.x, s.pos.y, s.true_speed
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn export(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    line: u64,
) -> Result<T, TraceError>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(idx).ok_or_else(|| TraceError::Parse {
        line,
        reason: format!("missing column {}", TRACE_HEADER[idx]),
    })?;
    raw.trim().parse().map_err(|e| TraceError::Parse {
        line,
        reason: format!("{}: {e}", TRACE_HEADER[idx]),
    })
}

pub fn parse_trace<R: Read>(reader: R) -> Result<TraceTimeline, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut samples = Vec::new();
    let mut header_seen = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| TraceError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if !header_seen {
            header_seen = true;
            let got: Vec<&str> = rec.iter().map(str::trim).collect();
            if got != TRACE_HEADER {
                return Err(TraceError::Parse {
                    line,
                    reason: format!("expected header {}", TRACE_HEADER.join(",")),
                });
            }
            continue;
        }
        if rec.len() != TRACE_HEADER.len() {
            return Err(TraceError::Parse {
                line,
                reason: format!("expected 5 columns, found {}", rec.len()),
            });
        }
        let x: f64 = field(&rec, 2, line)?;
        let y: f64 = field(&rec, 3, line)?;
        let speed: f64 = field(&rec, 4, line)?;
        if !(x.is_finite() && y.is_finite() && speed.is_finite()) {
            return Err(TraceError::Parse {
                line,
                reason: "non-finite value".into(),
            });
        }
        samples.push(TraceSample {
            t_ms: field(&rec, 0, line)?,
            id: VehicleId(field(&rec, 1, line)?),
            pos: Position::new(x, y),
            true_speed: speed,
        });
    }
    TraceTimeline::from_samples(samples)
}

pub fn import_trace(path: impl AsRef<Path>) -> Result<TraceTimeline, TraceError> {
    let file = std::fs::File::open(path)?;
    parse_trace(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_empty_timeline() {
        assert!(parse_trace("".as_bytes()).unwrap().is_empty());
        assert!(parse_trace("t_ms,id,x_m,y_m,speed_mph\n".as_bytes())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn out_of_order_rows_for_one_vehicle() {
        let src = "t_ms,id,x_m,y_m,speed_mph\n200,4,1.0,0.0,50.0\n100,4,0.0,0.0,50.0\n";
        match parse_trace(src.as_bytes()) {
            Err(TraceError::NonMonotonicTime { id, t_ms }) => {
                assert_eq!(id, VehicleId(4));
                assert_eq!(t_ms, 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn repeated_time_rejected() {
        let src = "t_ms,id,x_m,y_m,speed_mph\n100,1,0,0,50\n100,1,1,0,50\n";
        assert!(matches!(
            parse_trace(src.as_bytes()),
            Err(TraceError::NonMonotonicTime { .. })
        ));
    }

    #[test]
    fn rows_sorted_by_time_then_id() {
        let src = "t_ms,id,x_m,y_m,speed_mph\n100,2,0,0,1\n0,2,0,0,1\n0,1,0,0,1\n";
        // vehicle 2 goes 100 then 0 -> rejected
        assert!(parse_trace(src.as_bytes()).is_err());
        let src = "t_ms,id,x_m,y_m,speed_mph\n0,2,0,0,1\n100,2,0,0,1\n0,1,0,0,1\n";
        let tl = parse_trace(src.as_bytes()).unwrap();
        let keys: Vec<(u64, u32)> = tl.samples().iter().map(|s| (s.t_ms, s.id.0)).collect();
        assert_eq!(keys, vec![(0, 1), (0, 2), (100, 2)]);
        assert_eq!(tl.at(0).len(), 2);
        assert_eq!(tl.at(100).len(), 1);
        assert!(tl.at(50).is_empty());
    }

    #[test]
    fn parse_errors_carry_line() {
        let src = "t_ms,id,x_m,y_m,speed_mph\n0,1,0,0,1\n10,x,0,0,1\n";
        match parse_trace(src.as_bytes()) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let src = "time,id\n";
        assert!(matches!(
            parse_trace(src.as_bytes()),
            Err(TraceError::Parse { line: 1, .. })
        ));
    }
}
