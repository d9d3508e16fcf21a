use chrono::{DateTime, Datelike, Duration, Months, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use super::TransactionRecord;
use crate::{Error, Result};

/// Half-open time interval `[start, end)` for snapshot `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotWindow {
    pub index: usize,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl SnapshotWindow {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowSpec {
    /// Calendar months, starting at the month of the earliest record.
    Monthly,
    /// Fixed-length windows starting at the earliest record.
    Fixed { seconds: i64 },
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec::Monthly
    }
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub window: SnapshotWindow,
    pub records: Vec<TransactionRecord>,
}

fn month_start(t: DateTime<Utc>) -> DateTime<Utc> {
    NaiveDate::from_ymd_opt(t.year(), t.month(), 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("first of month is always valid")
        .and_utc()
}

/// Split records into contiguous chronological windows covering the first
/// through the last record. Empty windows in between are kept.
pub fn window_partition(records: &[TransactionRecord], spec: &WindowSpec) -> Result<Vec<Partition>> {
    let (first, last) = match (
        records.iter().map(|r| r.timestamp).min(),
        records.iter().map(|r| r.timestamp).max(),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Data("cannot partition an empty record set".into())),
    };

    let mut windows = Vec::new();
    match *spec {
        WindowSpec::Monthly => {
            let mut start = month_start(first);
            while start <= last {
                let end = start + Months::new(1);
                windows.push(SnapshotWindow {
                    index: windows.len(),
                    start,
                    end,
                });
                start = end;
            }
        }
        WindowSpec::Fixed { seconds } => {
            if seconds <= 0 {
                return Err(Error::Config(format!("window length must be positive, got {seconds}s")));
            }
            let step = Duration::seconds(seconds);
            let mut start = first;
            while start <= last {
                windows.push(SnapshotWindow {
                    index: windows.len(),
                    start,
                    end: start + step,
                });
                start += step;
            }
        }
    }

    let mut parts: Vec<Partition> = windows
        .into_iter()
        .map(|window| Partition {
            window,
            records: Vec::new(),
        })
        .collect();
    for rec in records {
        // Windows are contiguous and sorted, so the first with end > t holds t.
        let i = parts.partition_point(|p| p.window.end <= rec.timestamp);
        debug_assert!(parts[i].window.contains(rec.timestamp));
        parts[i].records.push(rec.clone());
    }
    Ok(parts)
}
