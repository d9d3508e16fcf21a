//! Transactions, snapshot windows and homogeneous pair projections.

mod ingest;
mod project;
mod window;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use ingest::{ingest, ColumnRef, ColumnMap, FormatConfig, IngestReport, LineError};
pub use project::{project, read_pairs, write_pairs, PairMultiset};
pub use window::{window_partition, Partition, SnapshotWindow, WindowSpec};

use crate::{Error, Result};

/// One account→merchant interaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub account_id: String,
    pub merchant_id: String,
    pub timestamp: DateTime<Utc>,
    pub category: String,
}

impl TransactionRecord {
    pub fn new(
        account_id: impl Into<String>,
        merchant_id: impl Into<String>,
        timestamp: DateTime<Utc>,
        category: impl Into<String>,
    ) -> Result<Self> {
        let account_id = account_id.into();
        let merchant_id = merchant_id.into();
        if account_id.is_empty() || merchant_id.is_empty() {
            return Err(Error::Data("account and merchant ids must be non-empty".into()));
        }
        Ok(Self {
            account_id,
            merchant_id,
            timestamp,
            category: category.into(),
        })
    }

    /// The id of this record's endpoint of the given type.
    pub fn node(&self, node_type: NodeType) -> &str {
        match node_type {
            NodeType::Merchant => &self.merchant_id,
            NodeType::Account => &self.account_id,
        }
    }
}

/// Which side of the bipartite graph a projection keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Merchant,
    Account,
}

impl NodeType {
    /// The opposite side, whose nodes act as bridges.
    pub fn bridge(self) -> NodeType {
        match self {
            NodeType::Merchant => NodeType::Account,
            NodeType::Account => NodeType::Merchant,
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeType::Merchant => "merchant",
            NodeType::Account => "account",
        })
    }
}

impl FromStr for NodeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "merchant" => Ok(NodeType::Merchant),
            "account" => Ok(NodeType::Account),
            other => Err(Error::Config(format!("unknown node type `{other}`"))),
        }
    }
}

/// CSV with header `account_id,merchant_id,timestamp,category` and RFC 3339
/// UTC timestamps, in the default ingest column order.
pub fn write_records(path: &std::path::Path, records: &[TransactionRecord]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut put = |row: [&str; 4]| w.write_record(row).map_err(|e| io(e.into()));
    put(["account_id", "merchant_id", "timestamp", "category"])?;
    for r in records {
        let ts = r.timestamp.format("%Y-%m-%dT%H:%M:%SZ").to_string();
        put([&r.account_id, &r.merchant_id, &ts, &r.category])?;
    }
    w.flush().map_err(io)
}

/// Parse a timestamp in RFC 3339, `YYYY-MM-DD HH:MM:SS` (UTC) or bare
/// `YYYY-MM-DD` (midnight UTC) form.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    if let Ok(t) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Some(t.and_utc());
    }
    chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
}
