use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{parse_timestamp, TransactionRecord};
use crate::{Error, Result};

/// A column selected by zero-based position or, with a header, by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl From<usize> for ColumnRef {
    fn from(i: usize) -> Self {
        ColumnRef::Index(i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub account: ColumnRef,
    pub merchant: ColumnRef,
    pub timestamp: ColumnRef,
    /// Without a category column every record gets an empty category.
    pub category: Option<ColumnRef>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            account: ColumnRef::Index(0),
            merchant: ColumnRef::Index(1),
            timestamp: ColumnRef::Index(2),
            category: Some(ColumnRef::Index(3)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormatConfig {
    pub delimiter: char,
    pub has_header: bool,
    pub columns: ColumnMap,
}

impl Default for FormatConfig {
    fn default() -> Self {
        Self {
            delimiter: ',',
            has_header: false,
            columns: ColumnMap::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// One-based line number in the input.
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub records: Vec<TransactionRecord>,
    pub errors: Vec<LineError>,
}

struct Resolved {
    account: usize,
    merchant: usize,
    timestamp: usize,
    category: Option<usize>,
}

impl Resolved {
    fn width(&self) -> usize {
        [self.account, self.merchant, self.timestamp]
            .into_iter()
            .chain(self.category)
            .max()
            .unwrap_or(0)
            + 1
    }
}

fn resolve(col: &ColumnRef, header: Option<&csv::StringRecord>, what: &str) -> Result<usize> {
    match col {
        ColumnRef::Index(i) => Ok(*i),
        ColumnRef::Name(name) => {
            let header = header.ok_or_else(|| {
                Error::Config(format!("{what} column `{name}` given by name but input has no header"))
            })?;
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Config(format!("missing required {what} column `{name}`")))
        }
    }
}

/// Parse delimiter-separated transactions.
///
/// Malformed lines become [`LineError`]s and ingestion carries on; a column
/// mapping that the input cannot satisfy at all is a configuration error.
pub fn ingest<R: Read>(input: R, format: &FormatConfig) -> Result<IngestReport> {
    if !format.delimiter.is_ascii() {
        return Err(Error::Config(format!("delimiter {:?} must be ASCII", format.delimiter)));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter as u8)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let mut rows = reader.records();
    let mut report = IngestReport::default();

    let header = if format.has_header {
        match rows.next() {
            Some(Ok(h)) => Some(h),
            Some(Err(e)) => return Err(Error::Config(format!("unreadable header: {e}"))),
            None => return Ok(report),
        }
    } else {
        None
    };
    let cols = &format.columns;
    let resolved = Resolved {
        account: resolve(&cols.account, header.as_ref(), "account")?,
        merchant: resolve(&cols.merchant, header.as_ref(), "merchant")?,
        timestamp: resolve(&cols.timestamp, header.as_ref(), "timestamp")?,
        category: cols
            .category
            .as_ref()
            .map(|c| resolve(c, header.as_ref(), "category"))
            .transpose()?,
    };
    let width = resolved.width();
    if let Some(h) = &header {
        if h.len() < width {
            return Err(Error::Config(format!(
                "header has {} columns but the mapping needs {width}",
                h.len()
            )));
        }
    }

    let mut checked_width = header.is_some();
    for row in rows {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                report.errors.push(LineError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if !checked_width {
            // The first data row fixes the table width when there is no header.
            if row.len() < width {
                return Err(Error::Config(format!(
                    "line {line}: {} columns but the mapping needs {width}",
                    row.len()
                )));
            }
            checked_width = true;
        }
        match parse_row(&row, &resolved) {
            Ok(rec) => report.records.push(rec),
            Err(message) => report.errors.push(LineError { line, message }),
        }
    }
    Ok(report)
}

fn parse_row(row: &csv::StringRecord, cols: &Resolved) -> Result<TransactionRecord, String> {
    let field = |i: usize, name: &str| {
        row.get(i)
            .ok_or_else(|| format!("missing {name} field (column {i})"))
    };
    let account = field(cols.account, "account")?;
    let merchant = field(cols.merchant, "merchant")?;
    let ts_raw = field(cols.timestamp, "timestamp")?;
    let category = match cols.category {
        Some(i) => field(i, "category")?,
        None => "",
    };
    if account.is_empty() {
        return Err("empty account id".into());
    }
    if merchant.is_empty() {
        return Err("empty merchant id".into());
    }
    let timestamp =
        parse_timestamp(ts_raw).ok_or_else(|| format!("unparseable timestamp `{ts_raw}`"))?;
    Ok(TransactionRecord {
        account_id: account.to_string(),
        merchant_id: merchant.to_string(),
        timestamp,
        category: category.to_string(),
    })
}
