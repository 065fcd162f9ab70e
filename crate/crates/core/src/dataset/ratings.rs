//! Raw rating logs and binarization.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatingFormat {
    Csv,
    Tsv,
    /// `user::item::rating::timestamp`, as in the larger MovieLens dumps.
    MovielensDat,
}

impl std::str::FromStr for RatingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "tsv" => Ok(Self::Tsv),
            "movielens-dat" | "dat" => Ok(Self::MovielensDat),
            other => Err(Error::config(format!("unknown rating format {other:?}"))),
        }
    }
}

/// Zero-based column positions within a row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnOrder {
    pub user: usize,
    pub item: usize,
    pub rating: usize,
    pub timestamp: Option<usize>,
}

impl Default for ColumnOrder {
    fn default() -> Self {
        Self {
            user: 0,
            item: 1,
            rating: 2,
            timestamp: Some(3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub format: RatingFormat,
    pub columns: ColumnOrder,
    pub has_header: bool,
    /// Inclusive rating scale.
    pub scale: (f64, f64),
}

impl LoadOptions {
    pub fn new(format: RatingFormat) -> Self {
        Self {
            format,
            columns: ColumnOrder::default(),
            has_header: false,
            scale: (1.0, 5.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

/// Parsed rating log with duplicate `(user, item)` pairs collapsed to their
/// last occurrence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawRatings {
    records: Vec<RatingRecord>,
}

impl RawRatings {
    /// Collapse duplicates (last occurrence wins, kept at its own position).
    pub fn from_records(records: Vec<RatingRecord>) -> Self {
        let mut last: HashMap<(&str, &str), usize> = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            last.insert((r.user.as_str(), r.item.as_str()), i);
        }
        let keep: Vec<bool> = records
            .iter()
            .enumerate()
            .map(|(i, r)| last[&(r.user.as_str(), r.item.as_str())] == i)
            .collect();
        let records = records
            .into_iter()
            .zip(keep)
            .filter_map(|(r, k)| k.then_some(r))
            .collect();
        Self { records }
    }

    pub fn records(&self) -> &[RatingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub const DEFAULT_POSITIVE_THRESHOLD: f64 = 3.0;

/// `rating > 3` becomes a positive; everything else is dropped.
pub fn binarize(raw: &RawRatings) -> Vec<(String, String)> {
    binarize_above(raw, DEFAULT_POSITIVE_THRESHOLD)
}

pub fn binarize_above(raw: &RawRatings, threshold: f64) -> Vec<(String, String)> {
    raw.records
        .iter()
        .filter(|r| r.rating > threshold)
        .map(|r| (r.user.clone(), r.item.clone()))
        .collect()
}

pub fn load_interactions(path: &Path, opts: &LoadOptions) -> Result<RawRatings> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    match opts.format {
        RatingFormat::MovielensDat => {
            for (i, line) in text.lines().enumerate() {
                let line_no = i + 1;
                if (opts.has_header && i == 0) || line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split("::").map(str::trim).collect();
                records.push(parse_fields(&fields, opts, path, line_no)?);
            }
        }
        RatingFormat::Csv | RatingFormat::Tsv => {
            let delimiter = if opts.format == RatingFormat::Csv { b',' } else { b'\t' };
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(delimiter)
                .has_headers(opts.has_header)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            for row in reader.records() {
                let row = row.map_err(|e| Error::MalformedRow {
                    path: path.to_path_buf(),
                    line: e.position().map_or(0, |p| p.line() as usize),
                    reason: e.to_string(),
                })?;
                let line_no = row.position().map_or(0, |p| p.line() as usize);
                if row.iter().all(str::is_empty) {
                    continue;
                }
                let fields: Vec<&str> = row.iter().collect();
                records.push(parse_fields(&fields, opts, path, line_no)?);
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{} contains no ratings", path.display())));
    }
    Ok(RawRatings::from_records(records))
}

fn parse_fields(fields: &[&str], opts: &LoadOptions, path: &Path, line: usize) -> Result<RatingRecord> {
    let malformed = |reason: String| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let get = |idx: usize, name: &str| {
        fields
            .get(idx)
            .copied()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| malformed(format!("missing {name} column {idx}")))
    };
    let user = get(opts.columns.user, "user")?;
    let item = get(opts.columns.item, "item")?;
    let rating_text = get(opts.columns.rating, "rating")?;
    let rating: f64 = rating_text
        .parse()
        .map_err(|_| malformed(format!("rating {rating_text:?} is not a number")))?;
    let (lo, hi) = opts.scale;
    if !(lo..=hi).contains(&rating) {
        return Err(malformed(format!("rating {rating} outside scale [{lo}, {hi}]")));
    }
    let timestamp = match opts.columns.timestamp {
        Some(idx) => match fields.get(idx).filter(|s| !s.is_empty()) {
            Some(t) => Some(
                t.parse::<i64>()
                    .map_err(|_| malformed(format!("timestamp {t:?} is not an integer")))?,
            ),
            None => None,
        },
        None => None,
    };
    Ok(RatingRecord {
        user: user.to_string(),
        item: item.to_string(),
        rating,
        timestamp,
    })
}
