//! `user_idx,item_idx` cell files and their JSON sidecars.

use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::InteractionMatrix;
use super::split::{DatasetSplits, SplitRatios};
use super::stats::{dataset_stats, DatasetStats};
use crate::error::{Error, Result};

pub const CELL_HEADER: &str = "user_idx,item_idx";

/// Cells sorted by `(user, item)` under a `user_idx,item_idx` header.
pub fn write_cells_csv(path: &Path, matrix: &InteractionMatrix) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{CELL_HEADER}").map_err(io)?;
    for (u, i) in matrix.cells() {
        writeln!(w, "{u},{i}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Read cells back over the given id vectors.
pub fn read_cells_csv(path: &Path, user_ids: Vec<String>, item_ids: Vec<String>) -> Result<InteractionMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut rows = vec![Vec::new(); user_ids.len()];
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parse = |idx: usize| -> Result<usize> {
            rec.get(idx)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::MalformedRow {
                    path: path.to_path_buf(),
                    line,
                    reason: "expected two non-negative integers".into(),
                })
        };
        let (u, i) = (parse(0)?, parse(1)?);
        if u >= rows.len() {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: format!("user index {u} out of range"),
            });
        }
        rows[u].push(i as u32);
    }
    InteractionMatrix::new(user_ids, item_ids, rows)
}

/// Sidecar written next to a split directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitsSidecar {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub item_ids: Vec<String>,
    pub train_users: Vec<String>,
    pub test_users: Vec<String>,
    pub validation_users: Vec<String>,
    pub stats: SplitStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub train: DatasetStats,
    pub test: DatasetStats,
    pub validation: DatasetStats,
}

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const SPLITS_SIDECAR: &str = "splits.json";

pub fn save_splits(dir: &Path, splits: &DatasetSplits, seed: u64, ratios: SplitRatios) -> Result<SplitsSidecar> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_cells_csv(&dir.join(TRAIN_FILE), &splits.train)?;
    write_cells_csv(&dir.join(TEST_FILE), &splits.test)?;
    write_cells_csv(&dir.join(VALIDATION_FILE), &splits.validation)?;
    let sidecar = SplitsSidecar {
        seed,
        ratios,
        item_ids: splits.train.item_ids().to_vec(),
        train_users: splits.train.user_ids().to_vec(),
        test_users: splits.test.user_ids().to_vec(),
        validation_users: splits.validation.user_ids().to_vec(),
        stats: SplitStats {
            train: dataset_stats(&splits.train),
            test: dataset_stats(&splits.test),
            validation: dataset_stats(&splits.validation),
        },
    };
    write_json(&dir.join(SPLITS_SIDECAR), &sidecar)?;
    Ok(sidecar)
}

pub fn load_splits(dir: &Path) -> Result<(DatasetSplits, SplitsSidecar)> {
    let sidecar: SplitsSidecar = read_json(&dir.join(SPLITS_SIDECAR))?;
    let items = sidecar.item_ids.clone();
    let splits = DatasetSplits {
        train: read_cells_csv(&dir.join(TRAIN_FILE), sidecar.train_users.clone(), items.clone())?,
        test: read_cells_csv(&dir.join(TEST_FILE), sidecar.test_users.clone(), items.clone())?,
        validation: read_cells_csv(&dir.join(VALIDATION_FILE), sidecar.validation_users.clone(), items)?,
    };
    Ok((splits, sidecar))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
