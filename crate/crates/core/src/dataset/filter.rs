use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::matrix::InteractionMatrix;
use super::ratings::{binarize_above, RawRatings, DEFAULT_POSITIVE_THRESHOLD};
use crate::error::{Error, Result};

/// Iteratively drop users with fewer than `min_user` positives and items with
/// fewer than `min_item` positives until nothing changes. Surviving users and
/// items are re-indexed densely, keeping their relative order.
pub fn kcore_filter(matrix: &InteractionMatrix, min_user: usize, min_item: usize) -> Result<InteractionMatrix> {
    let mut user_alive = vec![true; matrix.n_users()];
    let mut item_alive = vec![true; matrix.n_items()];
    loop {
        let mut changed = false;
        let mut item_deg = vec![0usize; matrix.n_items()];
        for (u, row) in matrix.rows().iter().enumerate() {
            if !user_alive[u] {
                continue;
            }
            let deg = row.iter().filter(|&&i| item_alive[i as usize]).count();
            if deg < min_user {
                user_alive[u] = false;
                changed = true;
            } else {
                for &i in row {
                    if item_alive[i as usize] {
                        item_deg[i as usize] += 1;
                    }
                }
            }
        }
        for (i, alive) in item_alive.iter_mut().enumerate() {
            if *alive && item_deg[i] < min_item {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let item_map: Vec<Option<u32>> = {
        let mut next = 0u32;
        item_alive
            .iter()
            .map(|&a| {
                a.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let item_ids: Vec<String> = matrix
        .item_ids()
        .iter()
        .zip(&item_alive)
        .filter_map(|(id, &a)| a.then(|| id.clone()))
        .collect();
    let mut user_ids = Vec::new();
    let mut rows = Vec::new();
    for (u, row) in matrix.rows().iter().enumerate() {
        if user_alive[u] {
            user_ids.push(matrix.user_ids()[u].clone());
            rows.push(row.iter().filter_map(|&i| item_map[i as usize]).collect());
        }
    }
    if user_ids.is_empty() || item_ids.is_empty() {
        return Err(Error::Data(format!(
            "dataset too sparse: nothing survives a ({min_user}, {min_item})-core"
        )));
    }
    InteractionMatrix::new(user_ids, item_ids, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareConfig {
    pub positive_threshold: f64,
    pub min_user: usize,
    pub min_item: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            positive_threshold: DEFAULT_POSITIVE_THRESHOLD,
            min_user: 5,
            min_item: 5,
        }
    }
}

/// Result of binarize + k-core.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    /// Binary positives after k-core filtering.
    pub positives: InteractionMatrix,
    /// Every observed rating (any value) on the filtered user/item vocabulary.
    pub observed: InteractionMatrix,
}

pub fn prepare(raw: &RawRatings, config: &PrepareConfig) -> Result<PreparedDataset> {
    let pairs = binarize_above(raw, config.positive_threshold);
    if pairs.is_empty() {
        return Err(Error::Data("no ratings above the positive threshold".into()));
    }
    let binary = InteractionMatrix::from_pairs(pairs.iter().map(|(u, i)| (u.as_str(), i.as_str())));
    let positives = kcore_filter(&binary, config.min_user, config.min_item)?;

    let user_index: HashMap<&str, usize> = positives
        .user_ids()
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    let item_index: HashMap<&str, u32> = positives
        .item_ids()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i as u32))
        .collect();
    let mut rows = vec![Vec::new(); positives.n_users()];
    for r in raw.records() {
        if let (Some(&u), Some(&i)) = (user_index.get(r.user.as_str()), item_index.get(r.item.as_str())) {
            rows[u].push(i);
        }
    }
    let observed = InteractionMatrix::new(
        positives.user_ids().to_vec(),
        positives.item_ids().to_vec(),
        rows,
    )?;
    Ok(PreparedDataset { positives, observed })
}
