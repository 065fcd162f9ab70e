//! User-level splits and the fold-in / held-out protocol for evaluation users.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::InteractionMatrix;
use crate::error::{Error, Result};

/// Train / test / validation over disjoint users and one item vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: InteractionMatrix,
    pub test: InteractionMatrix,
    pub validation: InteractionMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            test: 0.2,
            validation: 0.1,
        }
    }
}

/// Shuffle users with a seeded RNG; test takes `⌊test·U⌋`, validation
/// `⌊validation·U⌋`, train keeps the remainder.
pub fn split_users(matrix: &InteractionMatrix, ratios: SplitRatios, seed: u64) -> Result<DatasetSplits> {
    let sum = ratios.train + ratios.test + ratios.validation;
    if (sum - 1.0).abs() > 1e-9 || [ratios.train, ratios.test, ratios.validation].iter().any(|r| *r < 0.0) {
        return Err(Error::config(format!("split ratios must be non-negative and sum to 1, got {sum}")));
    }
    let n = matrix.n_users();
    if n < 10 {
        return Err(Error::Data(format!("need at least 10 users to split, have {n}")));
    }
    let mut users: Vec<usize> = (0..n).collect();
    users.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (ratios.test * n as f64 + 1e-9).floor() as usize;
    let n_val = (ratios.validation * n as f64 + 1e-9).floor() as usize;
    let (test, rest) = users.split_at(n_test);
    let (validation, train) = rest.split_at(n_val);
    Ok(DatasetSplits {
        train: matrix.select_users(train),
        test: matrix.select_users(test),
        validation: matrix.select_users(validation),
    })
}

/// Evaluation users whose items are split into a visible fold-in part and a
/// held-out part used as ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct HeldOutUsers {
    /// Visible items; these are masked when ranking.
    pub fold_in: InteractionMatrix,
    /// Relevant items per user, sorted.
    pub held_out: Vec<Vec<u32>>,
}

impl HeldOutUsers {
    pub fn n_users(&self) -> usize {
        self.fold_in.n_users()
    }
}

/// For every user with at least two items, hold out `max(1, ⌊fraction·n⌋)`
/// items chosen by a seeded shuffle. Users with fewer items keep everything
/// visible and end up with an empty relevant set.
pub fn holdout_split(users: &InteractionMatrix, fraction: f64, seed: u64) -> Result<HeldOutUsers> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("holdout fraction must lie in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut visible = Vec::with_capacity(users.n_users());
    let mut held_out = Vec::with_capacity(users.n_users());
    for row in users.rows() {
        let mut items = row.clone();
        items.shuffle(&mut rng);
        let n_hold = if items.len() >= 2 {
            ((fraction * items.len() as f64).floor() as usize).max(1)
        } else {
            0
        };
        let mut hold = items.split_off(items.len() - n_hold);
        hold.sort_unstable();
        items.sort_unstable();
        visible.push(items);
        held_out.push(hold);
    }
    Ok(HeldOutUsers {
        fold_in: InteractionMatrix::new(users.user_ids().to_vec(), users.item_ids().to_vec(), visible)?,
        held_out,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectConfig {
    /// Share of test users appended to the training data.
    pub fraction: f64,
    /// Share of each appended user's items held out as ground truth.
    pub holdout_fraction: f64,
}

impl Default for InjectConfig {
    fn default() -> Self {
        Self {
            fraction: 0.2,
            holdout_fraction: 0.2,
        }
    }
}

/// Real test users appended to a training matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthInjection {
    /// Indices (into the test matrix) of the selected users.
    pub test_users: Vec<usize>,
    /// Their fold-in rows and held-out ground truth.
    pub users: HeldOutUsers,
}

impl GroundTruthInjection {
    /// `base` followed by the injected fold-in rows, plus the row index of each
    /// injected user in that stacked matrix.
    pub fn append_to(&self, base: &InteractionMatrix) -> Result<(InteractionMatrix, Vec<usize>)> {
        let stacked = InteractionMatrix::stack(&[base, &self.users.fold_in])?;
        let rows = (base.n_users()..stacked.n_users()).collect();
        Ok((stacked, rows))
    }
}

/// Pick `⌊fraction·|test|⌋` test users by seeded shuffle and split each one's
/// items into fold-in (appended, masked at evaluation) and held-out parts.
pub fn inject_ground_truth(
    train: &InteractionMatrix,
    test: &InteractionMatrix,
    config: InjectConfig,
    seed: u64,
) -> Result<(InteractionMatrix, GroundTruthInjection)> {
    if !(config.fraction > 0.0 && config.fraction <= 1.0) {
        return Err(Error::config(format!(
            "injection fraction must lie in (0, 1], got {}",
            config.fraction
        )));
    }
    if train.item_ids() != test.item_ids() {
        return Err(Error::Data("train and test must share the item vocabulary".into()));
    }
    if train.user_ids().iter().any(|u| test.user_ids().contains(u)) {
        return Err(Error::Data("train and test user sets overlap".into()));
    }
    let n = (config.fraction * test.n_users() as f64 + 1e-9).floor() as usize;
    if n == 0 {
        return Err(Error::Data(format!(
            "fraction {} of {} test users selects nobody",
            config.fraction,
            test.n_users()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..test.n_users()).collect();
    order.shuffle(&mut rng);
    let mut picked = order[..n].to_vec();
    picked.sort_unstable();
    let selected = test.select_users(&picked);
    let users = holdout_split(&selected, config.holdout_fraction, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let injection = GroundTruthInjection {
        test_users: picked,
        users,
    };
    let (training, _) = injection.append_to(train)?;
    Ok((training, injection))
}
