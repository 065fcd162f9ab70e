//! Logistic matrix factorization trained by SGD with uniform negative sampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfHyper {
    pub factors: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub reg: f64,
    pub init_std: f64,
}

impl Default for MfHyper {
    fn default() -> Self {
        Self {
            factors: 64,
            learning_rate: 0.05,
            epochs: 30,
            negatives: 4,
            reg: 1e-3,
            init_std: 0.1,
        }
    }
}

/// `score(u, i) = g + b_u + b_i + p_u · q_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct MfModel {
    factors: usize,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
    global_bias: f64,
}

impl MfModel {
    fn init<R: Rng + ?Sized>(n_users: usize, n_items: usize, hyper: &MfHyper, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, hyper.init_std).map_err(|e| Error::config(format!("init_std: {e}")))?;
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(rng)).collect() };
        Ok(Self {
            factors: hyper.factors,
            user_factors: draw(n_users * hyper.factors),
            item_factors: draw(n_items * hyper.factors),
            user_bias: vec![0.0; n_users],
            item_bias: vec![0.0; n_items],
            global_bias: 0.0,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_bias.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_bias.len()
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    fn p(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.factors..(u + 1) * self.factors]
    }

    fn q(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.factors..(i + 1) * self.factors]
    }

    pub fn score(&self, user: usize, item: usize) -> f64 {
        let dot: f64 = self.p(user).iter().zip(self.q(item)).map(|(a, b)| a * b).sum();
        self.global_bias + self.user_bias[user] + self.item_bias[item] + dot
    }

    pub fn user_scores(&self, user: usize) -> Vec<f64> {
        (0..self.n_items()).map(|i| self.score(user, i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.global_bias.is_finite()
            && [&self.user_factors, &self.item_factors, &self.user_bias, &self.item_bias]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// One SGD step on `−log σ(±score)`; returns the pre-update loss.
    fn sgd(&mut self, u: usize, i: usize, label: f64, lr: f64, reg: f64) -> f64 {
        let s = self.score(u, i);
        let p = sigmoid(s);
        let g = p - label;
        let f = self.factors;
        let (pu, qi) = (u * f, i * f);
        for j in 0..f {
            let a = self.user_factors[pu + j];
            let b = self.item_factors[qi + j];
            self.user_factors[pu + j] -= lr * (g * b + reg * a);
            self.item_factors[qi + j] -= lr * (g * a + reg * b);
        }
        self.user_bias[u] -= lr * (g + reg * self.user_bias[u]);
        self.item_bias[i] -= lr * (g + reg * self.item_bias[i]);
        self.global_bias -= lr * g;
        if label > 0.5 {
            softplus(-s)
        } else {
            softplus(s)
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Debug)]
pub struct MfFit {
    pub model: MfModel,
    /// Mean per-sample logistic loss of each epoch.
    pub losses: Vec<f64>,
}

/// SGD over shuffled positives; each positive is followed by `negatives`
/// uniformly drawn items the user has not interacted with.
pub fn train_mf<R: Rng + ?Sized>(matrix: &InteractionMatrix, hyper: &MfHyper, rng: &mut R) -> Result<MfFit> {
    if matrix.nnz() == 0 {
        return Err(Error::Data("cannot fit matrix factorization to an empty matrix".into()));
    }
    if hyper.factors == 0 || hyper.learning_rate <= 0.0 {
        return Err(Error::config("MF needs at least one factor and a positive learning rate"));
    }
    let n_items = matrix.n_items();
    let mut model = MfModel::init(matrix.n_users(), n_items, hyper, rng)?;
    let mut cells: Vec<(usize, u32)> = matrix.cells().collect();
    let mut losses = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        cells.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for &(u, i) in &cells {
            total += model.sgd(u, i as usize, 1.0, hyper.learning_rate, hyper.reg);
            count += 1;
            let row = matrix.row(u);
            if row.len() == n_items {
                continue;
            }
            for _ in 0..hyper.negatives {
                let neg = loop {
                    let j = rng.random_range(0..n_items as u32);
                    if row.binary_search(&j).is_err() {
                        break j;
                    }
                };
                total += model.sgd(u, neg as usize, 0.0, hyper.learning_rate, hyper.reg);
                count += 1;
            }
        }
        if !model.is_finite() {
            return Err(Error::Training(format!("matrix factorization diverged in epoch {epoch}")));
        }
        losses.push(total / count as f64);
    }
    Ok(MfFit { model, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn planted(seed: u64) -> InteractionMatrix {
        // Two user groups × two item groups; each user sees 70% of their block.
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..40)
            .map(|u| {
                let base = if u < 20 { 0 } else { 15 };
                (0..15u32).filter(|_| r.random_bool(0.7)).map(|i| i + base).collect()
            })
            .collect();
        InteractionMatrix::from_rows(30, rows).unwrap()
    }

    fn auc(model: &MfModel, truth: &InteractionMatrix) -> f64 {
        // Pairs of (block item, off-block item) per user.
        let mut good = 0.0;
        let mut total = 0.0;
        for u in 0..truth.n_users() {
            let block: Vec<usize> = if u < 20 { (0..15).collect() } else { (15..30).collect() };
            let other: Vec<usize> = (0..30).filter(|i| !block.contains(i)).collect();
            for &p in &block {
                for &n in &other {
                    let (a, b) = (model.score(u, p), model.score(u, n));
                    good += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
                    total += 1.0;
                }
            }
        }
        good / total
    }

    #[test]
    fn planted_blocks_are_separated() {
        let data = planted(1);
        let fit = train_mf(&data, &MfHyper { factors: 8, epochs: 30, ..MfHyper::default() }, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let a = auc(&fit.model, &data);
        assert!(a > 0.95, "AUC {a}");
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let data = planted(3);
        let hyper = MfHyper { epochs: 0, factors: 4, ..MfHyper::default() };
        let fit = train_mf(&data, &hyper, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let init = MfModel::init(40, 30, &hyper, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(fit.model, init);
        assert!(fit.losses.is_empty());
    }

    #[test]
    fn deterministic_and_loss_decreases() {
        let data = planted(5);
        let hyper = MfHyper { factors: 8, epochs: 5, ..MfHyper::default() };
        let a = train_mf(&data, &hyper, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let b = train_mf(&data, &hyper, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.losses.windows(2).all(|w| w[1] < w[0]), "{:?}", a.losses);
    }

    #[test]
    fn rejects_empty_and_reports_divergence() {
        let empty = InteractionMatrix::from_rows(3, vec![vec![], vec![]]).unwrap();
        assert!(train_mf(&empty, &MfHyper::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let hyper = MfHyper { learning_rate: 1e200, reg: 1e200, epochs: 2, factors: 2, ..MfHyper::default() };
        let err = train_mf(&planted(7), &hyper, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
    }
}
