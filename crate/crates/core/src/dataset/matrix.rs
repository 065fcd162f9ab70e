use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

/// Sparse binary users × items matrix.
///
/// Each row holds the sorted, deduplicated item indices the user interacted
/// with. Token vectors map dense indices back to the original identifiers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionMatrix {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    rows: Vec<Vec<u32>>,
}

/// Numeric tokens sort numerically and before non-numeric ones.
pub fn token_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

impl InteractionMatrix {
    pub fn new(user_ids: Vec<String>, item_ids: Vec<String>, mut rows: Vec<Vec<u32>>) -> Result<Self> {
        if user_ids.len() != rows.len() {
            return Err(Error::Data(format!(
                "{} user ids for {} rows",
                user_ids.len(),
                rows.len()
            )));
        }
        let n_items = item_ids.len();
        for (u, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last as usize >= n_items {
                    return Err(Error::Data(format!(
                        "user {u} references item {last} but only {n_items} items exist"
                    )));
                }
            }
        }
        Ok(Self {
            user_ids,
            item_ids,
            rows,
        })
    }

    /// Rows with positional ids (`"0"`, `"1"`, ...) for users and items.
    pub fn from_rows(n_items: usize, rows: Vec<Vec<u32>>) -> Result<Self> {
        let user_ids = (0..rows.len()).map(|u| u.to_string()).collect();
        let item_ids = (0..n_items).map(|i| i.to_string()).collect();
        Self::new(user_ids, item_ids, rows)
    }

    /// Rows over an existing item vocabulary, with generated user ids.
    pub fn with_items(item_ids: Vec<String>, user_prefix: &str, rows: Vec<Vec<u32>>) -> Result<Self> {
        let user_ids = (0..rows.len()).map(|u| format!("{user_prefix}{u}")).collect();
        Self::new(user_ids, item_ids, rows)
    }

    /// Build from token pairs; both index maps follow [`token_order`].
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)> + Clone) -> Self {
        let mut users: Vec<&str> = pairs.clone().into_iter().map(|p| p.0).collect::<BTreeSet<_>>().into_iter().collect();
        let mut items: Vec<&str> = pairs.clone().into_iter().map(|p| p.1).collect::<BTreeSet<_>>().into_iter().collect();
        users.sort_by(|a, b| token_order(a, b));
        items.sort_by(|a, b| token_order(a, b));
        let user_index: std::collections::HashMap<&str, usize> =
            users.iter().enumerate().map(|(i, u)| (*u, i)).collect();
        let item_index: std::collections::HashMap<&str, u32> =
            items.iter().enumerate().map(|(i, t)| (*t, i as u32)).collect();
        let mut rows = vec![Vec::new(); users.len()];
        for (u, i) in pairs {
            rows[user_index[u]].push(item_index[i]);
        }
        Self::new(
            users.into_iter().map(String::from).collect(),
            items.into_iter().map(String::from).collect(),
            rows,
        )
        .expect("indices are in range by construction")
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `1 − nnz / (users · items)`; an empty matrix is fully sparse.
    pub fn sparsity(&self) -> f64 {
        let cells = self.n_users() * self.n_items();
        if cells == 0 {
            1.0
        } else {
            1.0 - self.nnz() as f64 / cells as f64
        }
    }

    pub fn row(&self, user: usize) -> &[u32] {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn contains(&self, user: usize, item: u32) -> bool {
        self.rows[user].binary_search(&item).is_ok()
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_items()];
        for row in &self.rows {
            for &i in row {
                deg[i as usize] += 1;
            }
        }
        deg
    }

    /// `(user, item)` pairs in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&i| (u, i)))
    }

    /// Subset of users in the given order; the item vocabulary is unchanged.
    pub fn select_users(&self, users: &[usize]) -> Self {
        Self {
            user_ids: users.iter().map(|&u| self.user_ids[u].clone()).collect(),
            item_ids: self.item_ids.clone(),
            rows: users.iter().map(|&u| self.rows[u].clone()).collect(),
        }
    }

    /// Concatenate users of matrices sharing one item vocabulary.
    pub fn stack(parts: &[&InteractionMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Data("nothing to stack".into()))?;
        if parts.iter().any(|p| p.item_ids != first.item_ids) {
            return Err(Error::Data("stacked matrices must share the item vocabulary".into()));
        }
        Ok(Self {
            user_ids: parts.iter().flat_map(|p| p.user_ids.iter().cloned()).collect(),
            item_ids: first.item_ids.clone(),
            rows: parts.iter().flat_map(|p| p.rows.iter().cloned()).collect(),
        })
    }

    /// Dense 0/1 rows for the given users.
    pub fn dense_rows(&self, users: &[usize]) -> DenseMatrix {
        let n_items = self.n_items();
        let mut out = DenseMatrix::zeros(users.len(), n_items);
        for (r, &u) in users.iter().enumerate() {
            let row = out.row_mut(r);
            for &i in &self.rows[u] {
                row[i as usize] = 1.0;
            }
        }
        out
    }

    pub fn with_user_ids(mut self, user_ids: Vec<String>) -> Result<Self> {
        if user_ids.len() != self.rows.len() {
            return Err(Error::Data("user id count mismatch".into()));
        }
        self.user_ids = user_ids;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_pairs_orders_tokens_naturally() {
        let pairs = [("10", "b"), ("2", "a"), ("2", "b"), ("x", "a")];
        let m = InteractionMatrix::from_pairs(pairs.iter().map(|(u, i)| (*u, *i)));
        assert_eq!(m.user_ids(), &["2", "10", "x"]);
        assert_eq!(m.item_ids(), &["a", "b"]);
        assert_eq!(m.row(0), &[0, 1]);
        assert_eq!(m.nnz(), 4);
    }

    #[test]
    fn sparsity_of_empty_and_full() {
        let empty = InteractionMatrix::from_rows(5, vec![]).unwrap();
        assert_eq!(empty.sparsity(), 1.0);
        let full = InteractionMatrix::from_rows(2, vec![vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(full.sparsity(), 0.0);
    }

    #[test]
    fn out_of_range_item_rejected() {
        assert!(InteractionMatrix::from_rows(2, vec![vec![2]]).is_err());
    }

    #[test]
    fn stack_requires_same_vocabulary() {
        let a = InteractionMatrix::from_rows(3, vec![vec![0]]).unwrap();
        let b = InteractionMatrix::from_rows(4, vec![vec![0]]).unwrap();
        assert!(InteractionMatrix::stack(&[&a, &b]).is_err());
        let c = InteractionMatrix::stack(&[&a, &a]).unwrap();
        assert_eq!(c.n_users(), 2);
    }

    #[test]
    fn dense_rows_are_binary() {
        let m = InteractionMatrix::from_rows(4, vec![vec![1, 3], vec![]]).unwrap();
        let d = m.dense_rows(&[0, 1]);
        assert_eq!(d.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(d.row(1), &[0.0; 4]);
    }
}
