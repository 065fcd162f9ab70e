use serde::{Deserialize, Serialize};

use super::matrix::InteractionMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub sparsity: f64,
}

pub fn dataset_stats(matrix: &InteractionMatrix) -> DatasetStats {
    DatasetStats {
        users: matrix.n_users(),
        items: matrix.n_items(),
        ratings: matrix.nnz(),
        sparsity: matrix.sparsity(),
    }
}
