/// Flat view over a model's parameter tensors, in a fixed order.
///
/// Optimizers, gradient checks and checkpoints all walk parameters through
/// this trait, so a gradient container must list its tensors in the same
/// order and shapes as the model it belongs to.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// `(rows, cols)` per tensor; vectors are `(1, len)`.
    fn shapes(&self) -> Vec<(usize, usize)>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

impl Parameters for Vec<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        vec![(1, self.len())]
    }
}
