use std::sync::Arc;

use crate::error::TensorError;

/// Dense row-major storage shared between tensors and tape closures.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    shape: Vec<usize>,
    pub(crate) values: Vec<f64>,
}

impl TensorData {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self, TensorError> {
        if let Some(axis) = shape.iter().position(|&e| e == 0) {
            return Err(TensorError::arg(
                "tensor",
                format!("extent of axis {axis} is zero; extents must be positive"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(TensorError::shape(
                "tensor",
                format!("shape {:?} implies {} values, got {}", shape, numel, values.len()),
            ));
        }
        Ok(TensorData { shape: shape.to_vec(), values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// N-dimensional real tensor. Values are immutable once constructed; gradients
/// live on the [`Tape`](crate::tape::Tape) a tensor is tracked by. Untracked
/// tensors are plain values and safe to share across threads.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub(crate) data: Arc<TensorData>,
    /// (tape id, node index) when tracked.
    pub(crate) node: Option<(u64, usize)>,
}

impl Tensor {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self, TensorError> {
        Ok(Tensor { data: Arc::new(TensorData::new(shape, values)?), node: None })
    }

    pub(crate) fn from_data(data: TensorData) -> Self {
        Tensor { data: Arc::new(data), node: None }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel]).expect("positive extents")
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![value; numel]).expect("positive extents")
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Tensor::new(&[], vec![value]).expect("scalar")
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, (0..numel).map(&mut f).collect()).expect("positive extents")
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn values(&self) -> &[f64] {
        self.data.values()
    }

    pub fn numel(&self) -> usize {
        self.values().len()
    }

    pub fn rank(&self) -> usize {
        self.shape().len()
    }

    /// Scalar contents of a rank-0 or single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "item() on multi-element tensor");
        self.values()[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// In-place access to the stored values, for parameter updates. Clones
    /// the storage if it is still shared with a tape. Only untracked tensors
    /// may be mutated.
    pub fn values_mut(&mut self) -> &mut [f64] {
        debug_assert!(self.node.is_none(), "mutating a tape-tracked tensor");
        &mut Arc::make_mut(&mut self.data).values
    }

    /// Checks every stored value is finite. NaN/Inf is an error state, never
    /// silently propagated into training.
    pub fn require_finite(&self, context: &str) -> Result<(), TensorError> {
        if self.values().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { context: context.to_string() })
        }
    }

    /// Value at a multi-index (row-major). Intended for tests and small maps.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(self.shape()).enumerate() {
            assert!(ix < ext, "index {ix} out of bounds on axis {i}");
            flat = flat * ext + ix;
        }
        self.values()[flat]
    }
}

pub(crate) fn same_shape(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
) -> Result<(), TensorError> {
    if a.shape() == b.shape() {
        return Ok(());
    }
    let axis = a
        .shape()
        .iter()
        .zip(b.shape())
        .position(|(x, y)| x != y)
        .unwrap_or_else(|| a.rank().min(b.rank()));
    Err(TensorError::shape(
        op,
        format!("axis {axis} differs: {:?} vs {:?}", a.shape(), b.shape()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_value_count_mismatch() {
        let err = Tensor::new(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("6 values"));
    }

    #[test]
    fn rejects_zero_extent() {
        let err = Tensor::new(&[2, 0], vec![]).unwrap_err();
        assert!(err.to_string().contains("axis 1"));
    }

    #[test]
    fn finiteness_is_detectable() {
        let t = Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap();
        assert!(t.require_finite("test").is_err());
        let t = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        assert!(t.require_finite("test").is_ok());
    }

    #[test]
    fn scalar_and_indexing() {
        let t = Tensor::scalar(3.5);
        assert_eq!(t.rank(), 0);
        assert_eq!(t.item(), 3.5);
        let m = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.at(&[1, 0]), 3.0);
    }
}
