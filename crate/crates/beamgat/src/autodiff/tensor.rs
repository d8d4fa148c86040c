use std::sync::Arc;

use crate::autodiff::tape::NodeId;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor with shared, immutable storage.
///
/// `node` ties the tensor to a position on a [`crate::autodiff::Tape`]; it is
/// `None` for plain data and for anything produced while tracking is off.
#[derive(Debug, Clone)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    values: Arc<Vec<S>>,
    node: Option<NodeId>,
}

impl<S: Scalar> Tensor<S> {
    /// Construct from external data. Rejects shape/length mismatch and
    /// non-finite values.
    pub fn new(shape: &[usize], values: Vec<S>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                expect,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite tensor value {bad}")));
        }
        Ok(Self::from_parts(shape.to_vec(), values))
    }

    /// Internal constructor for op outputs; trusts the caller on finiteness.
    pub(crate) fn from_parts(shape: Vec<usize>, values: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor {
            shape,
            values: Arc::new(values),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![S::zero(); shape.iter().product()])
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        Self::from_parts(shape.to_vec(), vec![v; shape.iter().product()])
    }

    pub fn scalar(v: S) -> Self {
        Self::from_parts(vec![1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row count for matrices, length for vectors.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Column count; 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn get(&self, row: usize, col: usize) -> S {
        self.values[row * self.cols() + col]
    }

    /// Single value of a scalar tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.len(), 1);
        self.values[0]
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node
    }

    pub(crate) fn with_node(mut self, id: NodeId) -> Self {
        self.node = Some(id);
        self
    }

    /// Same data, no tape association.
    pub fn detached(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            values: Arc::clone(&self.values),
            node: None,
        }
    }

    /// Replace the storage with updated values, dropping any tape association.
    /// Used by the optimizer to produce the next parameter iterate.
    pub fn with_values(&self, values: Vec<S>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::Shape(format!(
                "replacement has {} values, tensor holds {}",
                values.len(),
                self.len()
            )));
        }
        Ok(Self::from_parts(self.shape.clone(), values))
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.values.as_ref().clone()
    }
}

impl<S: Scalar> PartialEq for Tensor<S> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && *self.values == *other.values
    }
}
