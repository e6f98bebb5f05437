//! Dense real tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value: a shape, a shared row-major buffer and,
//! when it was produced by a [`Tape`], the id of the node that recorded it.
//! Tensors without a node are constants; an op whose inputs are all constants
//! records nothing.
//!
//! ```
//! use ganlab::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
//! let loss = tape.reduce_sum(&tape.mul(&x, &x).unwrap());
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.wrt(&x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod tape;

use std::fmt;
use std::sync::Arc;

pub use gradcheck::{grad_check, grad_check_many};
pub use ops::{log_sum_exp, sigmoid, softmax, softplus};
pub use tape::{Gradients, NodeId, Tape};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch { op: &'static str, lhs: Shape, rhs: Shape },
    #[error("{op}: input outside the domain ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("backward requires a tape-tracked loss")]
    UntrackedLoss,
    #[error("data length {len} does not match shape {shape}")]
    BadLength { shape: Shape, len: usize },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Dimension sizes, outermost first. The empty shape is a scalar.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(pub Vec<usize>);

impl Shape {
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    /// Interprets the shape as `rows × cols` where cols is the last dimension.
    pub fn as_matrix(&self) -> (usize, usize) {
        match self.0.as_slice() {
            [] => (1, 1),
            [d] => (1, *d),
            dims => {
                let cols = *dims.last().unwrap();
                (dims[..dims.len() - 1].iter().product(), cols)
            }
        }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

impl From<&[usize]> for Shape {
    fn from(dims: &[usize]) -> Self {
        Shape(dims.to_vec())
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(dims: [usize; N]) -> Self {
        Shape(dims.to_vec())
    }
}

#[derive(Clone)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl Tensor {
    pub fn new(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != data.len() {
            return Err(TensorError::BadLength { shape, len: data.len() });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape(Vec::new()),
            data: Arc::new(vec![value]),
            node: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: Shape(vec![data.len()]),
            data: Arc::new(data),
            node: None,
        }
    }

    /// Builds a `rows × cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new([rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: Shape(vec![cols]),
                    rhs: Shape(vec![row.len()]),
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        let n = shape.numel();
        Tensor {
            shape,
            data: Arc::new(vec![0.0; n]),
            node: None,
        }
    }

    pub fn full(shape: impl Into<Shape>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.numel();
        Tensor {
            shape,
            data: Arc::new(vec![value; n]),
            node: None,
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor {
            shape: Shape(vec![n, n]),
            data: Arc::new(data),
            node: None,
        }
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>, node: Option<NodeId>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
            node,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        &self.shape.0
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Same value, detached from any tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.as_matrix().0
    }

    pub fn cols(&self) -> usize {
        self.shape.as_matrix().1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies out a contiguous range of rows as a constant.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor::from_parts(Shape(vec![idx.len(), c]), data, None)
    }

    /// Stacks matrices with equal column counts vertically (constants only).
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "vstack",
                    lhs: parts[0].shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            rows += p.rows();
            data.extend_from_slice(p.data());
        }
        Tensor::matrix(rows, cols, data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .field("data", &self.data)
            .finish()
    }
}

impl PartialEq for Tensor {
    /// Value equality; tape membership is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}
