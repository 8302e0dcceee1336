//! Dense n-dimensional `f64` arrays with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a row-major flat buffer plus a shape. Tensors are immutable
//! after construction; operations return new tensors. When an operand carries
//! a handle into a [`Tape`], the operation is recorded so that
//! [`Tape::backward`] can later accumulate gradients for every leaf.
//!
//! Broadcasting is restricted to leading axes of extent 1 (a `[1, n]` operand
//! may stretch against `[m, n]`, a scalar against anything). Anything fancier
//! is rejected with both shapes in the error.

mod ops;
pub mod tape;

pub use tape::{Gradients, Tape};

use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shapes do not conform: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: operands are recorded on different tapes")]
    TapeMismatch { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: tensor is not recorded on this tape")]
    NotOnTape { op: &'static str },
    #[error("{op}: index {index} out of bounds for extent {extent}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major array of 64-bit reals, optionally recorded on a tape.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<(Tape, usize)>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let head: Vec<f64> = self.data.iter().take(8).copied().collect();
        let ell = if self.data.len() > 8 { ", ..." } else { "" };
        write!(
            f,
            "Tensor{:?}{:?}{}{}",
            self.shape,
            head,
            ell,
            if self.node.is_some() { " (traced)" } else { "" }
        )
    }
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Invalid {
                op: "from_vec",
                msg: format!("shape {:?} wants {} elements, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor {
            shape,
            data: Rc::new(data),
            node: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: Rc::new(vec![v]),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(vec![0.0; n]),
            node: None,
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(vec![v; n]),
            node: None,
        }
    }

    /// Standard-normal entries drawn from `rng`.
    pub fn randn<R: rand::Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| StandardNormal.sample(rng))
            .collect::<Vec<f64>>();
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(data),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The single element of a scalar (or one-element) tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Same values, no tape handle.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
        }
    }

    pub fn is_traced(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node_handle(&self) -> Option<(Tape, usize)> {
        self.node.clone()
    }

    pub(crate) fn with_node(mut self, tape: Tape, id: usize) -> Tensor {
        self.node = Some((tape, id));
        self
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Exact elementwise equality (shape and every value).
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape && self.data.iter().zip(other.data.iter()).all(|(a, b)| a == b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0]).is_err());
        let t = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.numel(), 4);
    }

    #[test]
    fn untaped_tensor_never_traced() {
        let t = Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(!t.is_traced());
        let u = t.exp().unwrap();
        assert!(!u.is_traced());
    }
}
