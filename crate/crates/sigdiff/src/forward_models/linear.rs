//! Affine observation operators: the embedding examples of the measure suite
//! and the per-pose matrix families backing the analytic testbeds.

use super::{FmError, ForwardModel, Result};
use crate::tensor::Tensor;

/// `A s + b`.
pub fn linear_map(signal: &Tensor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(a.matmul(signal)?.add(b)?)
}

/// A family of affine observation operators indexed by pose.
#[derive(Debug, Clone)]
pub struct LinearFamilyModel {
    ops: Vec<(Tensor, Tensor)>,
    signal_dim: usize,
    obs_dim: usize,
}

impl LinearFamilyModel {
    pub fn new(ops: Vec<(Tensor, Tensor)>) -> Result<Self> {
        if ops.is_empty() {
            return Err(FmError::Invalid("linear_family", "no operators".into()));
        }
        let (obs_dim, signal_dim) = {
            let a = &ops[0].0;
            if a.shape().len() != 2 {
                return Err(FmError::Invalid(
                    "linear_family",
                    format!("operator must be a matrix, got {:?}", a.shape()),
                ));
            }
            (a.shape()[0], a.shape()[1])
        };
        for (a, b) in &ops {
            if a.shape() != [obs_dim, signal_dim] || b.shape() != [obs_dim] {
                return Err(FmError::Invalid(
                    "linear_family",
                    format!("inconsistent operator shapes {:?} / {:?}", a.shape(), b.shape()),
                ));
            }
        }
        Ok(LinearFamilyModel {
            ops,
            signal_dim,
            obs_dim,
        })
    }

    /// Pure-matrix family with zero offsets; each row-major matrix is
    /// `obs_dim x signal_dim`.
    pub fn from_matrices(signal_dim: usize, obs_dim: usize, mats: &[Vec<f64>]) -> Result<Self> {
        let ops = mats
            .iter()
            .map(|m| {
                Ok((
                    Tensor::from_vec(vec![obs_dim, signal_dim], m.clone())?,
                    Tensor::zeros(&[obs_dim]),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ops)
    }

    pub fn n_poses(&self) -> usize {
        self.ops.len()
    }

    pub fn operator(&self, pose: usize) -> &(Tensor, Tensor) {
        &self.ops[pose]
    }
}

impl ForwardModel for LinearFamilyModel {
    type Params = usize;

    fn signal_shape(&self) -> Vec<usize> {
        vec![self.signal_dim]
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![self.obs_dim]
    }

    fn apply(&self, signal: &Tensor, phi: &usize) -> Result<Tensor> {
        self.check_signal(signal)?;
        if *phi >= self.ops.len() {
            return Err(FmError::Invalid(
                "linear_family",
                format!("pose {} out of {}", phi, self.ops.len()),
            ));
        }
        let (a, b) = &self.ops[*phi];
        linear_map(signal, a, b)
    }

    /// Poses are categorical, so they condition the nets as one-hot vectors.
    fn encode_params(&self, phi: &usize) -> Vec<f64> {
        let mut enc = vec![0.0; self.ops.len()];
        enc[*phi] = 1.0;
        enc
    }

    fn param_encoding_len(&self) -> usize {
        self.ops.len()
    }
}
