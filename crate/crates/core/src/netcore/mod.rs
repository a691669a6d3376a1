//! Minimal dense network core: a fixed MLP graph with hand-derived gradients,
//! the Adam optimizer, and a central-difference gradient checker.
//!
//! All arithmetic is `f64`. Matrices are stored `[out, in]` in standard
//! (row-major) layout so every parameter tensor can be viewed as one
//! contiguous slice; [`ParamSet`] exposes those slices to the optimizer,
//! the gradient checker and the checkpoint writer in declaration order.

mod adam;
mod gradcheck;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use mlp::{
    mlp_backward, mlp_forward, Activation, DenseLayer, ForwardTrace, LayerGrad, MlpGrads,
    MlpParams,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("unknown activation `{0}`")]
    UnknownActivation(String),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// A set of parameter tensors viewed as contiguous slices, in a fixed
/// declaration order.
pub trait ParamSet {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for s in self.slices() {
            out.extend_from_slice(s);
        }
        out
    }

    fn copy_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(NetError::DimensionMismatch {
                context: "flat parameter vector",
                expected: n,
                found: flat.len(),
            });
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            let len = s.len();
            s.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Slice lengths, used to check that two sets share a shape.
    fn shape_signature(&self) -> Vec<usize> {
        self.slices().iter().map(|s| s.len()).collect()
    }
}
