//! Two-layer binary network: `h = sign(W1 x + b1)`, `y = W2 h + b2`.
//!
//! Inputs and first-layer weights are ±1 and stored packed, one bit per
//! value, with the same convention as [`crate::frame::PayloadView`]:
//! bit 1 is +1, bit 0 is -1, LSB-first inside each byte. Hidden
//! activations use `sign(0) = +1`.

mod file;
mod infer;

use std::io;

use rand::{Rng, RngCore};
use serde::Serialize;
use thiserror::Error;

pub use file::{load_model, load_model_bytes, save_model};
pub use infer::{infer_fast, infer_reference, preactivations_fast, preactivations_reference};

use crate::frame::INPUT_BITS;

/// Width of the hidden layer used by the resident slot family.
pub const H32: usize = 32;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid dimensions d={input_bits} h={hidden}: d must be a positive multiple of 8, h positive")]
    InvalidDims { input_bits: usize, hidden: usize },
    #[error("input has {found} bits, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{field} has {found} elements, expected {expected}")]
    FieldLength {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("weight file is {found} bytes, expected {expected} for d={input_bits} h={hidden}")]
    SizeMismatch {
        expected: u64,
        found: u64,
        input_bits: usize,
        hidden: usize,
    },
    #[error("file size {found} does not correspond to any hidden width for d={input_bits}")]
    UnknownWidth { found: u64, input_bits: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Shape of a model: `d` input bits, `h` hidden units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ModelDims {
    pub input_bits: usize,
    pub hidden: usize,
}

impl ModelDims {
    pub const H32: ModelDims = ModelDims {
        input_bits: INPUT_BITS,
        hidden: H32,
    };

    pub fn new(input_bits: usize, hidden: usize) -> Result<Self, ModelError> {
        if input_bits == 0 || !input_bits.is_multiple_of(8) || hidden == 0 {
            return Err(ModelError::InvalidDims { input_bits, hidden });
        }
        Ok(ModelDims { input_bits, hidden })
    }

    pub fn row_bytes(&self) -> usize {
        self.input_bits / 8
    }

    /// Serialized size: `h*d/8 + h + 4h + 4`.
    pub fn file_size(&self) -> u64 {
        (self.hidden * self.row_bytes() + self.hidden + 4 * self.hidden + 4) as u64
    }

    /// Recovers `h` from a weight file length for a known `d`.
    pub fn from_file_size(len: u64, input_bits: usize) -> Result<Self, ModelError> {
        let per_unit = (input_bits / 8 + 5) as u64;
        if input_bits == 0 || !input_bits.is_multiple_of(8) || len < 4 + per_unit || !(len - 4).is_multiple_of(per_unit)
        {
            return Err(ModelError::UnknownWidth { found: len, input_bits });
        }
        ModelDims::new(input_bits, ((len - 4) / per_unit) as usize)
    }
}

/// Inference output `y`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct Score(pub f64);

impl Score {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Structural per-packet operation counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostModel {
    /// One bounds-checked lookup regardless of model or bank size.
    pub selection_ops: u64,
    pub hidden_ops: u64,
    pub output_ops: u64,
}

/// Parameters of one resident slot.
#[derive(Clone, PartialEq)]
pub struct ModelWeights {
    dims: ModelDims,
    w1: Vec<u8>,
    b1: Vec<i8>,
    w2: Vec<f32>,
    b2: f32,
}

impl std::fmt::Debug for ModelWeights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelWeights")
            .field("dims", &self.dims)
            .field("b1", &self.b1)
            .field("w2", &self.w2)
            .field("b2", &self.b2)
            .finish_non_exhaustive()
    }
}

impl ModelWeights {
    pub fn new(dims: ModelDims, w1: Vec<u8>, b1: Vec<i8>, w2: Vec<f32>, b2: f32) -> Result<Self, ModelError> {
        let dims = ModelDims::new(dims.input_bits, dims.hidden)?;
        check_len("w1", dims.hidden * dims.row_bytes(), w1.len())?;
        check_len("b1", dims.hidden, b1.len())?;
        check_len("w2", dims.hidden, w2.len())?;
        Ok(ModelWeights { dims, w1, b1, w2, b2 })
    }

    /// Uniformly random weights; `w2` in [-1, 1), `b1` over the full i8 range.
    pub fn random<R: RngCore>(dims: ModelDims, rng: &mut R) -> Self {
        let mut w1 = vec![0u8; dims.hidden * dims.row_bytes()];
        rng.fill_bytes(&mut w1);
        let b1 = (0..dims.hidden).map(|_| rng.gen::<i8>()).collect();
        let w2 = (0..dims.hidden).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let b2 = rng.gen_range(-1.0f32..1.0);
        ModelWeights::new(dims, w1, b1, w2, b2).expect("consistent by construction")
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn input_bits(&self) -> usize {
        self.dims.input_bits
    }

    pub fn hidden(&self) -> usize {
        self.dims.hidden
    }

    /// Packed first-layer weights, row-major.
    pub fn w1_packed(&self) -> &[u8] {
        &self.w1
    }

    pub fn w1_row(&self, n: usize) -> &[u8] {
        let rb = self.dims.row_bytes();
        &self.w1[n * rb..(n + 1) * rb]
    }

    pub fn b1(&self) -> &[i8] {
        &self.b1
    }

    pub fn w2(&self) -> &[f32] {
        &self.w2
    }

    pub fn b2(&self) -> f32 {
        self.b2
    }

    pub fn file_size(&self) -> u64 {
        self.dims.file_size()
    }

    pub fn cost_model(&self) -> CostModel {
        cost_model(self.dims)
    }
}

pub fn cost_model(dims: ModelDims) -> CostModel {
    CostModel {
        selection_ops: 1,
        hidden_ops: (dims.input_bits * dims.hidden) as u64,
        output_ops: dims.hidden as u64,
    }
}

fn check_len(field: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected != found {
        return Err(ModelError::FieldLength { field, expected, found });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn footprint_formula() {
        assert_eq!(ModelDims::H32.file_size(), 32932);
        assert_eq!(ModelDims::new(64, 4).unwrap().file_size(), 56);
        assert_eq!(ModelDims::new(8, 1).unwrap().file_size(), 1 + 1 + 4 + 4);
    }

    #[test]
    fn width_recovered_from_size() {
        assert_eq!(ModelDims::from_file_size(32932, 8192).unwrap(), ModelDims::H32);
        assert_eq!(ModelDims::from_file_size(16468, 8192).unwrap().hidden, 16);
        assert!(ModelDims::from_file_size(32931, 8192).is_err());
        assert!(ModelDims::from_file_size(3, 8192).is_err());
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(ModelDims::new(12, 2).is_err());
        assert!(ModelDims::new(0, 2).is_err());
        assert!(ModelDims::new(8, 0).is_err());
    }

    #[test]
    fn constructor_checks_lengths() {
        let dims = ModelDims::new(16, 2).unwrap();
        let err = ModelWeights::new(dims, vec![0; 3], vec![0; 2], vec![0.0; 2], 0.0).unwrap_err();
        assert!(matches!(err, ModelError::FieldLength { field: "w1", .. }));
    }

    #[test]
    fn cost_counts() {
        let c = cost_model(ModelDims::H32);
        assert_eq!(c.hidden_ops, 262_144);
        assert_eq!(c.output_ops, 32);
        assert_eq!(cost_model(ModelDims::new(8, 1).unwrap()).hidden_ops, 8);
        assert_eq!(
            c.selection_ops,
            cost_model(ModelDims::new(64, 4).unwrap()).selection_ops
        );
    }
}
