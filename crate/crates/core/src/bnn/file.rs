//! Headerless weight file.
//!
//! ```text
//! w1  h rows of d/8 bytes, row-major
//! b1  h x i8
//! w2  h x f32 LE
//! b2  1 x f32 LE
//! ```
//!
//! The shape is not stored; readers supply `d` and either `h` or infer it
//! from the length. For d=8192, h=32 the file is 32932 bytes.

use std::fs;
use std::path::Path;

use super::{ModelDims, ModelError, ModelWeights};

impl ModelWeights {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.file_size() as usize);
        out.extend_from_slice(self.w1_packed());
        out.extend(self.b1().iter().map(|b| *b as u8));
        for w in self.w2() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&self.b2().to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], dims: ModelDims) -> Result<Self, ModelError> {
        let dims = ModelDims::new(dims.input_bits, dims.hidden)?;
        let expected = dims.file_size();
        if bytes.len() as u64 != expected {
            return Err(ModelError::SizeMismatch {
                expected,
                found: bytes.len() as u64,
                input_bits: dims.input_bits,
                hidden: dims.hidden,
            });
        }
        let h = dims.hidden;
        let (w1, rest) = bytes.split_at(h * dims.row_bytes());
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(4 * h);
        let w2 = w2
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let b2 = f32::from_le_bytes(b2.try_into().unwrap());
        ModelWeights::new(dims, w1.to_vec(), b1.iter().map(|b| *b as i8).collect(), w2, b2)
    }
}

pub fn save_model(model: &ModelWeights, path: impl AsRef<Path>) -> Result<(), ModelError> {
    fs::write(path, model.to_bytes())?;
    Ok(())
}

/// Loads a file whose shape must be exactly `dims`.
pub fn load_model(path: impl AsRef<Path>, dims: ModelDims) -> Result<ModelWeights, ModelError> {
    ModelWeights::from_bytes(&fs::read(path)?, dims)
}

/// Loads a file of `input_bits` inputs, inferring the hidden width from its length.
pub fn load_model_bytes(bytes: &[u8], input_bits: usize) -> Result<ModelWeights, ModelError> {
    let dims = ModelDims::from_file_size(bytes.len() as u64, input_bits)?;
    ModelWeights::from_bytes(bytes, dims)
}
