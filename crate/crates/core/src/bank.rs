//! Resident model bank.
//!
//! Every slot is loaded at construction and stays resident. Selecting a
//! slot for a packet is a bounds check plus an index; replacing a slot's
//! contents swaps one reference, so a reader always sees either the old
//! or the new parameters in full.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::{ArcSwap, Guard};
use serde::Serialize;
use thiserror::Error;

use crate::bnn::{load_model_bytes, ModelDims, ModelError, ModelWeights};
use crate::frame::Reg0Metadata;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("a bank needs at least one slot")]
    EmptyBank,
    #[error("slot {slot} has shape {found:?}, bank expects {expected:?}")]
    DimensionMismatch {
        slot: usize,
        expected: ModelDims,
        found: ModelDims,
    },
    #[error("slot id {slot_id} out of range for {slots} slots")]
    SlotOutOfRange { slot_id: u32, slots: usize },
    #[error("loading {path}: {source}")]
    Load {
        path: String,
        #[source]
        source: ModelError,
    },
}

/// Index of a resident slot, always `< K` for the bank that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct SlotIndex(pub usize);

/// Parameters installed in a slot, tagged with the bank generation at install time.
#[derive(Debug)]
pub struct Resident {
    pub model: ModelWeights,
    pub version: u64,
}

pub struct ModelBank {
    slots: Box<[ArcSwap<Resident>]>,
    dims: ModelDims,
    generation: AtomicU64,
}

impl std::fmt::Debug for ModelBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelBank")
            .field("slots", &self.slots.len())
            .field("dims", &self.dims)
            .field("generation", &self.generation())
            .finish()
    }
}

impl ModelBank {
    pub fn from_models(models: Vec<ModelWeights>) -> Result<Self, BankError> {
        let dims = models.first().ok_or(BankError::EmptyBank)?.dims();
        if let Some((slot, m)) = models.iter().enumerate().find(|(_, m)| m.dims() != dims) {
            return Err(BankError::DimensionMismatch {
                slot,
                expected: dims,
                found: m.dims(),
            });
        }
        let slots = models
            .into_iter()
            .map(|model| ArcSwap::from_pointee(Resident { model, version: 0 }))
            .collect();
        Ok(ModelBank {
            slots,
            dims,
            generation: AtomicU64::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn generation(&self) -> u64 {
        self.generation.load(Ordering::Acquire)
    }

    /// Sum of serialized slot sizes.
    pub fn footprint_bytes(&self) -> u64 {
        self.dims.file_size() * self.slots.len() as u64
    }

    /// Slot selection from metadata: identity map with one bounds check.
    #[inline]
    pub fn resolve(&self, meta: &Reg0Metadata) -> Result<SlotIndex, BankError> {
        self.resolve_id(meta.slot_id)
    }

    #[inline]
    pub fn resolve_id(&self, slot_id: u32) -> Result<SlotIndex, BankError> {
        let k = slot_id as usize;
        if k < self.slots.len() {
            Ok(SlotIndex(k))
        } else {
            Err(BankError::SlotOutOfRange {
                slot_id,
                slots: self.slots.len(),
            })
        }
    }

    /// The resident cell for `k`; does not touch the parameters.
    #[inline]
    pub fn cell(&self, k: SlotIndex) -> &ArcSwap<Resident> {
        &self.slots[k.0]
    }

    /// Current parameters of slot `k`.
    #[inline]
    pub fn slot(&self, k: SlotIndex) -> Guard<Arc<Resident>> {
        self.slots[k.0].load()
    }

    /// Owned handle to the current parameters of slot `k`.
    pub fn snapshot(&self, k: SlotIndex) -> Arc<Resident> {
        self.slots[k.0].load_full()
    }

    /// Replaces slot `k` and returns the new generation.
    pub fn swap_slot(&self, k: SlotIndex, model: ModelWeights) -> Result<u64, BankError> {
        if k.0 >= self.slots.len() {
            return Err(BankError::SlotOutOfRange {
                slot_id: k.0 as u32,
                slots: self.slots.len(),
            });
        }
        if model.dims() != self.dims {
            return Err(BankError::DimensionMismatch {
                slot: k.0,
                expected: self.dims,
                found: model.dims(),
            });
        }
        let version = self.generation.fetch_add(1, Ordering::AcqRel) + 1;
        self.slots[k.0].store(Arc::new(Resident { model, version }));
        Ok(version)
    }

    pub fn info(&self) -> BankInfo {
        BankInfo {
            slots: self.len(),
            input_bits: self.dims.input_bits,
            hidden: self.dims.hidden,
            generation: self.generation(),
            footprint_bytes: self.footprint_bytes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BankInfo {
    pub slots: usize,
    pub input_bits: usize,
    pub hidden: usize,
    pub generation: u64,
    pub footprint_bytes: u64,
}

/// Loads every file into a resident slot, in argument order.
///
/// Each file is read with `input_bits` inputs and a hidden width inferred
/// from its length; all slots must end up with the same shape.
pub fn load_bank<P: AsRef<Path>>(paths: &[P], input_bits: usize) -> Result<ModelBank, BankError> {
    if paths.is_empty() {
        return Err(BankError::EmptyBank);
    }
    let mut models = Vec::with_capacity(paths.len());
    for p in paths {
        let p = p.as_ref();
        let load = |e: ModelError| BankError::Load {
            path: p.display().to_string(),
            source: e,
        };
        let bytes = std::fs::read(p).map_err(|e| load(e.into()))?;
        models.push(load_model_bytes(&bytes, input_bits).map_err(load)?);
    }
    ModelBank::from_models(models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{infer_fast, save_model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn models(n: usize, dims: ModelDims) -> Vec<ModelWeights> {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        (0..n).map(|_| ModelWeights::random(dims, &mut rng)).collect()
    }

    #[test]
    fn footprints() {
        assert_eq!(
            ModelBank::from_models(models(2, ModelDims::H32))
                .unwrap()
                .footprint_bytes(),
            65864
        );
        assert_eq!(
            ModelBank::from_models(models(16, ModelDims::H32))
                .unwrap()
                .footprint_bytes(),
            526912
        );
    }

    #[test]
    fn load_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for (i, m) in models(2, ModelDims::H32).iter().enumerate() {
            let p = dir.path().join(format!("slot{i}.bin"));
            save_model(m, &p).unwrap();
            paths.push(p);
        }
        let bank = load_bank(&paths, 8192).unwrap();
        let on_disk: u64 = paths.iter().map(|p| std::fs::metadata(p).unwrap().len()).sum();
        assert_eq!(bank.footprint_bytes(), on_disk);
        assert_eq!(bank.generation(), 0);

        let h16 = dir.path().join("h16.bin");
        save_model(&models(1, ModelDims::new(8192, 16).unwrap())[0], &h16).unwrap();
        let err = load_bank(&[paths[0].clone(), h16], 8192).unwrap_err();
        assert!(matches!(err, BankError::DimensionMismatch { slot: 1, .. }));
        assert!(matches!(load_bank::<&Path>(&[], 8192), Err(BankError::EmptyBank)));
    }

    #[test]
    fn resolution_is_exact_over_valid_ids() {
        let dims = ModelDims::new(64, 4).unwrap();
        for k in [1usize, 2, 16] {
            let bank = ModelBank::from_models(models(k, dims)).unwrap();
            for id in 0..(2 * k as u32) {
                let res = bank.resolve(&Reg0Metadata::for_slot(id));
                if (id as usize) < k {
                    assert_eq!(res.unwrap(), SlotIndex(id as usize));
                } else {
                    assert!(matches!(res, Err(BankError::SlotOutOfRange { .. })));
                }
            }
        }
    }

    #[test]
    fn swap_replaces_and_bumps_generation() {
        let dims = ModelDims::new(64, 4).unwrap();
        let ms = models(3, dims);
        let bank = ModelBank::from_models(ms[..2].to_vec()).unwrap();
        let x = [0x5Au8; 8];
        let before = infer_fast(&bank.slot(SlotIndex(1)).model, &x).unwrap();
        assert_eq!(before, infer_fast(&ms[1], &x).unwrap());
        assert_eq!(bank.swap_slot(SlotIndex(1), ms[2].clone()).unwrap(), 1);
        let after = bank.slot(SlotIndex(1));
        assert_eq!(after.version, 1);
        assert_eq!(infer_fast(&after.model, &x).unwrap(), infer_fast(&ms[2], &x).unwrap());

        // identical content: score unchanged
        bank.swap_slot(SlotIndex(0), ms[0].clone()).unwrap();
        assert_eq!(
            infer_fast(&bank.slot(SlotIndex(0)).model, &x).unwrap(),
            infer_fast(&ms[0], &x).unwrap()
        );
        assert_eq!(bank.generation(), 2);
    }

    #[test]
    fn swap_guards() {
        let bank = ModelBank::from_models(models(2, ModelDims::H32)).unwrap();
        let small = models(1, ModelDims::new(8192, 16).unwrap()).pop().unwrap();
        assert!(matches!(
            bank.swap_slot(SlotIndex(1), small),
            Err(BankError::DimensionMismatch { .. })
        ));
        let ok = models(1, ModelDims::H32).pop().unwrap();
        assert!(matches!(
            bank.swap_slot(SlotIndex(2), ok),
            Err(BankError::SlotOutOfRange { .. })
        ));
        assert_eq!(bank.generation(), 0);
    }

    #[test]
    fn concurrent_swaps_never_tear() {
        let dims = ModelDims::H32;
        let ms = models(2, dims);
        let x: Vec<u8> = (0..1024).map(|i| (i * 37 % 251) as u8).collect();
        let expected = [infer_fast(&ms[0], &x).unwrap(), infer_fast(&ms[1], &x).unwrap()];
        assert_ne!(expected[0], expected[1]);
        let bank = ModelBank::from_models(vec![ms[0].clone()]).unwrap();
        let done = std::sync::atomic::AtomicBool::new(false);
        std::thread::scope(|s| {
            s.spawn(|| {
                for i in 0..200 {
                    bank.swap_slot(SlotIndex(0), ms[(i + 1) % 2].clone()).unwrap();
                    std::thread::yield_now();
                }
                done.store(true, Ordering::Release);
            });
            let mut last_version = 0;
            let mut reads = 0u64;
            while !done.load(Ordering::Acquire) || reads < 1000 {
                let r = bank.slot(SlotIndex(0));
                let score = infer_fast(&r.model, &x).unwrap();
                // a version identifies exactly one installed model
                assert_eq!(score, expected[(r.version % 2) as usize]);
                assert!(r.version >= last_version);
                last_version = r.version;
                reads += 1;
            }
        });
        assert_eq!(bank.generation(), 200);
    }
}
