//! Seeded synthetic traffic with class-conditional payload bit statistics.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bnn::{ModelDims, ModelWeights};
use crate::frame::{INPUT_BITS, PAYLOAD_LEN};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("degenerate dataset parameters: {0}")]
    DegenerateParams(&'static str),
    #[error("dataset file is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Label {
    Benign = 0,
    Malicious = 1,
}

impl Label {
    pub fn is_malicious(self) -> bool {
        self == Label::Malicious
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Sample {
    pub payload: Box<[u8; PAYLOAD_LEN]>,
    pub label: Label,
}

impl std::fmt::Debug for Sample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sample")
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

/// How labels relate to payload bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Concept {
    /// `informative_bits` seeded positions each favour one bit value; a
    /// malicious payload takes the favoured value with probability
    /// `0.5 + bias`, a benign one with `0.5 - bias`. Other bits are uniform.
    /// A `camouflaged` fraction of malicious payloads only reaches
    /// `0.5 - bias / 4` and overlaps the benign population, which is what
    /// makes recall and precision trade against each other.
    Biased {
        informative_bits: usize,
        bias: f64,
        camouflaged: f64,
    },
    /// The label is copied into payload bit `bit`; every other bit is a
    /// seeded background pattern shared by all samples.
    PlantedBit { bit: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetParams {
    pub seed: u64,
    pub samples: usize,
    /// Probability that a sample is malicious.
    pub malicious_prior: f64,
    pub concept: Concept,
    /// Reject parameters under which the two classes are identically distributed.
    pub require_separable: bool,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            seed: 1,
            samples: 2000,
            malicious_prior: 0.5,
            concept: Concept::Biased {
                informative_bits: 1024,
                bias: 0.075,
                camouflaged: 0.15,
            },
            require_separable: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub params: DatasetParams,
    pub samples: Vec<Sample>,
}

/// Disjoint train / validation partition.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
}

impl SyntheticDataset {
    /// Seeded shuffle, then the first `val_fraction` of samples become validation.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Split {
        split_samples(&self.samples, val_fraction, seed)
    }

    pub fn malicious_count(&self) -> usize {
        self.samples.iter().filter(|s| s.label.is_malicious()).count()
    }
}

const SPLIT_SALT: u64 = 0x5eed_5011;

/// Disjoint seeded partition of any sample list.
pub fn split_samples(samples: &[Sample], val_fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let n_val = ((samples.len() as f64) * val_fraction.clamp(0.0, 1.0)).round() as usize;
    let (v, t) = idx.split_at(n_val);
    let mut v = v.to_vec();
    let mut t = t.to_vec();
    v.sort_unstable();
    t.sort_unstable();
    Split {
        train: t.iter().map(|&i| samples[i].clone()).collect(),
        validation: v.iter().map(|&i| samples[i].clone()).collect(),
    }
}

pub fn generate_dataset(params: &DatasetParams) -> Result<SyntheticDataset, DataError> {
    if !(params.malicious_prior > 0.0 && params.malicious_prior < 1.0) {
        return Err(DataError::DegenerateParams("malicious prior must lie in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let samples = match params.concept {
        Concept::Biased {
            informative_bits,
            bias,
            camouflaged,
        } => {
            if !(0.0..=0.5).contains(&bias) || informative_bits > INPUT_BITS {
                return Err(DataError::DegenerateParams(
                    "bias must be in [0, 0.5] and positions <= 8192",
                ));
            }
            if !(0.0..=1.0).contains(&camouflaged) {
                return Err(DataError::DegenerateParams("camouflaged fraction must be in [0, 1]"));
            }
            if params.require_separable && (bias == 0.0 || informative_bits == 0) {
                return Err(DataError::DegenerateParams("class distributions are identical"));
            }
            let mut positions: Vec<usize> = (0..INPUT_BITS).collect();
            positions.shuffle(&mut rng);
            positions.truncate(informative_bits);
            let favoured: Vec<bool> = positions.iter().map(|_| rng.gen()).collect();
            (0..params.samples)
                .map(|_| {
                    let malicious = rng.gen_bool(params.malicious_prior);
                    let mut payload = Box::new([0u8; PAYLOAD_LEN]);
                    rng.fill_bytes(&mut payload[..]);
                    let p_fav = match (malicious, rng.gen_bool(camouflaged)) {
                        (true, false) => 0.5 + bias,
                        (true, true) => 0.5 - 0.25 * bias,
                        (false, _) => 0.5 - bias,
                    };
                    for (&pos, &fav) in positions.iter().zip(&favoured) {
                        let bit = if rng.gen_bool(p_fav) { fav } else { !fav };
                        set_bit(&mut payload, pos, bit);
                    }
                    Sample {
                        payload,
                        label: label_of(malicious),
                    }
                })
                .collect::<Vec<_>>()
        }
        Concept::PlantedBit { bit } => {
            if bit >= INPUT_BITS {
                return Err(DataError::DegenerateParams("planted bit outside the payload"));
            }
            let mut background = [0u8; PAYLOAD_LEN];
            rng.fill_bytes(&mut background);
            (0..params.samples)
                .map(|_| {
                    let malicious = rng.gen_bool(params.malicious_prior);
                    let mut payload = Box::new(background);
                    set_bit(&mut payload, bit, malicious);
                    Sample {
                        payload,
                        label: label_of(malicious),
                    }
                })
                .collect()
        }
    };
    let positives = samples.iter().filter(|s| s.label.is_malicious()).count();
    if positives == 0 || positives == samples.len() {
        return Err(DataError::DegenerateParams("generated data contains a single class"));
    }
    Ok(SyntheticDataset {
        params: params.clone(),
        samples,
    })
}

fn label_of(malicious: bool) -> Label {
    if malicious {
        Label::Malicious
    } else {
        Label::Benign
    }
}

fn set_bit(payload: &mut [u8; PAYLOAD_LEN], idx: usize, value: bool) {
    let mask = 1u8 << (idx % 8);
    if value {
        payload[idx / 8] |= mask;
    } else {
        payload[idx / 8] &= !mask;
    }
}

fn get_bit(payload: &[u8; PAYLOAD_LEN], idx: usize) -> bool {
    (payload[idx / 8] >> (idx % 8)) & 1 == 1
}

/// Writes `u64 LE count` followed by `count` records of `label u8, payload [u8; 1024]`.
pub fn write_dataset(path: impl AsRef<Path>, samples: &[Sample]) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(8 + samples.len() * (1 + PAYLOAD_LEN));
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        out.push(s.label as u8);
        out.extend_from_slice(&s.payload[..]);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>, DataError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(DataError::Malformed("missing count".into()));
    }
    let count = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != count.saturating_mul(1 + PAYLOAD_LEN) {
        return Err(DataError::Malformed(format!(
            "{count} records need {} bytes, found {}",
            count * (1 + PAYLOAD_LEN),
            body.len()
        )));
    }
    body.chunks_exact(1 + PAYLOAD_LEN)
        .map(|c| {
            let label = match c[0] {
                0 => Label::Benign,
                1 => Label::Malicious,
                other => return Err(DataError::Malformed(format!("label byte {other}"))),
            };
            Ok(Sample {
                payload: Box::new(c[1..].try_into().unwrap()),
                label,
            })
        })
        .collect()
}

/// Bit-voting baseline fitted from data.
///
/// Each position votes for the class whose estimated probability of
/// seeing a 1 there is higher; a payload is called malicious when at
/// least half of the positions agree with the malicious-favoured bit.
#[derive(Debug, Clone)]
pub struct MajorityBitOracle {
    favoured: Box<[u8; PAYLOAD_LEN]>,
}

impl MajorityBitOracle {
    pub fn fit(samples: &[Sample]) -> Self {
        let mut ones = [[0u32; INPUT_BITS]; 2];
        let mut totals = [0u32; 2];
        for s in samples {
            let c = s.label as usize;
            totals[c] += 1;
            for (i, count) in ones[c].iter_mut().enumerate() {
                *count += get_bit(&s.payload, i) as u32;
            }
        }
        let mut favoured = Box::new([0u8; PAYLOAD_LEN]);
        for i in 0..INPUT_BITS {
            // p1 >= p0  <=>  ones1 * n0 >= ones0 * n1
            let lhs = ones[1][i] as u64 * totals[0].max(1) as u64;
            let rhs = ones[0][i] as u64 * totals[1].max(1) as u64;
            set_bit(&mut favoured, i, lhs >= rhs);
        }
        MajorityBitOracle { favoured }
    }

    pub fn agreements(&self, payload: &[u8; PAYLOAD_LEN]) -> usize {
        (0..INPUT_BITS)
            .filter(|&i| get_bit(payload, i) == get_bit(&self.favoured, i))
            .count()
    }

    pub fn predict(&self, payload: &[u8; PAYLOAD_LEN]) -> bool {
        2 * self.agreements(payload) >= INPUT_BITS
    }

    /// The same rule as a one-hidden-unit network.
    pub fn to_model(&self) -> ModelWeights {
        ModelWeights::new(
            ModelDims::new(INPUT_BITS, 1).unwrap(),
            self.favoured.to_vec(),
            vec![0],
            vec![1.0],
            0.0,
        )
        .unwrap()
    }
}
