//! Straight-through-estimator training of the two-layer binary network.
//!
//! Real-valued shadow parameters are kept for every weight; the forward
//! pass binarises `w1` by sign. Gradients flow through both sign
//! functions as identity: through the weight sign while the shadow lies
//! in [-1, 1] (shadows are clipped there), through the activation sign
//! while `|pre| <= d`. Checkpoints are the exported quantised network
//! (`b1` rounded and saturated to i8), evaluated on validation data
//! after every epoch.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use super::data::{Sample, SyntheticDataset};
use super::metrics::{evaluate_fast, EvalMetrics};
use crate::bnn::{infer_reference, preactivations_fast, ModelDims, ModelWeights, Score};
use crate::frame::INPUT_BITS;

/// The hidden shift lives on the integer pre-activation scale, so it moves faster than the ±1 shadows.
const SHIFT_LR_SCALE: f32 = 5.0;
const INIT_SHADOW: f32 = 0.05;
const INIT_W2: f32 = 0.1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("training data needs both classes")]
    SingleClass,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    Recall,
    Precision,
    F1,
}

impl SelectionMetric {
    fn key(self, m: &EvalMetrics) -> (f64, f64) {
        let primary = match self {
            SelectionMetric::Recall => m.recall,
            SelectionMetric::Precision => m.precision,
            SelectionMetric::F1 => m.f1,
        };
        (primary, m.f1)
    }
}

impl FromStr for SelectionMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "recall" => Ok(SelectionMetric::Recall),
            "precision" => Ok(SelectionMetric::Precision),
            "f1" => Ok(SelectionMetric::F1),
            _ => Err(format!("unknown selection metric {s:?} (recall|precision|f1)")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    /// Loss weight on malicious samples.
    pub pos_weight: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
    pub hidden: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pos_weight: 1.0,
            epochs: 8,
            learning_rate: 0.01,
            seed: 1,
            selection_metric: SelectionMetric::F1,
            hidden: crate::bnn::H32,
            batch_size: 32,
            val_fraction: 0.25,
        }
    }
}

impl TrainConfig {
    /// High-recall slot: positives weighted 4x, checkpoint chosen by recall.
    pub fn recall_oriented(seed: u64) -> Self {
        TrainConfig {
            pos_weight: 4.0,
            seed,
            selection_metric: SelectionMetric::Recall,
            ..Default::default()
        }
    }

    /// High-precision slot: positives weighted 0.5x, checkpoint chosen by precision.
    pub fn precision_oriented(seed: u64) -> Self {
        TrainConfig {
            pos_weight: 0.5,
            seed,
            selection_metric: SelectionMetric::Precision,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if !(self.pos_weight > 0.0 && self.pos_weight.is_finite()) {
            return Err(TrainError::InvalidConfig("pos_weight must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(TrainError::InvalidConfig(
                "epochs, batch size and width must be positive",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation: EvalMetrics,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: ModelWeights,
    /// 1-based epoch whose checkpoint was kept.
    pub best_epoch: usize,
    pub validation: EvalMetrics,
    pub history: Vec<EpochStats>,
}

/// Splits `dataset` with `config.seed` and trains on the training part.
pub fn train_bnn(dataset: &SyntheticDataset, config: &TrainConfig) -> Result<TrainedModel, TrainError> {
    let split = dataset.split(config.val_fraction, config.seed);
    train_on_split(&split.train, &split.validation, config)
}

/// Two slots trained on one split: slot 0 recall-oriented, slot 1 precision-oriented.
#[derive(Debug, Clone)]
pub struct SlotPair {
    pub recall: TrainedModel,
    pub precision: TrainedModel,
    pub validation: Vec<Sample>,
}

pub fn train_slot_pair(dataset: &SyntheticDataset, seed: u64) -> Result<SlotPair, TrainError> {
    let recall_cfg = TrainConfig::recall_oriented(seed);
    let split = dataset.split(recall_cfg.val_fraction, seed);
    let recall = train_on_split(&split.train, &split.validation, &recall_cfg)?;
    let precision = train_on_split(&split.train, &split.validation, &TrainConfig::precision_oriented(seed))?;
    Ok(SlotPair {
        recall,
        precision,
        validation: split.validation,
    })
}

/// First sample scored positive by `slot0` and non-positive by `slot1`.
pub fn find_flip(slot0: &ModelWeights, slot1: &ModelWeights, samples: &[Sample]) -> Option<(usize, Score, Score)> {
    samples.iter().enumerate().find_map(|(i, s)| {
        let a = infer_reference(slot0, &s.payload[..]).ok()?;
        let b = infer_reference(slot1, &s.payload[..]).ok()?;
        (a.0 > 0.0 && b.0 <= 0.0).then_some((i, a, b))
    })
}

pub fn train_on_split(
    train: &[Sample],
    validation: &[Sample],
    config: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    let positives = train.iter().filter(|s| s.label.is_malicious()).count();
    if positives == 0 || positives == train.len() {
        return Err(TrainError::SingleClass);
    }
    let d = INPUT_BITS;
    let h = config.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut shadow = Shadow::init(ModelDims::new(d, h).unwrap(), &mut rng);

    let inputs: Vec<i8> = train
        .iter()
        .flat_map(|s| {
            (0..d).map(move |i| {
                if (s.payload[i / 8] >> (i % 8)) & 1 == 1 {
                    1i8
                } else {
                    -1
                }
            })
        })
        .collect();

    let lr = config.learning_rate as f32;
    let mut opt_w1 = Adam::new(d * h);
    let mut opt_shift = Adam::new(h);
    let mut opt_w2 = Adam::new(h);
    let mut opt_b2 = Adam::new(1);
    let mut grads = Grads::zeros(d, h);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(ModelWeights, usize, EvalMetrics)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            grads.clear();
            let batch_loss = shadow.accumulate_batch(train, &inputs, batch, config.pos_weight, &mut grads);
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            grads.scale(1.0 / batch.len() as f32);

            opt_w1.step(&mut shadow.w1, &grads.w1, lr);
            opt_shift.step(&mut shadow.shift, &grads.shift, lr * SHIFT_LR_SCALE);
            opt_w2.step(&mut shadow.w2, &grads.w2, lr);
            opt_b2.step(std::slice::from_mut(&mut shadow.b2), &[grads.b2], lr);
            shadow.clip();
        }

        let model = shadow.export(train);
        let val = evaluate_fast(&model, validation);
        let mean_loss = loss_sum / train.len() as f64;
        log::debug!(
            "epoch {epoch}: loss {mean_loss:.4} val P {:.3} R {:.3} F1 {:.3}",
            val.precision,
            val.recall,
            val.f1
        );
        history.push(EpochStats {
            epoch,
            mean_loss,
            validation: val,
        });
        let better = match &best {
            None => true,
            Some((_, _, m)) => config.selection_metric.key(&val) > config.selection_metric.key(m),
        };
        if better {
            best = Some((model, epoch, val));
        }
    }

    let (model, best_epoch, validation) = best.expect("at least one epoch");
    Ok(TrainedModel {
        model,
        best_epoch,
        validation,
        history,
    })
}

/// Real-valued training state.
///
/// Hidden units are mean-centred before the sign: during training with
/// the batch mean of `W1 x`, at export with the mean over the whole
/// training set, folded together with the learned `shift` into `b1`.
/// Centring also removes the gradient along inputs that are constant
/// across samples, which would otherwise flip whole blocks of weights at
/// once.
struct Shadow {
    dims: ModelDims,
    w1: Vec<f32>,
    shift: Vec<f32>,
    w2: Vec<f32>,
    b2: f32,
}

struct Grads {
    w1: Vec<f32>,
    shift: Vec<f32>,
    w2: Vec<f32>,
    b2: f32,
}

impl Grads {
    fn zeros(d: usize, h: usize) -> Self {
        Grads {
            w1: vec![0.0; d * h],
            shift: vec![0.0; h],
            w2: vec![0.0; h],
            b2: 0.0,
        }
    }

    fn clear(&mut self) {
        self.w1.fill(0.0);
        self.shift.fill(0.0);
        self.w2.fill(0.0);
        self.b2 = 0.0;
    }

    fn scale(&mut self, s: f32) {
        for g in self.w1.iter_mut().chain(&mut self.shift).chain(&mut self.w2) {
            *g *= s;
        }
        self.b2 *= s;
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn quantize_bias(b: f32) -> i8 {
    b.round().clamp(i8::MIN as f32, i8::MAX as f32) as i8
}

impl Shadow {
    fn init(dims: ModelDims, rng: &mut ChaCha8Rng) -> Self {
        let n = dims.input_bits * dims.hidden;
        Shadow {
            dims,
            w1: (0..n).map(|_| rng.gen_range(-INIT_SHADOW..INIT_SHADOW)).collect(),
            shift: vec![0.0; dims.hidden],
            w2: (0..dims.hidden).map(|_| rng.gen_range(-INIT_W2..INIT_W2)).collect(),
            b2: 0.0,
        }
    }

    /// Binarised weights with zero bias: pre-activations are the raw ±1 dot products.
    fn binarized(&self) -> ModelWeights {
        let d = self.dims.input_bits;
        let mut w1 = vec![0u8; self.dims.hidden * self.dims.row_bytes()];
        for (n, row) in self.w1.chunks_exact(d).enumerate() {
            let out = &mut w1[n * d / 8..(n + 1) * d / 8];
            for (i, &w) in row.iter().enumerate() {
                if w >= 0.0 {
                    out[i / 8] |= 1 << (i % 8);
                }
            }
        }
        ModelWeights::new(self.dims, w1, vec![0; self.dims.hidden], self.w2.clone(), self.b2).expect("shadow shape")
    }

    fn export(&self, train: &[Sample]) -> ModelWeights {
        let raw = self.binarized();
        let mut sums = vec![0i64; self.dims.hidden];
        for s in train {
            let dots = preactivations_fast(&raw, &s.payload[..]).expect("payload width");
            for (acc, p) in sums.iter_mut().zip(dots) {
                *acc += p as i64;
            }
        }
        let b1 = sums
            .iter()
            .zip(&self.shift)
            .map(|(&s, &shift)| quantize_bias(shift - (s as f64 / train.len() as f64) as f32))
            .collect();
        ModelWeights::new(self.dims, raw.w1_packed().to_vec(), b1, self.w2.clone(), self.b2).expect("shadow shape")
    }

    /// Forward and backward over one minibatch; returns the summed loss.
    fn accumulate_batch(
        &self,
        train: &[Sample],
        inputs: &[i8],
        batch: &[usize],
        pos_weight: f64,
        g: &mut Grads,
    ) -> f64 {
        let d = self.dims.input_bits;
        let h = self.dims.hidden;
        let raw = self.binarized();
        let dots: Vec<Vec<i32>> = batch
            .iter()
            .map(|&i| preactivations_fast(&raw, &train[i].payload[..]).expect("payload width"))
            .collect();
        let mut mean = vec![0.0f32; h];
        for row in &dots {
            for (m, &a) in mean.iter_mut().zip(row) {
                *m += a as f32;
            }
        }
        for m in &mut mean {
            *m /= batch.len() as f32;
        }

        // d loss / d pre, per sample and unit
        let mut dpre = vec![0.0f32; batch.len() * h];
        let mut loss = 0.0f64;
        for (s, (&i, row)) in batch.iter().zip(&dots).enumerate() {
            let pre: Vec<f32> = (0..h).map(|n| row[n] as f32 - mean[n] + self.shift[n]).collect();
            let mut y = 0.0f64;
            for (w, &p) in self.w2.iter().zip(&pre) {
                y += *w as f64 * if p >= 0.0 { 1.0 } else { -1.0 };
            }
            y += self.b2 as f64;
            let (l, dy) = if train[i].label.is_malicious() {
                (pos_weight * softplus(-y), pos_weight * (sigmoid(y) - 1.0))
            } else {
                (softplus(y), sigmoid(y))
            };
            loss += l;
            let dy = dy as f32;
            g.b2 += dy;
            for n in 0..h {
                let hn = if pre[n] >= 0.0 { 1.0f32 } else { -1.0 };
                g.w2[n] += dy * hn;
                if pre[n].abs() <= d as f32 {
                    dpre[s * h + n] = dy * self.w2[n];
                }
            }
        }

        for n in 0..h {
            let col_mean = (0..batch.len()).map(|s| dpre[s * h + n]).sum::<f32>() / batch.len() as f32;
            g.shift[n] += col_mean * batch.len() as f32;
            let gw = &mut g.w1[n * d..(n + 1) * d];
            for (s, &i) in batch.iter().enumerate() {
                let centred = dpre[s * h + n] - col_mean;
                if centred == 0.0 {
                    continue;
                }
                for (w, &xi) in gw.iter_mut().zip(&inputs[i * d..(i + 1) * d]) {
                    *w += centred * xi as f32;
                }
            }
        }
        loss
    }

    fn clip(&mut self) {
        for w in &mut self.w1 {
            *w = w.clamp(-1.0, 1.0);
        }
    }
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    const BETA1: f32 = 0.9;
    const BETA2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f32) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::data::{generate_dataset, Concept, DatasetParams};
    use crate::trainer::metrics::evaluate;

    #[test]
    fn bias_quantization_saturates() {
        assert_eq!(quantize_bias(200.0), 127);
        assert_eq!(quantize_bias(-300.0), -128);
        assert_eq!(quantize_bias(2.5), 3);
        assert_eq!(quantize_bias(-2.4), -2);
    }

    #[test]
    fn config_validation() {
        let ds = generate_dataset(&DatasetParams {
            samples: 50,
            ..Default::default()
        })
        .unwrap();
        let bad = TrainConfig {
            pos_weight: 0.0,
            ..Default::default()
        };
        assert!(matches!(train_bnn(&ds, &bad), Err(TrainError::InvalidConfig(_))));
        assert!("Recall".parse::<SelectionMetric>().is_ok());
        assert!("auc".parse::<SelectionMetric>().is_err());
    }

    #[test]
    fn nan_learning_rate_rejected() {
        let ds = generate_dataset(&DatasetParams {
            samples: 50,
            ..Default::default()
        })
        .unwrap();
        let bad = TrainConfig {
            learning_rate: f64::NAN,
            ..Default::default()
        };
        assert!(train_bnn(&ds, &bad).is_err());
    }

    #[test]
    fn planted_bit_is_learned() {
        let ds = generate_dataset(&DatasetParams {
            samples: 600,
            concept: Concept::PlantedBit { bit: 1234 },
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            ..Default::default()
        };
        let out = train_bnn(&ds, &cfg).unwrap();
        assert!(out.validation.f1 > 0.99, "{:?}", out.validation);
    }

    #[test]
    fn training_is_deterministic_and_exports_round_trip() {
        let ds = generate_dataset(&DatasetParams {
            samples: 400,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let a = train_bnn(&ds, &cfg).unwrap();
        let b = train_bnn(&ds, &cfg).unwrap();
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        crate::bnn::save_model(&a.model, &path).unwrap();
        let back = crate::bnn::load_model(&path, a.model.dims()).unwrap();
        let val = ds.split(cfg.val_fraction, cfg.seed).validation;
        assert_eq!(evaluate(&back, &val), evaluate(&a.model, &val));
        assert_eq!(evaluate(&a.model, &val), a.validation);
    }
}
