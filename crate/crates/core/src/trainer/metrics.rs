use serde::Serialize;

use super::data::Sample;
use crate::bnn::{infer_fast, infer_reference, ModelWeights};

/// Confusion counts and derived rates. Undefined ratios (0/0) are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalMetrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EvalMetrics {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        }
    }

    /// From `(predicted_malicious, actually_malicious)` pairs.
    pub fn from_predictions(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (pred, truth) in pairs {
            match (pred, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }
}

/// Scores every sample with the scalar oracle; positive score means malicious.
pub fn evaluate(model: &ModelWeights, samples: &[Sample]) -> EvalMetrics {
    EvalMetrics::from_predictions(samples.iter().map(|s| {
        let score = infer_reference(model, &s.payload[..]).expect("payload matches model input");
        (score.0 > 0.0, s.label.is_malicious())
    }))
}

/// Same as [`evaluate`] through the packed path; the scores are bit-identical.
pub fn evaluate_fast(model: &ModelWeights, samples: &[Sample]) -> EvalMetrics {
    EvalMetrics::from_predictions(samples.iter().map(|s| {
        let score = infer_fast(model, &s.payload[..]).expect("payload matches model input");
        (score.0 > 0.0, s.label.is_malicious())
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::ModelDims;
    use crate::trainer::data::{generate_dataset, DatasetParams, MajorityBitOracle};

    fn constant_model(b2: f32) -> ModelWeights {
        let dims = ModelDims::new(8192, 1).unwrap();
        // w2 = 0 makes the score b2 for every input
        ModelWeights::new(dims, vec![0; 1024], vec![0], vec![0.0], b2).unwrap()
    }

    fn data() -> Vec<Sample> {
        generate_dataset(&DatasetParams {
            samples: 300,
            ..Default::default()
        })
        .unwrap()
        .samples
    }

    #[test]
    fn always_positive() {
        let d = data();
        let m = evaluate(&constant_model(0.5), &d);
        let prior = d.iter().filter(|s| s.label.is_malicious()).count() as f64 / d.len() as f64;
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.precision, prior);
        assert_eq!(m.tn + m.fn_, 0);
    }

    #[test]
    fn always_negative() {
        let m = evaluate(&constant_model(-0.5), &data());
        assert_eq!((m.recall, m.precision, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn identities() {
        let m = EvalMetrics::from_counts(30, 10, 50, 20);
        assert_eq!(m.precision, 30.0 / 40.0);
        assert_eq!(m.recall, 30.0 / 50.0);
        assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-15);
        assert_eq!(m.accuracy, 80.0 / 110.0);
    }

    #[test]
    fn oracle_as_single_unit_network() {
        let d = generate_dataset(&DatasetParams {
            samples: 600,
            ..Default::default()
        })
        .unwrap();
        let split = d.split(0.5, 1);
        let oracle = MajorityBitOracle::fit(&split.train);
        let expected = EvalMetrics::from_predictions(
            split
                .validation
                .iter()
                .map(|s| (oracle.predict(&s.payload), s.label.is_malicious())),
        );
        let via_net = evaluate(&oracle.to_model(), &split.validation);
        assert_eq!(via_net, expected);
        assert_eq!(evaluate_fast(&oracle.to_model(), &split.validation), expected);
    }
}
