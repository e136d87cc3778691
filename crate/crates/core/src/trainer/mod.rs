//! Desk-scale production of slot-specialised weight sets.

pub mod data;
pub mod metrics;
pub mod train;

pub use data::{
    generate_dataset, read_dataset, split_samples, write_dataset, Concept, DataError, DatasetParams, Label,
    MajorityBitOracle, Sample, Split, SyntheticDataset,
};
pub use metrics::{evaluate, evaluate_fast, EvalMetrics};
pub use train::{
    find_flip, train_bnn, train_on_split, train_slot_pair, EpochStats, SelectionMetric, SlotPair, TrainConfig,
    TrainError, TrainedModel,
};
