//! Per-packet model switching over a resident bank of binary neural networks.
//!
//! Frames are fixed 1088-byte samples: a 64-byte metadata block whose slot
//! id picks one of `K` resident models, followed by a 1024-byte payload
//! that the shared executor scores with XNOR/popcount arithmetic. The
//! parser, executor and action policy are the same for every packet;
//! only the resolved slot changes.
//!
//! See `examples/` for one runnable program per capability.

pub mod bank;
pub mod bnn;
pub mod cli;
pub mod frame;
pub mod harness;
pub mod pipeline;
pub mod stats;
pub mod trace;
pub mod trainer;

pub use bank::{load_bank, ModelBank, SlotIndex};
pub use bnn::{infer_fast, infer_reference, ModelDims, ModelWeights, Score};
pub use frame::{build_frame, parse_frame, PacketFrame, PayloadView, Reg0Metadata};
pub use pipeline::{decide_action, run_pipeline, Action, Pipeline, Reason, RunReport, Verdict};
