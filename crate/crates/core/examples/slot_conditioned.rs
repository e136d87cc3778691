//! Train a recall-oriented and a precision-oriented model on the same
//! split and find a packet whose verdict depends only on the slot.
//!
//! cargo run --release --example slot_conditioned

use slotpath::frame::PAYLOAD_LEN;
use slotpath::trainer::{find_flip, generate_dataset, train_slot_pair, DatasetParams};
use slotpath::{build_frame, decide_action, infer_fast, parse_frame};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate_dataset(&DatasetParams::default())?;
    let pair = train_slot_pair(&dataset, 1)?;

    for (slot, m) in [(0, &pair.recall), (1, &pair.precision)] {
        let v = &m.validation;
        println!(
            "slot {slot}: precision {:.3} recall {:.3} f1 {:.3} (best epoch {})",
            v.precision, v.recall, v.f1, m.best_epoch
        );
    }

    let Some((i, s0, s1)) = find_flip(&pair.recall.model, &pair.precision.model, &pair.validation) else {
        println!("the two models agree on every validation sample");
        return Ok(());
    };
    let payload: &[u8; PAYLOAD_LEN] = &pair.validation[i].payload;
    for (slot, model) in [(0u32, &pair.recall.model), (1, &pair.precision.model)] {
        let frame = build_frame(slot, payload, [0; 8])?;
        let (meta, view) = parse_frame(frame.as_ref())?;
        let score = infer_fast(model, view.as_ref())?;
        println!(
            "sample {i} via slot {slot}: score {:+.4} -> {:?}",
            score.0,
            decide_action(&meta, score).verdict
        );
    }
    println!("(flip scores {:+.4} / {:+.4})", s0.0, s1.0);
    Ok(())
}
