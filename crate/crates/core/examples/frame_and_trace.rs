//! Build frames, parse them back, and round-trip a timed trace file.
//!
//! cargo run --release --example frame_and_trace

use slotpath::frame::{FRAME_LEN, PAYLOAD_LEN};
use slotpath::trace::{read_trace, write_trace, TraceRecord};
use slotpath::{build_frame, parse_frame};

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut payload = [0u8; PAYLOAD_LEN];
    payload[0] = 0b0000_0101; // bits 0 and 2 set, LSB first

    let frame = build_frame(3, &payload, *b"ctl-byte")?;
    let (meta, view) = parse_frame(frame.as_ref())?;
    println!(
        "frame {} bytes, slot {}, version {}",
        FRAME_LEN, meta.slot_id, meta.format_version
    );
    println!("bits 0..4: {:?}", (0..4).map(|i| view.bit(i)).collect::<Vec<_>>());

    let mut bad = frame.clone();
    bad.set_format_version(2);
    println!("version 2 frame: {}", parse_frame(bad.as_ref()).unwrap_err());

    let records: Vec<TraceRecord> = (0..8u32)
        .map(|i| TraceRecord {
            emit_time_ns: u64::from(i) * 10_000,
            frame: build_frame(u32::from(i >= 4), &payload, [0; 8]).unwrap(),
        })
        .collect();
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("t.bin");
    write_trace(&path, &records)?;
    let back = read_trace(&path)?;
    assert_eq!(back, records);
    println!(
        "trace of {} records: {} bytes",
        back.len(),
        std::fs::metadata(&path)?.len()
    );
    Ok(())
}
