//! Frames in over UDP, forwarded frames out over UDP, all on loopback.
//!
//! cargo run --release --example udp_loopback

use std::net::UdpSocket;
use std::thread;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slotpath::frame::PAYLOAD_LEN;
use slotpath::pipeline::{RunOptions, UdpSink, UdpSource};
use slotpath::{build_frame, run_pipeline, ModelBank, ModelDims, ModelWeights};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bank = ModelBank::from_models((0..2).map(|_| ModelWeights::random(ModelDims::H32, &mut rng)).collect())?;

    let egress = UdpSocket::bind("127.0.0.1:0")?;
    egress.set_read_timeout(Some(Duration::from_millis(500)))?;
    let mut source = UdpSource::bind("127.0.0.1:0".parse()?, Duration::from_millis(300))?;
    let mut sink = UdpSink::connect(egress.local_addr()?)?;
    let ingress = source.local_addr()?;

    let sender = thread::spawn(move || {
        let tx = UdpSocket::bind("127.0.0.1:0").unwrap();
        let mut payload = [0u8; PAYLOAD_LEN];
        for i in 0..200u32 {
            rng.fill_bytes(&mut payload);
            // slot 7 is not resident: those frames are dropped before inference
            let slot = if i % 50 == 49 { 7 } else { i % 2 };
            tx.send_to(build_frame(slot, &payload, [0; 8]).unwrap().as_ref(), ingress)
                .unwrap();
            thread::sleep(Duration::from_micros(50));
        }
    });
    let receiver = thread::spawn(move || {
        let mut buf = [0u8; 2048];
        let mut received = 0;
        while egress.recv(&mut buf).is_ok() {
            received += 1;
        }
        received
    });
    let report = run_pipeline(&bank, &mut source, &mut sink, &RunOptions::default())?;
    sender.join().unwrap();
    let received = receiver.join().unwrap();
    println!(
        "offered {} processed {} forwarded {} dropped {}",
        report.offered, report.processed, report.forwarded, report.dropped
    );
    println!("slot out of range {}", report.reasons.slot_out_of_range);
    println!("datagrams seen on the egress socket {received}");
    Ok(())
}
