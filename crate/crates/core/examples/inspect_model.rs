//! Write a random h32 model, read it back and print its layout.
//!
//! cargo run --release --example inspect_model

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slotpath::bnn::{load_model, save_model};
use slotpath::{ModelDims, ModelWeights};

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = ModelWeights::random(ModelDims::H32, &mut rng);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("slot0.bin");
    save_model(&model, &path)?;
    let back = load_model(&path, ModelDims::H32)?;
    assert!(back == model);

    let dims = back.dims();
    println!("input bits   {}", dims.input_bits);
    println!("hidden units {}", dims.hidden);
    println!("w1 bytes     {}", back.w1_packed().len());
    println!(
        "file size    {} bytes (on disk {})",
        back.file_size(),
        std::fs::metadata(&path)?.len()
    );
    println!("bank of 2    {} bytes", 2 * back.file_size());
    println!("bank of 16   {} bytes", 16 * back.file_size());
    println!("cost model   {:?}", back.cost_model());
    Ok(())
}
