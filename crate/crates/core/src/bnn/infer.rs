use super::{ModelError, ModelWeights, Score};

#[inline]
fn check_input(model: &ModelWeights, input: &[u8]) -> Result<(), ModelError> {
    let found = input.len() * 8;
    if found != model.input_bits() {
        return Err(ModelError::DimensionMismatch {
            expected: model.input_bits(),
            found,
        });
    }
    Ok(())
}

#[inline(always)]
fn mismatches_body(row: &[u8], input: &[u8]) -> u32 {
    let (rw, rt) = row.split_at(row.len() - row.len() % 8);
    let (xw, xt) = input.split_at(rw.len());
    let mut count: u32 = rw
        .chunks_exact(8)
        .zip(xw.chunks_exact(8))
        .map(|(a, b)| {
            let a = u64::from_le_bytes(a.try_into().unwrap());
            let b = u64::from_le_bytes(b.try_into().unwrap());
            (a ^ b).count_ones()
        })
        .sum();
    count += rt.iter().zip(xt).map(|(a, b)| (a ^ b).count_ones()).sum::<u32>();
    count
}

// Baseline x86-64 has no popcount instruction; `count_ones` compiled
// inside this function uses it.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn mismatches_popcnt(row: &[u8], input: &[u8]) -> u32 {
    mismatches_body(row, input)
}

/// Number of positions where `row` and `input` disagree.
#[inline]
fn mismatches(row: &[u8], input: &[u8]) -> u32 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("popcnt") {
        // SAFETY: popcnt was detected at runtime.
        return unsafe { mismatches_popcnt(row, input) };
    }
    mismatches_body(row, input)
}

#[inline]
fn output(model: &ModelWeights, hidden_positive: impl Iterator<Item = bool>) -> Score {
    let mut y = 0.0f64;
    for (w, positive) in model.w2().iter().zip(hidden_positive) {
        let h = if positive { 1.0 } else { -1.0 };
        y += *w as f64 * h;
    }
    y += model.b2() as f64;
    Score(y)
}

/// Hidden pre-activations via XNOR/popcount: `2*matches - d + b1`.
pub fn preactivations_fast(model: &ModelWeights, input: &[u8]) -> Result<Vec<i32>, ModelError> {
    check_input(model, input)?;
    let d = model.input_bits() as i32;
    Ok((0..model.hidden())
        .map(|n| d - 2 * mismatches(model.w1_row(n), input) as i32 + model.b1()[n] as i32)
        .collect())
}

/// Packed inference. Bit-identical to [`infer_reference`].
pub fn infer_fast(model: &ModelWeights, input: &[u8]) -> Result<Score, ModelError> {
    check_input(model, input)?;
    let d = model.input_bits() as i32;
    let b1 = model.b1();
    let hidden = (0..model.hidden()).map(|n| {
        let pre = d - 2 * mismatches(model.w1_row(n), input) as i32 + b1[n] as i32;
        pre >= 0
    });
    Ok(output(model, hidden))
}

#[inline]
fn bit_sign(bytes: &[u8], idx: usize) -> i64 {
    if (bytes[idx / 8] >> (idx % 8)) & 1 == 1 {
        1
    } else {
        -1
    }
}

/// Pre-activations by explicit ±1 products, one bit at a time.
pub fn preactivations_reference(model: &ModelWeights, input: &[u8]) -> Result<Vec<i32>, ModelError> {
    check_input(model, input)?;
    let d = model.input_bits() as i64;
    let (lo, hi) = model.b1().iter().fold((i64::MAX, i64::MIN), |(lo, hi), &b| {
        (lo.min(b as i64), hi.max(b as i64))
    });
    let mut pre = Vec::with_capacity(model.hidden());
    for n in 0..model.hidden() {
        let row = model.w1_row(n);
        let mut acc: i64 = 0;
        for i in 0..model.input_bits() {
            acc += bit_sign(row, i) * bit_sign(input, i);
        }
        let p = acc + model.b1()[n] as i64;
        assert!(
            (-d + lo..=d + hi).contains(&p),
            "pre-activation {p} outside [{}, {}]",
            -d + lo,
            d + hi
        );
        pre.push(p as i32);
    }
    Ok(pre)
}

/// Scalar oracle. No packed operations.
pub fn infer_reference(model: &ModelWeights, input: &[u8]) -> Result<Score, ModelError> {
    let pre = preactivations_reference(model, input)?;
    Ok(output(model, pre.into_iter().map(|p| p >= 0)))
}
