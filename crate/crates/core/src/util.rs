//! Small numeric helpers shared across modules.

/// SplitMix64 finalizer. Used to derive reproducible pseudo-random values from
/// global indices so that generated data does not depend on the rank count.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic value in `[-1, 1)` attached to the entry `(row, col)`.
pub fn hashed_uniform(seed: u64, row: usize, col: usize) -> f64 {
    let h = mix64(seed ^ mix64((row as u64).wrapping_mul(0x0001_0000_0001) ^ mix64(col as u64)));
    // 53 random mantissa bits
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    2.0 * unit - 1.0
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
