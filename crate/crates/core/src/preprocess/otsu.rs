use super::PreprocessError;

pub fn channel_histogram(values: &[u8]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in values {
        h[v as usize] += 1;
    }
    h
}

/// Otsu's threshold. Returns `t` in `1..=255` splitting the histogram into
/// `{v < t}` and `{v >= t}` with maximal between-class variance; among equal
/// maxima the lowest `t` wins.
///
/// Uses `σ_b² · n² = (n·S₀ − n₀·S)² / (n₀·n₁)` with exact integer sums, so
/// thresholds that induce the same partition score identically.
pub fn otsu_threshold(hist: &[u64; 256]) -> Result<u8, PreprocessError> {
    let nonempty: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
    if nonempty.len() < 2 {
        return Err(PreprocessError::Degenerate(
            nonempty.first().copied().unwrap_or(0) as u8,
        ));
    }
    let n: u64 = hist.iter().sum();
    let s: u128 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as u128 * c as u128)
        .sum();

    let mut best_t = 0usize;
    let mut best = f64::NEG_INFINITY;
    let (mut n0, mut s0) = (0u64, 0u128);
    for t in 1..256 {
        n0 += hist[t - 1];
        s0 += (t - 1) as u128 * hist[t - 1] as u128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = n as i128 * s0 as i128 - n0 as i128 * s as i128;
        let score = (diff as f64) * (diff as f64) / (n0 as f64 * n1 as f64);
        if score > best {
            best = score;
            best_t = t;
        }
    }
    Ok(best_t as u8)
}
