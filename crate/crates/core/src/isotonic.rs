//! Pool-adjacent-violators isotonic regression.

/// Best non-decreasing least-squares fit of `y` taken in the given order.
pub fn pav(y: &[f64]) -> Vec<f64> {
    // Blocks as (sum, count); merged while the last two are out of order.
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 <= s1 / n1 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s0 + s1, n0 + n1);
        }
    }
    let mut fit = Vec::with_capacity(y.len());
    for (sum, n) in blocks {
        fit.extend(std::iter::repeat_n(sum / n as f64, n));
    }
    fit
}

/// Sorts `(x, y)` pairs by `x` (ties by `y`) and returns the RMS residual of
/// the isotonic fit of `y` on `x`.
pub fn isotonic_rms(points: &mut [(f64, f64)]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let fit = pav(&y);
    let sse: f64 = y.iter().zip(&fit).map(|(a, b)| (a - b).powi(2)).sum();
    (sse / y.len() as f64).sqrt()
}
