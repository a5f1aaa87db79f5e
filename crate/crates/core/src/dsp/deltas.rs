//! Regression-based delta features.

/// First-order regression deltas over a +/- `window` frame context:
///
/// `d[t] = sum_n n * (x[t+n] - x[t-n]) / (2 * sum_n n^2)`
///
/// Frames past either edge are replicated from the nearest valid frame.
pub fn compute_deltas(frames: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    assert!(window >= 1, "delta window must be at least 1");
    let n_frames = frames.len();
    if n_frames == 0 {
        return Vec::new();
    }
    let dim = frames[0].len();
    let denom: f64 = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let clamp = |t: isize| frames[t.clamp(0, n_frames as isize - 1) as usize].as_slice();
    (0..n_frames as isize)
        .map(|t| {
            let mut d = vec![0.0; dim];
            for n in 1..=window as isize {
                let ahead = clamp(t + n);
                let behind = clamp(t - n);
                for (i, slot) in d.iter_mut().enumerate() {
                    *slot += n as f64 * (ahead[i] - behind[i]);
                }
            }
            for slot in d.iter_mut() {
                *slot /= denom;
            }
            d
        })
        .collect()
}

/// Append first- and second-order deltas to each frame: a D-dimensional
/// frame becomes `3 * D` columns laid out `[static | delta | delta-delta]`.
pub fn append_deltas(frames: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    let mut out = frames.to_vec();
    let mut current = frames.to_vec();
    for _ in 0..2 {
        current = compute_deltas(&current, window);
        for (frame, extra) in out.iter_mut().zip(&current) {
            frame.extend_from_slice(extra);
        }
    }
    out
}
