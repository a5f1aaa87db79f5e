//! Sliding-window cepstral mean subtraction.

/// Subtract a per-coefficient mean computed over a sliding window of up to
/// `window` frames centered on each frame. Near the utterance edges the
/// window slides inward instead of shrinking, so every mean is taken over
/// `min(window, n_frames)` frames. Utterances shorter than the window
/// therefore get plain global mean subtraction.
pub fn sliding_cms(frames: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    assert!(window >= 1, "cms window must be at least 1");
    let n_frames = frames.len();
    if n_frames == 0 {
        return Vec::new();
    }
    let dim = frames[0].len();
    let w = window.min(n_frames);
    // prefix sums per coefficient for O(1) window means
    let mut prefix = vec![vec![0.0; dim]; n_frames + 1];
    for (t, frame) in frames.iter().enumerate() {
        for i in 0..dim {
            prefix[t + 1][i] = prefix[t][i] + frame[i];
        }
    }
    frames
        .iter()
        .enumerate()
        .map(|(t, frame)| {
            let left = t
                .saturating_sub(w / 2)
                .min(n_frames - w);
            let right = left + w;
            (0..dim)
                .map(|i| {
                    let mean = (prefix[right][i] - prefix[left][i]) / w as f64;
                    frame[i] - mean
                })
                .collect()
        })
        .collect()
}
