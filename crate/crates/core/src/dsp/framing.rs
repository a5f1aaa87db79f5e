//! Framing and window functions.

use crate::audio::AudioBuffer;
use crate::error::{FsvError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Rectangular,
    Hamming,
    /// Periodic Hann; sums to a constant under 75% overlap-add.
    Hann,
    /// Square root of periodic Hann, for analysis/synthesis STFT pairs.
    SqrtHann,
}

/// Window coefficients of length `len`.
///
/// Hamming is the symmetric variant (denominator `len - 1`); Hann and
/// sqrt-Hann are periodic (denominator `len`).
pub fn window_coefficients(kind: WindowKind, len: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    match kind {
        WindowKind::Rectangular => vec![1.0; len],
        WindowKind::Hamming => {
            if len == 1 {
                return vec![1.0];
            }
            (0..len)
                .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
                .collect()
        }
        WindowKind::Hann => (0..len)
            .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / len as f64).cos()))
            .collect(),
        WindowKind::SqrtHann => (0..len)
            .map(|n| (0.5 * (1.0 - (2.0 * PI * n as f64 / len as f64).cos())).sqrt())
            .collect(),
    }
}

/// Slice audio into overlapping frames and apply a window function.
///
/// Frame count is `floor((N - L) / S) + 1` for `N` samples, window length `L`
/// and shift `S` (both converted from seconds at the buffer's sample rate).
pub fn frame_and_window(
    audio: &AudioBuffer,
    win_len_secs: f64,
    shift_secs: f64,
    window: WindowKind,
) -> Result<Vec<Vec<f64>>> {
    if !(shift_secs > 0.0) || win_len_secs < shift_secs {
        return Err(FsvError::config(format!(
            "need win_len >= shift > 0, got win_len={win_len_secs}s shift={shift_secs}s"
        )));
    }
    let rate = audio.sample_rate() as f64;
    let win = (win_len_secs * rate).round() as usize;
    let shift = (shift_secs * rate).round() as usize;
    if win == 0 || shift == 0 {
        return Err(FsvError::config("window/shift shorter than one sample"));
    }
    let n = audio.len();
    if n < win {
        return Err(FsvError::AudioTooShort { got: n, need: win });
    }
    let coeffs = window_coefficients(window, win);
    let n_frames = (n - win) / shift + 1;
    let samples = audio.samples();
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * shift;
        let frame: Vec<f64> = samples[start..start + win]
            .iter()
            .zip(&coeffs)
            .map(|(s, w)| s * w)
            .collect();
        frames.push(frame);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_16k_default_framing() {
        let audio = AudioBuffer::silence(1.0, 16000);
        let frames = frame_and_window(&audio, 0.025, 0.010, WindowKind::Hamming).unwrap();
        // floor((16000 - 400) / 160) + 1
        assert_eq!(frames.len(), 98);
        assert_eq!(frames[0].len(), 400);
    }

    #[test]
    fn constant_signal_rectangular_frames_identical() {
        let audio = AudioBuffer::new(vec![0.25; 4000], 16000).unwrap();
        let frames = frame_and_window(&audio, 0.025, 0.010, WindowKind::Rectangular).unwrap();
        for f in &frames {
            assert_eq!(f, &frames[0]);
        }
    }

    #[test]
    fn hamming_of_ones_is_window_itself() {
        // Oracle: the closed-form Hamming formula, written out independently.
        let len = 400usize;
        let audio = AudioBuffer::new(vec![1.0; len], 16000).unwrap();
        let frames = frame_and_window(&audio, 0.025, 0.025, WindowKind::Hamming).unwrap();
        assert_eq!(frames.len(), 1);
        for (n, &v) in frames[0].iter().enumerate() {
            let expected = 0.54
                - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len as f64 - 1.0)).cos();
            assert!((v - expected).abs() < 1e-12, "n={n}: {v} vs {expected}");
        }
    }

    #[test]
    fn too_short_audio_is_an_error() {
        let audio = AudioBuffer::new(vec![0.0; 100], 16000).unwrap();
        let err = frame_and_window(&audio, 0.025, 0.010, WindowKind::Hamming).unwrap_err();
        assert!(matches!(
            err,
            FsvError::AudioTooShort { got: 100, need: 400 }
        ));
    }

    #[test]
    fn frame_count_formula_exhaustive_small() {
        // check the count formula over a grid of (N, L, S)
        for n in [400usize, 401, 555, 1000, 1600] {
            for (l, s) in [(400usize, 160usize), (400, 400), (256, 128), (160, 80)] {
                if n < l {
                    continue;
                }
                let audio = AudioBuffer::new(vec![0.0; n], 16000).unwrap();
                let frames = frame_and_window(
                    &audio,
                    l as f64 / 16000.0,
                    s as f64 / 16000.0,
                    WindowKind::Rectangular,
                )
                .unwrap();
                assert_eq!(frames.len(), (n - l) / s + 1, "N={n} L={l} S={s}");
            }
        }
    }
}
