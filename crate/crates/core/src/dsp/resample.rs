//! 16 kHz to 8 kHz downsampling: windowed-sinc anti-aliasing filter
//! followed by decimation by two.

use crate::audio::AudioBuffer;
use crate::error::{FsvError, Result};

const TAPS: usize = 101;
/// Passband edge as a fraction of the output sample rate.
const CUTOFF_FRACTION: f64 = 0.45;

fn lowpass_taps(cutoff_hz: f64, sample_rate: f64) -> Vec<f64> {
    let m = (TAPS - 1) as f64;
    let fc = cutoff_hz / sample_rate;
    let mut taps: Vec<f64> = (0..TAPS)
        .map(|n| {
            let x = n as f64 - m / 2.0;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * x).sin() / (std::f64::consts::PI * x)
            };
            // Blackman window
            let w = 0.42 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / m).cos()
                + 0.08 * (4.0 * std::f64::consts::PI * n as f64 / m).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum; // unity DC gain
    }
    taps
}

/// Downsample 16 kHz audio to 8 kHz.
pub fn resample_to_8k(audio: &AudioBuffer) -> Result<AudioBuffer> {
    if audio.sample_rate() != 16000 {
        return Err(FsvError::config(format!(
            "resample_to_8k expects 16 kHz input, got {} Hz",
            audio.sample_rate()
        )));
    }
    let taps = lowpass_taps(CUTOFF_FRACTION * 8000.0, 16000.0);
    let x = audio.samples();
    let half = TAPS / 2;
    let n_out = x.len().div_ceil(2);
    let mut out = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let center = 2 * k;
        let mut acc = 0.0;
        for (j, &h) in taps.iter().enumerate() {
            // convolution index center + half - j, zero outside the signal
            let idx = center + half;
            if idx >= j {
                if let Some(&s) = x.get(idx - j) {
                    acc += h * s;
                }
            }
        }
        out.push(acc);
    }
    AudioBuffer::new(out, 8000)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, rate: u32, secs: f64) -> AudioBuffer {
        let n = (secs * rate as f64) as usize;
        let samples = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect();
        AudioBuffer::new(samples, rate).unwrap()
    }

    /// Amplitude of `freq` measured by direct DFT projection.
    fn tone_amplitude(audio: &AudioBuffer, freq: f64) -> f64 {
        let n = audio.len();
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &s) in audio.samples().iter().enumerate() {
            let ang = 2.0 * PI * freq * i as f64 / audio.sample_rate() as f64;
            re += s * ang.cos();
            im += s * ang.sin();
        }
        2.0 * (re * re + im * im).sqrt() / n as f64
    }

    #[test]
    fn dc_preserved() {
        let audio = AudioBuffer::new(vec![0.25; 4000], 16000).unwrap();
        let out = resample_to_8k(&audio).unwrap();
        assert_eq!(out.sample_rate(), 8000);
        assert_eq!(out.len(), 2000);
        // skip filter warm-up at the edges
        for &s in &out.samples()[100..1900] {
            assert!((s - 0.25).abs() < 1e-3);
        }
    }

    #[test]
    fn one_khz_tone_amplitude_within_5_percent() {
        let audio = sine(1000.0, 16000, 0.5);
        let out = resample_to_8k(&audio).unwrap();
        let amp = tone_amplitude(&out, 1000.0);
        assert!((amp - 1.0).abs() < 0.05, "amplitude {amp}");
    }

    #[test]
    fn seven_khz_tone_rejected() {
        let audio = sine(7000.0, 16000, 0.5);
        let input_rms = audio.rms();
        let out = resample_to_8k(&audio).unwrap();
        assert!(out.rms() < 0.05 * input_rms, "rms {}", out.rms());
    }

    #[test]
    fn wrong_rate_is_config_error() {
        let audio = AudioBuffer::new(vec![0.0; 100], 8000).unwrap();
        assert!(resample_to_8k(&audio).is_err());
    }
}
