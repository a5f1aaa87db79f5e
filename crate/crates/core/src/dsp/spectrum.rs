//! FFT-based spectra: magnitude-squared frame spectra and a complex
//! STFT/ISTFT pair used by the dereverberator.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioBuffer;
use crate::dsp::framing::{window_coefficients, WindowKind};
use crate::error::{FsvError, Result};

pub fn next_pow2(n: usize) -> usize {
    let mut p = 1;
    while p < n {
        p *= 2;
    }
    p
}

/// |DFT|^2 of each frame, zero-padded to `n_fft`. Returns the positive-half
/// spectrum: `n_fft / 2 + 1` bins per frame, no normalization.
pub fn power_spectrum(frames: &[Vec<f64>], n_fft: usize) -> Result<Vec<Vec<f64>>> {
    if let Some(f) = frames.first() {
        if n_fft < f.len() {
            return Err(FsvError::config(format!(
                "n_fft {} smaller than frame length {}",
                n_fft,
                f.len()
            )));
        }
    }
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let n_bins = n_fft / 2 + 1;
    let mut out = Vec::with_capacity(frames.len());
    let mut buf = vec![Complex64::default(); n_fft];
    for frame in frames {
        for slot in buf.iter_mut() {
            *slot = Complex64::default();
        }
        for (slot, &s) in buf.iter_mut().zip(frame) {
            slot.re = s;
        }
        fft.process(&mut buf);
        out.push(buf[..n_bins].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(out)
}

/// STFT parameters shared by analysis and synthesis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    pub win_len: usize,
    pub shift: usize,
    pub n_fft: usize,
    pub window: WindowKind,
}

impl StftConfig {
    /// 32 ms window, 8 ms shift, sqrt-Hann analysis/synthesis at `rate`.
    pub fn for_wpe(rate: u32) -> Self {
        let win_len = (0.032 * rate as f64).round() as usize;
        let shift = (0.008 * rate as f64).round() as usize;
        StftConfig {
            win_len,
            shift,
            n_fft: next_pow2(win_len),
            window: WindowKind::SqrtHann,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    fn validate(&self) -> Result<()> {
        if self.shift == 0 || self.win_len < self.shift || self.n_fft < self.win_len {
            return Err(FsvError::config(format!(
                "invalid stft config: win={} shift={} n_fft={}",
                self.win_len, self.shift, self.n_fft
            )));
        }
        Ok(())
    }
}

/// Complex spectrogram stored bin-major: `bins[f][t]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub bins: Vec<Vec<Complex64>>,
    pub config: StftConfig,
    /// Original signal length, so the inverse transform can trim padding.
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.bins.first().map_or(0, |b| b.len())
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }
}

/// Forward STFT. The signal is padded with `win_len - shift` leading zeros
/// and enough trailing zeros that every sample has full window coverage, so
/// `istft(stft(x))` reconstructs `x` up to rounding error.
pub fn stft(audio: &AudioBuffer, config: &StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let lead = config.win_len - config.shift;
    let n = audio.len();
    // enough frames that the last window reaches past the padded signal end
    let n_frames = (n + lead) / config.shift + 1;
    let padded_len = (n_frames - 1) * config.shift + config.win_len;
    let mut padded = vec![0.0; padded_len];
    padded[lead..lead + n].copy_from_slice(audio.samples());

    let coeffs = window_coefficients(config.window, config.win_len);
    let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
    let n_bins = config.n_bins();
    let mut bins = vec![vec![Complex64::default(); n_frames]; n_bins];
    let mut buf = vec![Complex64::default(); config.n_fft];
    for t in 0..n_frames {
        let start = t * config.shift;
        for slot in buf.iter_mut() {
            *slot = Complex64::default();
        }
        for (i, slot) in buf.iter_mut().take(config.win_len).enumerate() {
            slot.re = padded[start + i] * coeffs[i];
        }
        fft.process(&mut buf);
        for (f, bin) in bins.iter_mut().enumerate() {
            bin[t] = buf[f];
        }
    }
    Ok(Spectrogram {
        bins,
        config: *config,
        signal_len: n,
        sample_rate: audio.sample_rate(),
    })
}

/// Inverse STFT by windowed overlap-add, normalized by the per-sample sum of
/// squared window values. Output is trimmed to the original signal length.
pub fn istft(spec: &Spectrogram) -> Result<AudioBuffer> {
    let config = &spec.config;
    config.validate()?;
    let n_frames = spec.n_frames();
    let n_bins = config.n_bins();
    if spec.n_bins() != n_bins {
        return Err(FsvError::DimMismatch(format!(
            "spectrogram has {} bins, stft config implies {}",
            spec.n_bins(),
            n_bins
        )));
    }
    let coeffs = window_coefficients(config.window, config.win_len);
    let ifft = FftPlanner::new().plan_fft_inverse(config.n_fft);
    let out_len = (n_frames.max(1) - 1) * config.shift + config.win_len;
    let mut acc = vec![0.0; out_len];
    let mut wsum = vec![0.0; out_len];
    let mut buf = vec![Complex64::default(); config.n_fft];
    for t in 0..n_frames {
        // rebuild the full conjugate-symmetric spectrum
        for f in 0..n_bins {
            buf[f] = spec.bins[f][t];
        }
        for f in n_bins..config.n_fft {
            buf[f] = spec.bins[config.n_fft - f][t].conj();
        }
        ifft.process(&mut buf);
        let start = t * config.shift;
        let scale = 1.0 / config.n_fft as f64;
        for i in 0..config.win_len {
            acc[start + i] += buf[i].re * scale * coeffs[i];
            wsum[start + i] += coeffs[i] * coeffs[i];
        }
    }
    let lead = config.win_len - config.shift;
    let mut samples = Vec::with_capacity(spec.signal_len);
    for i in 0..spec.signal_len {
        let w = wsum[lead + i];
        samples.push(if w > 1e-12 { acc[lead + i] / w } else { 0.0 });
    }
    AudioBuffer::new(samples, spec.sample_rate)
}
