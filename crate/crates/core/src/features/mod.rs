//! Front-end feature extractors: MFCC, PNCC, log-mel filterbank energies
//! and log-gammatone filterbank energies.

mod fbank;
mod mfcc;
mod pncc;

pub use fbank::{extract_gfbank, extract_logmel};
pub use mfcc::extract_mfcc;
pub use pncc::{extract_pncc, pncc_filterbank_spec, PnccNonlinearity, PnccOptions};

use crate::audio::AudioBuffer;
use crate::dsp::{resample_to_8k, FeatureKind, FeatureMatrix};
use crate::error::{FsvError, Result};

/// Frame length used by every extractor, in seconds.
pub const FRAME_LEN_SECS: f64 = 0.025;
/// Frame shift used by every extractor, in seconds.
pub const FRAME_SHIFT_SECS: f64 = 0.010;
/// Pre-emphasis coefficient for the cepstral extractors.
pub const PRE_EMPHASIS: f64 = 0.97;

/// Extractor settings. `for_kind` gives the canonical configuration; the
/// invariants tie `n_coeffs`/`deltas` to the declared kind so a mismatch is
/// rejected up front.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    pub sample_rate: u32,
    /// Cepstral coefficient count for mfcc/pncc, filter count for the
    /// filterbank-energy kinds.
    pub n_coeffs: usize,
    /// Sliding CMS window in seconds; `0` disables mean subtraction.
    pub cms_window_secs: f64,
    pub deltas: bool,
}

impl FeatureConfig {
    pub fn for_kind(kind: FeatureKind) -> Self {
        let (n_coeffs, deltas) = match kind {
            FeatureKind::Mfcc20 => (20, true),
            FeatureKind::Mfcc30 => (30, false),
            FeatureKind::Pncc => (20, true),
            FeatureKind::Mfbank8k | FeatureKind::Mfbank16k | FeatureKind::Gfbank => (64, false),
        };
        FeatureConfig {
            kind,
            sample_rate: kind.sample_rate(),
            n_coeffs,
            cms_window_secs: 3.0,
            deltas,
        }
    }

    pub(crate) fn validate(&self, audio: &AudioBuffer) -> Result<()> {
        let dim = self.n_coeffs * if self.deltas { 3 } else { 1 };
        if dim != self.kind.dim() {
            return Err(FsvError::config(format!(
                "config gives dim {dim} but kind {} requires {}",
                self.kind.name(),
                self.kind.dim()
            )));
        }
        if self.sample_rate != self.kind.sample_rate() {
            return Err(FsvError::config(format!(
                "kind {} runs at {} Hz, config says {} Hz",
                self.kind.name(),
                self.kind.sample_rate(),
                self.sample_rate
            )));
        }
        if audio.sample_rate() != self.sample_rate {
            return Err(FsvError::config(format!(
                "audio at {} Hz but {} expects {} Hz",
                audio.sample_rate(),
                self.kind.name(),
                self.sample_rate
            )));
        }
        if self.cms_window_secs < 0.0 {
            return Err(FsvError::config("cms window must be >= 0"));
        }
        Ok(())
    }

    /// CMS window in frames, or `None` when disabled.
    pub(crate) fn cms_window_frames(&self) -> Option<usize> {
        if self.cms_window_secs > 0.0 {
            Some(((self.cms_window_secs / FRAME_SHIFT_SECS).round() as usize).max(1))
        } else {
            None
        }
    }
}

/// First-difference pre-emphasis `y[n] = x[n] - coeff * x[n-1]` with the
/// first sample passed through against itself.
pub fn pre_emphasis(samples: &[f64], coeff: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut prev = samples.first().copied().unwrap_or(0.0);
    for &s in samples {
        out.push(s - coeff * prev);
        prev = s;
    }
    out
}

/// Extract features of `kind` with canonical settings, downsampling 16 kHz
/// input first when the kind runs at 8 kHz.
pub fn extract_features(audio: &AudioBuffer, kind: FeatureKind) -> Result<FeatureMatrix> {
    let config = FeatureConfig::for_kind(kind);
    let resampled;
    let input = if kind.sample_rate() == 8000 && audio.sample_rate() == 16000 {
        resampled = resample_to_8k(audio)?;
        &resampled
    } else {
        audio
    };
    match kind {
        FeatureKind::Mfcc20 | FeatureKind::Mfcc30 => extract_mfcc(input, &config),
        FeatureKind::Pncc => extract_pncc(input, &config, &PnccOptions::default()),
        FeatureKind::Mfbank8k | FeatureKind::Mfbank16k => extract_logmel(input, &config),
        FeatureKind::Gfbank => extract_gfbank(input, &config),
    }
}
