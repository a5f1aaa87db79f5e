//! Log filterbank-energy features: 64-channel mel (8 and 16 kHz variants)
//! and 64-channel gammatone.

use crate::audio::AudioBuffer;
use crate::dsp::{
    apply_filterbank, build_filterbank, frame_and_window, next_pow2, power_spectrum, sliding_cms,
    FeatureKind, FeatureMatrix, FilterbankSpec, FilterbankWarp, WindowKind, LOG_FLOOR,
};
use crate::error::{FsvError, Result};
use crate::features::{FeatureConfig, FRAME_LEN_SECS, FRAME_SHIFT_SECS};

/// Filterbank band for a feature kind.
pub(crate) fn band_for(kind: FeatureKind) -> (f64, f64) {
    match kind {
        FeatureKind::Mfbank8k => (20.0, 3800.0),
        FeatureKind::Mfbank16k => (20.0, 7600.0),
        FeatureKind::Gfbank => (50.0, 8000.0),
        _ => unreachable!("band_for called for cepstral kind"),
    }
}

fn extract_fbank(
    audio: &AudioBuffer,
    config: &FeatureConfig,
    warp: FilterbankWarp,
) -> Result<FeatureMatrix> {
    config.validate(audio)?;
    let frames = frame_and_window(audio, FRAME_LEN_SECS, FRAME_SHIFT_SECS, WindowKind::Hamming)?;
    let n_fft = next_pow2(frames[0].len());
    let power = power_spectrum(&frames, n_fft)?;
    let (f_min, f_max) = band_for(config.kind);
    let fb = build_filterbank(&FilterbankSpec {
        n_filters: config.n_coeffs,
        f_min,
        f_max,
        warp,
        n_fft,
        sample_rate: audio.sample_rate(),
    })?;
    let energies = apply_filterbank(&fb, &power)?;
    let mut logs: Vec<Vec<f64>> = energies
        .iter()
        .map(|row| row.iter().map(|&e| e.max(LOG_FLOOR).ln()).collect())
        .collect();
    if let Some(window) = config.cms_window_frames() {
        logs = sliding_cms(&logs, window);
    }
    FeatureMatrix::new(logs, FRAME_SHIFT_SECS, config.kind)
}

/// 64-dim log mel-filterbank energies; 20-7600 Hz at 16 kHz, 20-3800 Hz at
/// 8 kHz.
pub fn extract_logmel(audio: &AudioBuffer, config: &FeatureConfig) -> Result<FeatureMatrix> {
    if !matches!(config.kind, FeatureKind::Mfbank8k | FeatureKind::Mfbank16k) {
        return Err(FsvError::config(format!(
            "extract_logmel cannot produce {}",
            config.kind.name()
        )));
    }
    extract_fbank(audio, config, FilterbankWarp::Mel)
}

/// 64-dim log gammatone-filterbank energies over 50-8000 Hz at 16 kHz.
pub fn extract_gfbank(audio: &AudioBuffer, config: &FeatureConfig) -> Result<FeatureMatrix> {
    if config.kind != FeatureKind::Gfbank {
        return Err(FsvError::config(format!(
            "extract_gfbank cannot produce {}",
            config.kind.name()
        )));
    }
    extract_fbank(audio, config, FilterbankWarp::Gammatone)
}
