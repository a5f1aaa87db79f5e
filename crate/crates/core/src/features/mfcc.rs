//! Mel-frequency cepstral coefficients.

use crate::audio::AudioBuffer;
use crate::dsp::{
    append_deltas, apply_filterbank, build_filterbank, dct2_matrix, frame_and_window, next_pow2,
    power_spectrum, sliding_cms, FeatureKind, FeatureMatrix, FilterbankSpec, FilterbankWarp,
    WindowKind, LOG_FLOOR,
};
use crate::error::{FsvError, Result};
use crate::features::{pre_emphasis, FeatureConfig, FRAME_LEN_SECS, FRAME_SHIFT_SECS, PRE_EMPHASIS};

/// Mel filters used internally; enough headroom for 30 cepstra.
const N_MEL_FILTERS: usize = 40;
const MEL_F_MIN: f64 = 20.0;
const MEL_F_MAX: f64 = 7600.0;

/// 20-dim (with delta and delta-delta appended, 60 total) or 30-dim static
/// MFCCs at 16 kHz, sliding CMS applied last.
pub fn extract_mfcc(audio: &AudioBuffer, config: &FeatureConfig) -> Result<FeatureMatrix> {
    if !matches!(config.kind, FeatureKind::Mfcc20 | FeatureKind::Mfcc30) {
        return Err(FsvError::config(format!(
            "extract_mfcc cannot produce {}",
            config.kind.name()
        )));
    }
    config.validate(audio)?;
    let emphasized = AudioBuffer::new(
        pre_emphasis(audio.samples(), PRE_EMPHASIS),
        audio.sample_rate(),
    )?;
    let frames = frame_and_window(
        &emphasized,
        FRAME_LEN_SECS,
        FRAME_SHIFT_SECS,
        WindowKind::Hamming,
    )?;
    let n_fft = next_pow2(frames[0].len());
    let power = power_spectrum(&frames, n_fft)?;
    let fb = build_filterbank(&FilterbankSpec {
        n_filters: N_MEL_FILTERS,
        f_min: MEL_F_MIN,
        f_max: MEL_F_MAX,
        warp: FilterbankWarp::Mel,
        n_fft,
        sample_rate: audio.sample_rate(),
    })?;
    let energies = apply_filterbank(&fb, &power)?;
    let dct = dct2_matrix(config.n_coeffs, N_MEL_FILTERS);
    let mut ceps: Vec<Vec<f64>> = energies
        .iter()
        .map(|row| {
            let logs: Vec<f64> = row.iter().map(|&e| e.max(LOG_FLOOR).ln()).collect();
            dct.iter()
                .map(|basis| basis.iter().zip(&logs).map(|(w, x)| w * x).sum())
                .collect()
        })
        .collect();
    if config.deltas {
        ceps = append_deltas(&ceps, 2);
    }
    if let Some(window) = config.cms_window_frames() {
        ceps = sliding_cms(&ceps, window);
    }
    FeatureMatrix::new(ceps, FRAME_SHIFT_SECS, config.kind)
}
