//! Power-normalized cepstral coefficients.
//!
//! Pipeline: gammatone power integration -> medium-time running average ->
//! asymmetric-lowpass noise-floor subtraction with half-wave rectification
//! -> temporal masking -> power normalization -> power-law nonlinearity
//! x^(1/15) -> DCT -> deltas -> sliding CMS. Each robustness stage can be
//! bypassed individually, which the tests use to check that the degenerate
//! configuration collapses onto a plain log-gammatone cepstral path.

use crate::audio::AudioBuffer;
use crate::dsp::{
    append_deltas, apply_filterbank, build_filterbank, dct2_matrix, frame_and_window, next_pow2,
    power_spectrum, sliding_cms, FeatureKind, FeatureMatrix, FilterbankSpec, FilterbankWarp,
    WindowKind, LOG_FLOOR,
};
use crate::error::{FsvError, Result};
use crate::features::{pre_emphasis, FeatureConfig, FRAME_LEN_SECS, FRAME_SHIFT_SECS, PRE_EMPHASIS};

/// Internal gammatone channel count.
const N_CHANNELS: usize = 40;
/// Medium-time smoothing reach: average over frames m-M..m+M.
const MEDIUM_TIME_M: usize = 2;
/// Asymmetric filter forgetting factors (rising / falling).
const LAMBDA_A: f64 = 0.999;
const LAMBDA_B: f64 = 0.5;
/// Temporal masking constants.
const LAMBDA_T: f64 = 0.85;
const MU_T: f64 = 0.2;
/// Power-law exponent.
const POWER_EXPONENT: f64 = 1.0 / 15.0;
/// Floor for the power normalization divisor.
const POWER_NORM_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnccNonlinearity {
    /// Standard x^(1/15).
    PowerLaw,
    /// Logarithm, for degeneration checks against log-gammatone cepstra.
    Log,
}

/// Stage toggles; defaults enable the full pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PnccOptions {
    pub medium_time: bool,
    pub asymmetric_suppression: bool,
    pub temporal_masking: bool,
    pub power_norm: bool,
    pub nonlinearity: PnccNonlinearity,
}

impl Default for PnccOptions {
    fn default() -> Self {
        PnccOptions {
            medium_time: true,
            asymmetric_suppression: true,
            temporal_masking: true,
            power_norm: true,
            nonlinearity: PnccNonlinearity::PowerLaw,
        }
    }
}

/// The gammatone integration band used internally by PNCC.
pub fn pncc_filterbank_spec(n_fft: usize, sample_rate: u32) -> FilterbankSpec {
    FilterbankSpec {
        n_filters: N_CHANNELS,
        f_min: 200.0,
        f_max: 8000.0,
        warp: FilterbankWarp::Gammatone,
        n_fft,
        sample_rate,
    }
}

fn medium_time_average(power: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = power.len();
    (0..n)
        .map(|m| {
            let lo = m.saturating_sub(MEDIUM_TIME_M);
            let hi = (m + MEDIUM_TIME_M).min(n - 1);
            let count = (hi - lo + 1) as f64;
            (0..N_CHANNELS)
                .map(|l| power[lo..=hi].iter().map(|row| row[l]).sum::<f64>() / count)
                .collect()
        })
        .collect()
}

/// Asymmetric lowpass filter: tracks rises slowly (lambda_a) and falls
/// quickly (lambda_b), giving a running noise-floor estimate.
fn asymmetric_floor(q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut floor = vec![vec![0.0; N_CHANNELS]; q.len()];
    for l in 0..N_CHANNELS {
        let mut prev = 0.9 * q[0][l];
        for (m, row) in q.iter().enumerate() {
            let x = row[l];
            let (lambda, one_minus) = if x >= prev {
                (LAMBDA_A, 1.0 - LAMBDA_A)
            } else {
                (LAMBDA_B, 1.0 - LAMBDA_B)
            };
            prev = lambda * prev + one_minus * x;
            floor[m][l] = prev;
        }
    }
    floor
}

fn temporal_mask(q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; N_CHANNELS]; q.len()];
    for l in 0..N_CHANNELS {
        let mut peak = q[0][l];
        out[0][l] = q[0][l];
        for m in 1..q.len() {
            let x = q[m][l];
            if x >= LAMBDA_T * peak {
                out[m][l] = x;
            } else {
                out[m][l] = MU_T * peak;
            }
            peak = x.max(LAMBDA_T * peak);
        }
    }
    out
}

/// 20 power-normalized cepstra with deltas (60-dim) at 16 kHz.
pub fn extract_pncc(
    audio: &AudioBuffer,
    config: &FeatureConfig,
    options: &PnccOptions,
) -> Result<FeatureMatrix> {
    if config.kind != FeatureKind::Pncc {
        return Err(FsvError::config(format!(
            "extract_pncc cannot produce {}",
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
    let fb = build_filterbank(&pncc_filterbank_spec(n_fft, audio.sample_rate()))?;
    let channel_power = apply_filterbank(&fb, &power)?;

    let q = if options.medium_time {
        medium_time_average(&channel_power)
    } else {
        channel_power
    };
    let cleaned = if options.asymmetric_suppression {
        let floor = asymmetric_floor(&q);
        q.iter()
            .zip(&floor)
            .map(|(row, fl)| {
                row.iter()
                    .zip(fl)
                    .map(|(&x, &f)| (x - f).max(0.0))
                    .collect::<Vec<f64>>()
            })
            .collect()
    } else {
        q
    };
    let masked = if options.temporal_masking {
        temporal_mask(&cleaned)
    } else {
        cleaned
    };
    let normalized = if options.power_norm {
        let total: f64 = masked.iter().flatten().sum();
        let count = (masked.len() * N_CHANNELS) as f64;
        let mu = (total / count).max(POWER_NORM_FLOOR);
        masked
            .iter()
            .map(|row| row.iter().map(|&x| x / mu).collect::<Vec<f64>>())
            .collect()
    } else {
        masked
    };

    let dct = dct2_matrix(config.n_coeffs, N_CHANNELS);
    let mut ceps: Vec<Vec<f64>> = normalized
        .iter()
        .map(|row| {
            let nonlinear: Vec<f64> = row
                .iter()
                .map(|&x| match options.nonlinearity {
                    PnccNonlinearity::PowerLaw => x.max(0.0).powf(POWER_EXPONENT),
                    PnccNonlinearity::Log => x.max(LOG_FLOOR).ln(),
                })
                .collect();
            dct.iter()
                .map(|basis| basis.iter().zip(&nonlinear).map(|(w, x)| w * x).sum())
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
