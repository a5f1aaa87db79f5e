//! Signal primitives shared by the feature extractors: framing, windowing,
//! spectra, filterbanks, DCT, deltas, sliding cepstral mean subtraction and
//! resampling.

mod cms;
mod dct;
mod deltas;
mod filterbank;
mod framing;
mod resample;
mod spectrum;

pub use cms::sliding_cms;
pub use dct::{dct2_matrix, dct2_orthonormal};
pub use deltas::append_deltas;
pub use filterbank::{
    apply_filterbank, build_filterbank, erb_bandwidth_hz, erb_rate_from_hz, gammatone_center_freqs,
    hz_from_erb_rate, hz_to_mel, mel_to_hz, FilterbankSpec, FilterbankWarp,
};
pub use framing::{frame_and_window, window_coefficients, WindowKind};
pub use resample::resample_to_8k;
pub use spectrum::{istft, next_pow2, power_spectrum, stft, Spectrogram, StftConfig};

use crate::error::{FsvError, Result};

/// Floor applied before taking logs of spectral energies.
pub const LOG_FLOOR: f64 = 1e-10;

/// Identifies which front-end produced a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mfcc20,
    Mfcc30,
    Pncc,
    Mfbank8k,
    Mfbank16k,
    Gfbank,
}

impl FeatureKind {
    /// Final per-frame dimensionality, deltas included where applicable.
    pub fn dim(self) -> usize {
        match self {
            FeatureKind::Mfcc20 => 60,
            FeatureKind::Mfcc30 => 30,
            FeatureKind::Pncc => 60,
            FeatureKind::Mfbank8k => 64,
            FeatureKind::Mfbank16k => 64,
            FeatureKind::Gfbank => 64,
        }
    }

    /// Sample rate the extractor for this kind operates at.
    pub fn sample_rate(self) -> u32 {
        match self {
            FeatureKind::Mfbank8k => 8000,
            _ => 16000,
        }
    }

    /// Stable byte code used in the FSV1 archive format.
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Mfcc20 => 0,
            FeatureKind::Mfcc30 => 1,
            FeatureKind::Pncc => 2,
            FeatureKind::Mfbank8k => 3,
            FeatureKind::Mfbank16k => 4,
            FeatureKind::Gfbank => 5,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => FeatureKind::Mfcc20,
            1 => FeatureKind::Mfcc30,
            2 => FeatureKind::Pncc,
            3 => FeatureKind::Mfbank8k,
            4 => FeatureKind::Mfbank16k,
            5 => FeatureKind::Gfbank,
            _ => return Err(FsvError::Format(format!("unknown feature kind code {code}"))),
        })
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "mfcc20" => FeatureKind::Mfcc20,
            "mfcc30" => FeatureKind::Mfcc30,
            "pncc" => FeatureKind::Pncc,
            "mfbank8k" => FeatureKind::Mfbank8k,
            "mfbank16k" => FeatureKind::Mfbank16k,
            "gfbank" => FeatureKind::Gfbank,
            _ => return Err(FsvError::config(format!("unknown feature kind '{name}'"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mfcc20 => "mfcc20",
            FeatureKind::Mfcc30 => "mfcc30",
            FeatureKind::Pncc => "pncc",
            FeatureKind::Mfbank8k => "mfbank8k",
            FeatureKind::Mfbank16k => "mfbank16k",
            FeatureKind::Gfbank => "gfbank",
        }
    }
}

/// Time-major matrix of per-frame feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: Vec<Vec<f64>>,
    frame_shift: f64,
    kind: FeatureKind,
}

impl FeatureMatrix {
    /// Build a feature matrix, checking finiteness and that the row width
    /// matches the declared kind.
    pub fn new(frames: Vec<Vec<f64>>, frame_shift: f64, kind: FeatureKind) -> Result<Self> {
        let dim = kind.dim();
        for (t, row) in frames.iter().enumerate() {
            if row.len() != dim {
                return Err(FsvError::DimMismatch(format!(
                    "frame {t} has dim {}, expected {dim} for {}",
                    row.len(),
                    kind.name()
                )));
            }
            if let Some(d) = row.iter().position(|v| !v.is_finite()) {
                return Err(FsvError::NonFinite(format!(
                    "feature frame {t}, dim {d} is not finite"
                )));
            }
        }
        Ok(Self {
            frames,
            frame_shift,
            kind,
        })
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn frame_shift(&self) -> f64 {
        self.frame_shift
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    /// Frames stacked as the rows of a dense matrix (T×D).
    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n_frames(), self.dim(), |t, j| self.frames[t][j])
    }
}

/// Per-dimension mean over a set of rows. Empty input gives an empty vector.
#[cfg(test)]
pub(crate) fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    if rows.is_empty() {
        return Vec::new();
    }
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = rows.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    mean
}
