//! Mel and gammatone filterbanks over power-spectrum bins.
//!
//! Mel filters are the usual overlapping triangles placed uniformly on the
//! mel scale. Gammatone filters sample the magnitude response of a
//! fourth-order gammatone at each FFT bin, with center frequencies placed
//! uniformly on the ERB-rate scale.

use crate::error::{FsvError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterbankWarp {
    Mel,
    Gammatone,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FilterbankSpec {
    pub n_filters: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub warp: FilterbankWarp,
    pub n_fft: usize,
    pub sample_rate: u32,
}

impl FilterbankSpec {
    fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.n_filters == 0 {
            return Err(FsvError::config("filterbank needs at least one filter"));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max) {
            return Err(FsvError::config(format!(
                "invalid filterbank band {}..{} Hz",
                self.f_min, self.f_max
            )));
        }
        if self.f_max > nyquist {
            return Err(FsvError::config(format!(
                "f_max {} Hz above Nyquist {} Hz",
                self.f_max, nyquist
            )));
        }
        if self.n_fft < 2 {
            return Err(FsvError::config("n_fft too small"));
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// ERB-rate (Glasberg and Moore) of a frequency in Hz.
pub fn erb_rate_from_hz(hz: f64) -> f64 {
    21.4 * (1.0 + 4.37 * hz / 1000.0).log10()
}

pub fn hz_from_erb_rate(erb_rate: f64) -> f64 {
    (10f64.powf(erb_rate / 21.4) - 1.0) * 1000.0 / 4.37
}

/// Equivalent rectangular bandwidth at center frequency `hz`.
pub fn erb_bandwidth_hz(hz: f64) -> f64 {
    24.7 * (1.0 + 4.37 * hz / 1000.0)
}

/// `n` gammatone center frequencies uniformly spaced on the ERB-rate scale
/// over [f_min, f_max], endpoints included.
pub fn gammatone_center_freqs(n: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let lo = erb_rate_from_hz(f_min);
    let hi = erb_rate_from_hz(f_max);
    if n == 1 {
        return vec![hz_from_erb_rate(0.5 * (lo + hi))];
    }
    (0..n)
        .map(|i| hz_from_erb_rate(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Build the `n_filters x (n_fft/2 + 1)` weight matrix for a spec.
pub fn build_filterbank(spec: &FilterbankSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let n_bins = spec.n_fft / 2 + 1;
    let bin_hz = spec.sample_rate as f64 / spec.n_fft as f64;
    let rows = match spec.warp {
        FilterbankWarp::Mel => {
            // n_filters + 2 edge points uniformly spaced in mel
            let lo = hz_to_mel(spec.f_min);
            let hi = hz_to_mel(spec.f_max);
            let edges: Vec<f64> = (0..spec.n_filters + 2)
                .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (spec.n_filters + 1) as f64))
                .collect();
            (0..spec.n_filters)
                .map(|k| {
                    let (left, center, right) = (edges[k], edges[k + 1], edges[k + 2]);
                    (0..n_bins)
                        .map(|b| {
                            let f = b as f64 * bin_hz;
                            if f <= left || f >= right {
                                0.0
                            } else if f <= center {
                                (f - left) / (center - left)
                            } else {
                                (right - f) / (right - center)
                            }
                        })
                        .collect::<Vec<f64>>()
                })
                .collect()
        }
        FilterbankWarp::Gammatone => {
            let centers = gammatone_center_freqs(spec.n_filters, spec.f_min, spec.f_max);
            centers
                .iter()
                .map(|&fc| {
                    let b = 1.019 * erb_bandwidth_hz(fc);
                    (0..n_bins)
                        .map(|bin| {
                            let f = bin as f64 * bin_hz;
                            // 4th-order gammatone magnitude, peak-normalized
                            let x = (f - fc) / b;
                            (1.0 + x * x).powi(-2)
                        })
                        .collect::<Vec<f64>>()
                })
                .collect()
        }
    };
    Ok(rows)
}

/// Integrate per-frame power spectra through the filterbank:
/// `energies[t][k] = sum_b weights[k][b] * power[t][b]`.
pub fn apply_filterbank(weights: &[Vec<f64>], power: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n_bins = weights.first().map_or(0, |w| w.len());
    let mut out = Vec::with_capacity(power.len());
    for frame in power {
        if frame.len() != n_bins {
            return Err(FsvError::DimMismatch(format!(
                "power frame has {} bins, filterbank expects {}",
                frame.len(),
                n_bins
            )));
        }
        out.push(
            weights
                .iter()
                .map(|w| w.iter().zip(frame).map(|(a, b)| a * b).sum())
                .collect(),
        );
    }
    Ok(out)
}
