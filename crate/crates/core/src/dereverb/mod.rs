//! Single-channel weighted prediction error (WPE) dereverberation.
//!
//! Late reverberation is modeled per STFT bin as a multi-tap linear
//! prediction from delayed frames; the predicted tail is subtracted from the
//! observation. Filter estimation alternates with a per-frame variance
//! estimate of the dereverberated signal (variance-normalized least squares).

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;

use crate::audio::AudioBuffer;
use crate::dsp::{istft, stft, Spectrogram, StftConfig};
use crate::error::{FsvError, Result};

type C64 = Complex<f64>;

/// Floor for the per-frame variance estimate.
const LAMBDA_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WpeConfig {
    /// Prediction filter taps per frequency bin.
    pub taps: usize,
    /// Prediction delay in STFT frames.
    pub delay: usize,
    pub iterations: usize,
    /// Scale for the ridge added to the normal equations, relative to the
    /// mean observed power in the bin.
    pub regularization: f64,
    pub stft: StftConfig,
}

impl WpeConfig {
    /// 10 taps, delay 3, 3 iterations, 32 ms / 8 ms sqrt-Hann STFT.
    pub fn default_at(sample_rate: u32) -> Self {
        WpeConfig {
            taps: 10,
            delay: 3,
            iterations: 3,
            regularization: 1e-6,
            stft: StftConfig::for_wpe(sample_rate),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.delay < 1 || self.iterations < 1 || self.regularization <= 0.0 {
            return Err(FsvError::config(
                "wpe needs delay >= 1, iterations >= 1, regularization > 0",
            ));
        }
        Ok(())
    }
}

/// One WPE update for a single frequency bin: estimate variances from the
/// current dereverberated signal, solve the regularized normal equations
/// for the prediction filter, and re-predict.
///
/// Returns the filter and the new estimate. With `taps = 0` this is the
/// identity (useful as a degenerate baseline in tests).
pub fn wpe_bin_iterate(
    observed: &[C64],
    current: &[C64],
    config: &WpeConfig,
) -> Result<(Vec<C64>, Vec<C64>)> {
    if observed.len() != current.len() {
        return Err(FsvError::DimMismatch(format!(
            "observation has {} frames, estimate {}",
            observed.len(),
            current.len()
        )));
    }
    let k = config.taps;
    if k == 0 {
        return Ok((Vec::new(), observed.to_vec()));
    }
    let t_total = observed.len();
    let start = config.delay + k - 1;
    if t_total <= start {
        return Err(FsvError::AudioTooShort {
            got: t_total,
            need: start + 1,
        });
    }

    // variance estimates from the current signal, floored
    let lambda: Vec<f64> = current
        .iter()
        .map(|d| d.norm_sqr().max(LAMBDA_FLOOR))
        .collect();

    // accumulate R = sum y~ y~^H / lambda and p = sum y~ y* / lambda
    let mut r = DMatrix::<C64>::zeros(k, k);
    let mut p = DVector::<C64>::zeros(k);
    for t in start..t_total {
        let inv_l = 1.0 / lambda[t];
        // stacked delayed taps y~_t = [y_{t-delay}, ..., y_{t-delay-k+1}]
        for a in 0..k {
            let ya = observed[t - config.delay - a];
            for b in 0..k {
                let yb = observed[t - config.delay - b];
                r[(a, b)] += ya * yb.conj() * inv_l;
            }
            p[a] += ya * observed[t].conj() * inv_l;
        }
    }
    let mean_power: f64 =
        observed.iter().map(|y| y.norm_sqr()).sum::<f64>() / t_total as f64;
    let ridge = config.regularization * mean_power.max(LAMBDA_FLOOR);
    for a in 0..k {
        r[(a, a)] += C64::new(ridge, 0.0);
    }

    let g = r
        .lu()
        .solve(&p)
        .ok_or_else(|| FsvError::config("wpe normal equations singular"))?;

    let mut estimate = observed.to_vec();
    for (t, est) in estimate.iter_mut().enumerate().skip(start) {
        let mut tail = C64::new(0.0, 0.0);
        for a in 0..k {
            // d_t = y_t - g^H y~_t
            tail += g[a].conj() * observed[t - config.delay - a];
        }
        *est = observed[t] - tail;
    }
    Ok((g.iter().copied().collect(), estimate))
}

/// The variance-normalized WPE objective for one bin:
/// `sum_t log lambda_t + |d_t|^2 / lambda_t` with `lambda` floored.
pub fn wpe_bin_objective(estimate: &[C64]) -> f64 {
    estimate
        .iter()
        .map(|d| {
            let l = d.norm_sqr().max(LAMBDA_FLOOR);
            l.ln() + d.norm_sqr() / l
        })
        .sum()
}

/// One full WPE iteration over every bin of a spectrogram. Returns per-bin
/// filters alongside the new estimate.
pub fn wpe_iterate_once(
    observed: &Spectrogram,
    current: &Spectrogram,
    config: &WpeConfig,
) -> Result<(Vec<Vec<C64>>, Spectrogram)> {
    if observed.n_bins() != current.n_bins() || observed.n_frames() != current.n_frames() {
        return Err(FsvError::DimMismatch(
            "observation and estimate spectrogram shapes differ".into(),
        ));
    }
    let results: Vec<(Vec<C64>, Vec<C64>)> = observed
        .bins
        .par_iter()
        .zip(current.bins.par_iter())
        .map(|(obs, cur)| wpe_bin_iterate(obs, cur, config))
        .collect::<Result<_>>()?;
    let mut filters = Vec::with_capacity(results.len());
    let mut new_estimate = current.clone();
    for (f, (filter, est)) in results.into_iter().enumerate() {
        filters.push(filter);
        new_estimate.bins[f] = est;
    }
    Ok((filters, new_estimate))
}

/// Dereverberate a time-domain signal. Output length equals input length.
pub fn wpe_dereverberate(audio: &AudioBuffer, config: &WpeConfig) -> Result<AudioBuffer> {
    config.validate()?;
    let observed = stft(audio, &config.stft)?;
    let min_frames = config.taps + config.delay + 2;
    if observed.n_frames() < min_frames {
        return Err(FsvError::AudioTooShort {
            got: observed.n_frames(),
            need: min_frames,
        });
    }
    let mut estimate = observed.clone();
    for _ in 0..config.iterations {
        let (_, next) = wpe_iterate_once(&observed, &estimate, config)?;
        estimate = next;
    }
    istft(&estimate)
}
