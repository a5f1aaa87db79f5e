//! Time-domain audio container.

use crate::error::{FsvError, Result};

/// Mono audio signal with its sample rate.
///
/// Samples are `f64` nominally in `[-1, 1]`; the only hard invariants are a
/// positive sample rate and finite samples (no NaN/Inf).
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(FsvError::config("sample_rate must be positive"));
        }
        if let Some(idx) = samples.iter().position(|s| !s.is_finite()) {
            return Err(FsvError::NonFinite(format!(
                "audio sample {idx} is not finite"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// All-zero buffer of the given duration.
    pub fn silence(secs: f64, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; (secs * sample_rate as f64).round() as usize],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Root mean square over all samples (0 for an empty buffer).
    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let p: f64 = self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64;
        p.sqrt()
    }

    /// Peak-normalize to `target` absolute amplitude. No-op on silence.
    pub fn normalize_peak(&mut self, target: f64) {
        let peak = self
            .samples
            .iter()
            .fold(0.0f64, |acc, &s| acc.max(s.abs()));
        if peak > 0.0 {
            let g = target / peak;
            for s in &mut self.samples {
                *s *= g;
            }
        }
    }
}
