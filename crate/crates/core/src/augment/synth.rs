//! Deterministic synthetic speech-like signals and noise for tests and
//! desk-scale experiments: a pulse-train-through-formant-resonator "voice"
//! with per-speaker parameters, and a colored-noise generator standing in
//! for real background recordings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::AudioBuffer;

/// Speaker-specific synthesis parameters, drawn deterministically from a
/// seed so a given speaker id always sounds the same.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoiceProfile {
    /// Fundamental frequency in Hz.
    pub f0: f64,
    /// Formant center frequencies in Hz.
    pub formants: [f64; 3],
    /// Formant bandwidths in Hz.
    pub bandwidths: [f64; 3],
}

impl VoiceProfile {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        VoiceProfile {
            f0: rng.random_range(90.0..250.0),
            formants: [
                rng.random_range(300.0..850.0),
                rng.random_range(950.0..2300.0),
                rng.random_range(2400.0..3400.0),
            ],
            bandwidths: [
                rng.random_range(60.0..110.0),
                rng.random_range(70.0..130.0),
                rng.random_range(90.0..160.0),
            ],
        }
    }
}

/// Two-pole resonator applied in place.
fn resonate(samples: &mut [f64], freq: f64, bandwidth: f64, rate: f64) {
    let r = (-std::f64::consts::PI * bandwidth / rate).exp();
    let cos_w = (2.0 * std::f64::consts::PI * freq / rate).cos();
    let a1 = 2.0 * r * cos_w;
    let a2 = -r * r;
    // unit gain at the resonance peak, approximately
    let gain = (1.0 - r) * (1.0 - 2.0 * r * cos_w + r * r).sqrt();
    let (mut y1, mut y2) = (0.0, 0.0);
    for s in samples.iter_mut() {
        let y = gain * *s + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        *s = y;
    }
}

/// Synthesize one utterance for a voice: glottal-like pulse train with
/// pitch drift and syllabic amplitude modulation, shaped by the speaker's
/// formant resonators, plus a little breath noise. Peak-normalized to 0.5.
pub fn synth_utterance(
    voice: &VoiceProfile,
    utterance_seed: u64,
    secs: f64,
    rate: u32,
) -> AudioBuffer {
    let fs = rate as f64;
    let n = (secs * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed.wrapping_add(0x51_7e_a5));
    let normal = Normal::new(0.0, 1.0).unwrap();

    // per-utterance variation: pitch offset, formant wobble, syllable rate
    let pitch_scale: f64 = rng.random_range(0.95..1.05);
    let formant_scale: f64 = rng.random_range(0.97..1.03);
    let syllable_hz: f64 = rng.random_range(2.5..4.5);
    let vibrato_hz: f64 = rng.random_range(4.0..7.0);

    // pulse train with slow vibrato
    let mut samples = vec![0.0; n];
    let mut phase = 0.0;
    for (i, s) in samples.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let f0 = voice.f0
            * pitch_scale
            * (1.0 + 0.02 * (2.0 * std::f64::consts::PI * vibrato_hz * t).sin());
        phase += f0 / fs;
        if phase >= 1.0 {
            phase -= 1.0;
            *s = 1.0;
        }
        // breath noise floor
        *s += 0.02 * normal.sample(&mut rng);
    }

    for k in 0..3 {
        resonate(
            &mut samples,
            voice.formants[k] * formant_scale,
            voice.bandwidths[k],
            fs,
        );
    }

    // syllable-like energy modulation, never fully silent
    for (i, s) in samples.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let env = 0.35 + 0.65 * (std::f64::consts::PI * syllable_hz * t).sin().powi(2);
        *s *= env;
    }

    let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-12);
    for s in samples.iter_mut() {
        *s *= 0.5 / peak;
    }
    AudioBuffer::new(samples, rate).expect("synthesized signal is finite")
}

/// Low-pass filtered white noise with unit RMS scaled to `rms`.
pub fn colored_noise(seed: u64, secs: f64, rate: u32, rms: f64) -> AudioBuffer {
    let n = (secs * rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0a01_5e00);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut samples = vec![0.0; n];
    let a = 0.92;
    let mut y = 0.0;
    for s in samples.iter_mut() {
        y = a * y + (1.0 - a) * normal.sample(&mut rng);
        *s = y;
    }
    let measured = (samples.iter().map(|s| s * s).sum::<f64>() / n as f64)
        .sqrt()
        .max(1e-12);
    for s in samples.iter_mut() {
        *s *= rms / measured;
    }
    AudioBuffer::new(samples, rate).expect("noise is finite")
}
