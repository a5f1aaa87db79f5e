//! Far-field simulation: image-source room impulse responses, RIR
//! convolution, and additive noise at a target SNR.

pub mod synth;

use rand::{Rng, SeedableRng};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::dsp::next_pow2;
use crate::error::{FsvError, Result};

/// Half-width of the windowed-sinc fractional-delay kernel (81 taps total).
const FRAC_DELAY_HALF: i64 = 40;

/// Rectangular room for the image-source method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// Interior dimensions in meters.
    pub dimensions: [f64; 3],
    /// Uniform wall absorption coefficient in (0, 1].
    pub absorption: f64,
    pub source: [f64; 3],
    pub mic: [f64; 3],
    /// Maximum total reflection count per image.
    pub max_order: u32,
    pub sample_rate: u32,
    /// Speed of sound in m/s.
    #[serde(default = "default_speed_of_sound")]
    pub c: f64,
}

fn default_speed_of_sound() -> f64 {
    343.0
}

impl RoomSpec {
    pub(crate) fn validate(&self) -> Result<()> {
        for (axis, &dim) in self.dimensions.iter().enumerate() {
            if dim <= 0.0 {
                return Err(FsvError::config(format!("room dimension {axis} not positive")));
            }
            for (name, pos) in [("source", &self.source), ("mic", &self.mic)] {
                if pos[axis] <= 0.0 || pos[axis] >= dim {
                    return Err(FsvError::config(format!(
                        "{name} axis {axis} at {} outside room of size {dim}",
                        pos[axis]
                    )));
                }
            }
        }
        if !(self.absorption > 0.0 && self.absorption <= 1.0) {
            return Err(FsvError::config("absorption must lie in (0, 1]"));
        }
        if self.source == self.mic {
            return Err(FsvError::config("source and mic coincide"));
        }
        if self.c <= 0.0 || self.sample_rate == 0 {
            return Err(FsvError::config("invalid speed of sound or sample rate"));
        }
        Ok(())
    }
}

/// Per-axis image source coordinates with reflection counts: positions
/// `2qL + s` cost `|2q|` reflections and `2qL - s` cost `|2q - 1|`.
fn axis_images(pos: f64, len: f64, max_order: u32) -> Vec<(f64, u32)> {
    let mut out = Vec::new();
    let order = max_order as i64;
    for q in -(order + 1)..=(order + 1) {
        let even = (2 * q).unsigned_abs() as u32;
        if even <= max_order {
            out.push((2.0 * q as f64 * len + pos, even));
        }
        let odd = (2 * q - 1).unsigned_abs() as u32;
        if odd <= max_order {
            out.push((2.0 * q as f64 * len - pos, odd));
        }
    }
    out
}

/// Synthesize the room impulse response by image-source enumeration up to
/// `max_order` total reflections. Each image contributes a windowed-sinc
/// fractionally delayed impulse of amplitude `beta^(reflections) / (4 pi d)`
/// at delay `d / c`, with `beta = sqrt(1 - absorption)`.
pub fn ism_rir(room: &RoomSpec) -> Result<AudioBuffer> {
    room.validate()?;
    let beta = (1.0 - room.absorption).sqrt();
    let fs = room.sample_rate as f64;
    let xs = axis_images(room.source[0], room.dimensions[0], room.max_order);
    let ys = axis_images(room.source[1], room.dimensions[1], room.max_order);
    let zs = axis_images(room.source[2], room.dimensions[2], room.max_order);

    struct Arrival {
        delay_samples: f64,
        amplitude: f64,
    }
    let mut arrivals = Vec::new();
    let mut max_delay = 0.0f64;
    for &(ix, nx) in &xs {
        for &(iy, ny) in &ys {
            if nx + ny > room.max_order {
                continue;
            }
            for &(iz, nz) in &zs {
                let order = nx + ny + nz;
                if order > room.max_order {
                    continue;
                }
                let dx = ix - room.mic[0];
                let dy = iy - room.mic[1];
                let dz = iz - room.mic[2];
                let d = (dx * dx + dy * dy + dz * dz).sqrt();
                let delay_samples = d / room.c * fs;
                max_delay = max_delay.max(delay_samples);
                arrivals.push(Arrival {
                    delay_samples,
                    amplitude: beta.powi(order as i32) / (4.0 * std::f64::consts::PI * d),
                });
            }
        }
    }

    let len = max_delay.ceil() as usize + FRAC_DELAY_HALF as usize + 2;
    let mut rir = vec![0.0; len];
    for a in &arrivals {
        let center = a.delay_samples.round() as i64;
        for k in -FRAC_DELAY_HALF..=FRAC_DELAY_HALF {
            let idx = center + k;
            if idx < 0 {
                continue;
            }
            let x = idx as f64 - a.delay_samples;
            if x.abs() > FRAC_DELAY_HALF as f64 {
                continue;
            }
            let sinc = if x == 0.0 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            };
            let window =
                0.54 + 0.46 * (std::f64::consts::PI * x / FRAC_DELAY_HALF as f64).cos();
            rir[idx as usize] += a.amplitude * sinc * window;
        }
    }
    AudioBuffer::new(rir, room.sample_rate)
}

/// Full linear convolution via FFT; output length `N + M - 1`.
pub fn convolve_rir(audio: &AudioBuffer, rir: &AudioBuffer) -> Result<AudioBuffer> {
    if audio.sample_rate() != rir.sample_rate() {
        return Err(FsvError::config(format!(
            "sample rate mismatch: audio {} Hz, rir {} Hz",
            audio.sample_rate(),
            rir.sample_rate()
        )));
    }
    if audio.is_empty() || rir.is_empty() {
        return Err(FsvError::config("cannot convolve empty signals"));
    }
    let out_len = audio.len() + rir.len() - 1;
    let n_fft = next_pow2(out_len);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let ifft = planner.plan_fft_inverse(n_fft);
    let mut a = vec![Complex64::default(); n_fft];
    let mut b = vec![Complex64::default(); n_fft];
    for (slot, &s) in a.iter_mut().zip(audio.samples()) {
        slot.re = s;
    }
    for (slot, &s) in b.iter_mut().zip(rir.samples()) {
        slot.re = s;
    }
    fft.process(&mut a);
    fft.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    ifft.process(&mut a);
    let scale = 1.0 / n_fft as f64;
    let samples = a[..out_len].iter().map(|c| c.re * scale).collect();
    AudioBuffer::new(samples, audio.sample_rate())
}

/// Add noise to speech at the requested SNR. Noise longer than the speech
/// is cropped at a deterministic pseudorandom offset; shorter noise is
/// tiled first. Output length equals the speech length.
pub fn mix_at_snr(speech: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<AudioBuffer> {
    if speech.sample_rate() != noise.sample_rate() {
        return Err(FsvError::config("speech and noise sample rates differ"));
    }
    let p_speech = mean_power(speech.samples());
    let p_noise = mean_power(noise.samples());
    if p_speech <= 0.0 {
        return Err(FsvError::config("speech is silent; SNR undefined"));
    }
    if p_noise <= 0.0 {
        return Err(FsvError::config("noise is silent; SNR undefined"));
    }
    let n = speech.len();
    // deterministic offset so repeated runs mix identically
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_0f15);
    let track: Vec<f64> = if noise.len() >= n {
        let offset = rng.random_range(0..=noise.len() - n);
        noise.samples()[offset..offset + n].to_vec()
    } else {
        let offset = rng.random_range(0..noise.len());
        (0..n)
            .map(|i| noise.samples()[(offset + i) % noise.len()])
            .collect()
    };
    let p_track = mean_power(&track);
    if p_track <= 0.0 {
        return Err(FsvError::config("selected noise segment is silent"));
    }
    let target_noise_power = p_speech / 10f64.powf(snr_db / 10.0);
    let gain = (target_noise_power / p_track).sqrt();
    let samples = speech
        .samples()
        .iter()
        .zip(&track)
        .map(|(s, v)| s + gain * v)
        .collect();
    AudioBuffer::new(samples, speech.sample_rate())
}

fn mean_power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}
