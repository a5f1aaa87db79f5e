//! Minimal RIFF/WAV reader and writer.
//!
//! Supports mono 16-bit signed PCM (the toolkit's canonical audio format)
//! plus 32-bit IEEE float, which is used for impulse responses whose sample
//! values do not fit the 16-bit grid.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::audio::AudioBuffer;
use crate::error::{FsvError, Result};

const FMT_PCM: u16 = 1;
const FMT_IEEE_FLOAT: u16 = 3;

/// Sample encoding used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let mut reader = BufReader::new(File::open(path.as_ref())?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    parse_wav(&bytes)
}

pub fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(FsvError::Format("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + size).min(bytes.len());
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(FsvError::Format("fmt chunk too small".into()));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        pos = pos + 8 + size + (size & 1);
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| FsvError::Format("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| FsvError::Format("missing data chunk".into()))?;
    if channels != 1 {
        return Err(FsvError::Format(format!(
            "expected mono audio, got {channels} channels"
        )));
    }
    let samples = match (format, bits) {
        (FMT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (FMT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        _ => {
            return Err(FsvError::Format(format!(
                "unsupported wav encoding: format tag {format}, {bits} bits"
            )))
        }
    };
    AudioBuffer::new(samples, rate)
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer, format: WavFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    let bytes = encode_wav(audio, format);
    w.write_all(&bytes)?;
    Ok(())
}

pub fn encode_wav(audio: &AudioBuffer, format: WavFormat) -> Vec<u8> {
    let (format_tag, bits, data): (u16, u16, Vec<u8>) = match format {
        WavFormat::Pcm16 => {
            let mut d = Vec::with_capacity(audio.len() * 2);
            for &s in audio.samples() {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                d.extend_from_slice(&v.to_le_bytes());
            }
            (FMT_PCM, 16, d)
        }
        WavFormat::Float32 => {
            let mut d = Vec::with_capacity(audio.len() * 4);
            for &s in audio.samples() {
                d.extend_from_slice(&(s as f32).to_le_bytes());
            }
            (FMT_IEEE_FLOAT, 32, d)
        }
    };
    let rate = audio.sample_rate();
    let block_align = bits / 8;
    let byte_rate = rate * block_align as u32;

    let mut out = Vec::with_capacity(44 + data.len());
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format_tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(&data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_roundtrip() {
        let audio =
            AudioBuffer::new((0..100).map(|i| (i as f64 / 100.0) - 0.5).collect(), 16000).unwrap();
        let bytes = encode_wav(&audio, WavFormat::Pcm16);
        let back = parse_wav(&bytes).unwrap();
        assert_eq!(back.sample_rate(), 16000);
        assert_eq!(back.len(), 100);
        for (a, b) in audio.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 1.0 / 32768.0);
        }
    }

    #[test]
    fn float32_roundtrip() {
        let audio = AudioBuffer::new(vec![0.001, -2.5, 1.75], 8000).unwrap();
        let bytes = encode_wav(&audio, WavFormat::Float32);
        let back = parse_wav(&bytes).unwrap();
        for (a, b) in audio.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_stereo() {
        let audio = AudioBuffer::new(vec![0.0; 10], 16000).unwrap();
        let mut bytes = encode_wav(&audio, WavFormat::Pcm16);
        bytes[22] = 2; // channel count
        assert!(parse_wav(&bytes).is_err());
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_wav(b"not a wav file at all").is_err());
    }
}
