//! Binary feature archive.
//!
//! Layout (little-endian): magic `FSV1`, u32 frame count, u32 dimension,
//! u8 feature-kind code, f64 frame shift in seconds, then the f32 feature
//! payload in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::dsp::{FeatureKind, FeatureMatrix};
use crate::error::{FsvError, Result};

const FEATURE_MAGIC: &[u8; 4] = b"FSV1";

pub fn write_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    encode_features(&mut file, features)
}

pub fn encode_features<W: Write>(out: &mut W, features: &FeatureMatrix) -> Result<()> {
    out.write_all(FEATURE_MAGIC)?;
    out.write_all(&(features.n_frames() as u32).to_le_bytes())?;
    out.write_all(&(features.dim() as u32).to_le_bytes())?;
    out.write_all(&[features.kind().code()])?;
    out.write_all(&features.frame_shift().to_le_bytes())?;
    for row in features.frames() {
        for &v in row {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    decode_features(&mut file)
        .map_err(|e| FsvError::Format(format!("{}: {e}", path.display())))
}

pub fn decode_features<R: Read>(input: &mut R) -> Result<FeatureMatrix> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(FsvError::Format("bad feature archive magic".into()));
    }
    let n_frames = read_u32(input)? as usize;
    let dim = read_u32(input)? as usize;
    let mut kind_byte = [0u8; 1];
    input.read_exact(&mut kind_byte)?;
    let kind = FeatureKind::from_code(kind_byte[0])?;
    if dim != kind.dim() {
        return Err(FsvError::Format(format!(
            "archive dim {dim} does not match kind {} ({})",
            kind.name(),
            kind.dim()
        )));
    }
    let mut shift_bytes = [0u8; 8];
    input.read_exact(&mut shift_bytes)?;
    let frame_shift = f64::from_le_bytes(shift_bytes);
    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![0u8; dim * 4];
    for _ in 0..n_frames {
        input.read_exact(&mut buf)?;
        frames.push(
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
        );
    }
    FeatureMatrix::new(frames, frame_shift, kind)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_features() -> FeatureMatrix {
        let frames: Vec<Vec<f64>> = (0..7)
            .map(|t| (0..30).map(|d| (t * 30 + d) as f64 * 0.125).collect())
            .collect();
        FeatureMatrix::new(frames, 0.01, FeatureKind::Mfcc30).unwrap()
    }

    #[test]
    fn roundtrip_preserves_everything_at_f32_precision() {
        let features = toy_features();
        let mut buf = Vec::new();
        encode_features(&mut buf, &features).unwrap();
        let back = decode_features(&mut buf.as_slice()).unwrap();
        assert_eq!(back.kind(), FeatureKind::Mfcc30);
        assert_eq!(back.n_frames(), 7);
        assert_eq!(back.frame_shift(), 0.01);
        for (a, b) in features.frames().iter().zip(back.frames()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let mut buf = Vec::new();
        encode_features(&mut buf, &toy_features()).unwrap();
        buf[0] = b'X';
        assert!(decode_features(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut buf = Vec::new();
        encode_features(&mut buf, &toy_features()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(decode_features(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.fsv1");
        let features = toy_features();
        write_features(&path, &features).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back.n_frames(), features.n_frames());
    }
}
