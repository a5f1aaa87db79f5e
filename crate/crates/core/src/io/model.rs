//! Versioned model container.
//!
//! One file carries one or more model sections behind a common header:
//!
//! ```text
//! magic "FSVM" | u16 version | u8 section count
//! per section: u8 kind | u64 payload length | payload
//! ```
//!
//! Everything is little-endian and f64 matrices are row-major. Section kinds:
//! 1 = full-covariance GMM-UBM, 2 = total-variability matrix, 3 = toy
//! embedding network. Readers skip unknown kinds (the length prefix makes
//! that safe), so files written by newer code with extra sections still load
//! as long as the sections they need are present.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::embedder::{AffineLayer, Pooling, ToyEmbedNet};
use crate::error::{FsvError, Result};
use crate::gmm::{GmmUbm, TotalVariabilityModel};

const MODEL_MAGIC: &[u8; 4] = b"FSVM";
const MODEL_VERSION: u16 = 1;

const SECTION_UBM: u8 = 1;
const SECTION_TMATRIX: u8 = 2;
const SECTION_EMBEDDER: u8 = 3;

/// Saves a UBM on its own (one section of kind 1).
pub fn save_ubm(path: &Path, ubm: &GmmUbm) -> Result<()> {
    let sections = vec![(SECTION_UBM, encode_ubm(ubm))];
    write_container(path, &sections)
}

pub fn load_ubm(path: &Path) -> Result<GmmUbm> {
    let sections = read_container(path)?;
    let payload = find_section(&sections, SECTION_UBM, path)?;
    decode_ubm(&mut &payload[..]).map_err(|e| locate(path, e))
}

/// Saves a complete i-vector extractor: the UBM section plus the T-matrix
/// section, in that order.
pub fn save_ivector_extractor(path: &Path, model: &TotalVariabilityModel) -> Result<()> {
    let sections = vec![
        (SECTION_UBM, encode_ubm(model.ubm())),
        (SECTION_TMATRIX, encode_tmatrix(model.t())),
    ];
    write_container(path, &sections)
}

pub fn load_ivector_extractor(path: &Path) -> Result<TotalVariabilityModel> {
    let sections = read_container(path)?;
    let ubm_payload = find_section(&sections, SECTION_UBM, path)?;
    let t_payload = find_section(&sections, SECTION_TMATRIX, path)?;
    let ubm = decode_ubm(&mut &ubm_payload[..]).map_err(|e| locate(path, e))?;
    let t = decode_tmatrix(&mut &t_payload[..]).map_err(|e| locate(path, e))?;
    TotalVariabilityModel::new(t, ubm)
}

pub fn save_embedder(path: &Path, net: &ToyEmbedNet) -> Result<()> {
    let sections = vec![(SECTION_EMBEDDER, encode_embedder(net))];
    write_container(path, &sections)
}

pub fn load_embedder(path: &Path) -> Result<ToyEmbedNet> {
    let sections = read_container(path)?;
    let payload = find_section(&sections, SECTION_EMBEDDER, path)?;
    decode_embedder(&mut &payload[..]).map_err(|e| locate(path, e))
}

fn locate(path: &Path, e: FsvError) -> FsvError {
    FsvError::Format(format!("{}: {e}", path.display()))
}

fn section_name(kind: u8) -> &'static str {
    match kind {
        SECTION_UBM => "GMM-UBM",
        SECTION_TMATRIX => "T-matrix",
        SECTION_EMBEDDER => "embedder",
        _ => "unknown",
    }
}

fn write_container(path: &Path, sections: &[(u8, Vec<u8>)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&MODEL_VERSION.to_le_bytes())?;
    out.write_all(&[sections.len() as u8])?;
    for (kind, payload) in sections {
        out.write_all(&[*kind])?;
        out.write_all(&(payload.len() as u64).to_le_bytes())?;
        out.write_all(payload)?;
    }
    Ok(())
}

fn read_container(path: &Path) -> Result<Vec<(u8, Vec<u8>)>> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    decode_container(&mut input).map_err(|e| locate(path, e))
}

fn decode_container<R: Read>(input: &mut R) -> Result<Vec<(u8, Vec<u8>)>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(FsvError::Format("bad model container magic".into()));
    }
    let mut version_bytes = [0u8; 2];
    input.read_exact(&mut version_bytes)?;
    let version = u16::from_le_bytes(version_bytes);
    if version != MODEL_VERSION {
        return Err(FsvError::Format(format!(
            "unsupported model container version {version} (expected {MODEL_VERSION})"
        )));
    }
    let mut count = [0u8; 1];
    input.read_exact(&mut count)?;
    let mut sections = Vec::with_capacity(count[0] as usize);
    for _ in 0..count[0] {
        let mut kind = [0u8; 1];
        input.read_exact(&mut kind)?;
        let mut len_bytes = [0u8; 8];
        input.read_exact(&mut len_bytes)?;
        let len = u64::from_le_bytes(len_bytes) as usize;
        let mut payload = vec![0u8; len];
        input.read_exact(&mut payload)?;
        sections.push((kind[0], payload));
    }
    Ok(sections)
}

fn find_section<'a>(sections: &'a [(u8, Vec<u8>)], kind: u8, path: &Path) -> Result<&'a [u8]> {
    sections
        .iter()
        .find(|(k, _)| *k == kind)
        .map(|(_, payload)| payload.as_slice())
        .ok_or_else(|| {
            FsvError::Format(format!(
                "{}: model container has no {} section",
                path.display(),
                section_name(kind)
            ))
        })
}

fn encode_ubm(ubm: &GmmUbm) -> Vec<u8> {
    let c = ubm.n_components();
    let d = ubm.dim();
    let mut buf = Vec::new();
    buf.extend_from_slice(&(c as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for &w in ubm.weights() {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    push_matrix_values(&mut buf, ubm.means());
    for cov in ubm.covariances() {
        push_matrix_values(&mut buf, cov);
    }
    buf
}

fn decode_ubm<R: Read>(input: &mut R) -> Result<GmmUbm> {
    let c = read_u32(input)? as usize;
    let d = read_u32(input)? as usize;
    let mut weights = Vec::with_capacity(c);
    for _ in 0..c {
        weights.push(read_f64(input)?);
    }
    let means = read_matrix(input, c, d)?;
    let mut covariances = Vec::with_capacity(c);
    for _ in 0..c {
        covariances.push(read_matrix(input, d, d)?);
    }
    GmmUbm::new(weights, means, covariances)
}

fn encode_tmatrix(t: &DMatrix<f64>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
    push_matrix_values(&mut buf, t);
    buf
}

fn decode_tmatrix<R: Read>(input: &mut R) -> Result<DMatrix<f64>> {
    let rows = read_u32(input)? as usize;
    let rank = read_u32(input)? as usize;
    read_matrix(input, rows, rank)
}

fn encode_embedder(net: &ToyEmbedNet) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.push(match net.pooling() {
        Pooling::Mean => 0,
        Pooling::MeanStd => 1,
    });
    buf.push(net.encoder().len() as u8);
    for layer in net.encoder() {
        push_layer(&mut buf, layer);
    }
    push_layer(&mut buf, net.embed_layer());
    let classifier = net.classifier();
    buf.extend_from_slice(&(classifier.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(classifier.ncols() as u32).to_le_bytes());
    push_matrix_values(&mut buf, classifier);
    buf
}

fn decode_embedder<R: Read>(input: &mut R) -> Result<ToyEmbedNet> {
    let mut head = [0u8; 2];
    input.read_exact(&mut head)?;
    let pooling = match head[0] {
        0 => Pooling::Mean,
        1 => Pooling::MeanStd,
        other => return Err(FsvError::Format(format!("bad pooling code {other}"))),
    };
    let n_layers = head[1] as usize;
    let mut encoder = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        encoder.push(read_layer(input)?);
    }
    let embed = read_layer(input)?;
    let n_classes = read_u32(input)? as usize;
    let embed_dim = read_u32(input)? as usize;
    let classifier = read_matrix(input, n_classes, embed_dim)?;
    ToyEmbedNet::from_parts(encoder, pooling, embed, classifier)
}

fn push_layer(buf: &mut Vec<u8>, layer: &AffineLayer) {
    let w = layer.weight();
    buf.extend_from_slice(&(w.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(w.ncols() as u32).to_le_bytes());
    push_matrix_values(buf, w);
    for &v in layer.bias().iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_layer<R: Read>(input: &mut R) -> Result<AffineLayer> {
    let out_dim = read_u32(input)? as usize;
    let in_dim = read_u32(input)? as usize;
    let w = read_matrix(input, out_dim, in_dim)?;
    let mut b = DVector::<f64>::zeros(out_dim);
    for i in 0..out_dim {
        b[i] = read_f64(input)?;
    }
    AffineLayer::new(w, b)
}

fn push_matrix_values(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            buf.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

fn read_matrix<R: Read>(input: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut bytes = vec![0u8; rows * cols * 8];
    input.read_exact(&mut bytes)?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
