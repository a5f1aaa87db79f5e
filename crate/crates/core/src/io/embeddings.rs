//! Binary embedding archive.
//!
//! Layout (little-endian): magic `FSVE`, u16 extractor-name length + UTF-8
//! bytes, u8 dereverb flag, u32 utterance count, u32 dimension, the id
//! string table (u16 length + UTF-8 per id), then the f32 embedding matrix
//! in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::embedding::{Embedding, EmbeddingSet};
use crate::error::{FsvError, Result};

const EMBEDDING_MAGIC: &[u8; 4] = b"FSVE";

pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    encode_embeddings(&mut file, set)
}

pub fn encode_embeddings<W: Write>(out: &mut W, set: &EmbeddingSet) -> Result<()> {
    let name = set.extractor().as_bytes();
    if name.len() > u16::MAX as usize {
        return Err(FsvError::Format("extractor name too long".into()));
    }
    out.write_all(EMBEDDING_MAGIC)?;
    out.write_all(&(name.len() as u16).to_le_bytes())?;
    out.write_all(name)?;
    out.write_all(&[set.dereverb() as u8])?;
    out.write_all(&(set.len() as u32).to_le_bytes())?;
    out.write_all(&(set.dim() as u32).to_le_bytes())?;
    for id in set.ids() {
        let bytes = id.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(FsvError::Format(format!("utterance id {id} too long")));
        }
        out.write_all(&(bytes.len() as u16).to_le_bytes())?;
        out.write_all(bytes)?;
    }
    for &v in set.matrix_data() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    decode_embeddings(&mut file)
        .map_err(|e| FsvError::Format(format!("{}: {e}", path.display())))
}

pub fn decode_embeddings<R: Read>(input: &mut R) -> Result<EmbeddingSet> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(FsvError::Format("bad embedding archive magic".into()));
    }
    let extractor = read_string(input)?;
    let mut flag = [0u8; 1];
    input.read_exact(&mut flag)?;
    let dereverb = match flag[0] {
        0 => false,
        1 => true,
        other => {
            return Err(FsvError::Format(format!(
                "bad dereverb flag byte {other}"
            )))
        }
    };
    let count = read_u32(input)? as usize;
    let dim = read_u32(input)? as usize;
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(read_string(input)?);
    }
    let mut set = EmbeddingSet::new(extractor, dereverb, dim)?;
    let mut buf = vec![0u8; dim * 4];
    for id in ids {
        input.read_exact(&mut buf)?;
        let values: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        set.insert(id, &Embedding::new(values)?)?;
    }
    Ok(set)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(input: &mut R) -> Result<String> {
    let mut len_bytes = [0u8; 2];
    input.read_exact(&mut len_bytes)?;
    let mut bytes = vec![0u8; u16::from_le_bytes(len_bytes) as usize];
    input.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|_| FsvError::Format("id is not valid UTF-8".into()))
}
