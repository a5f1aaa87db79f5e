//! Utterance-level embedding containers shared by the i-vector and neural
//! front-ends and consumed by the back-end.

use std::collections::HashMap;

use crate::error::{FsvError, Result};

/// A single fixed-dimensional utterance representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Wraps a raw vector. Empty or non-finite input is rejected.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(FsvError::config("embedding must have at least one dimension"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FsvError::NonFinite("embedding values".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// A collection of embeddings keyed by utterance id, together with provenance
/// describing how they were produced (which extractor, and whether the audio
/// was dereverberated first). Provenance travels with the archive so that a
/// back-end cannot silently mix embeddings from different front-ends.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    extractor: String,
    dereverb: bool,
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(extractor: impl Into<String>, dereverb: bool, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(FsvError::config("embedding dimension must be at least 1"));
        }
        Ok(Self {
            extractor: extractor.into(),
            dereverb,
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        })
    }

    /// Appends one embedding. Utterance ids must be unique within a set.
    pub fn insert(&mut self, id: impl Into<String>, embedding: &Embedding) -> Result<()> {
        let id = id.into();
        if id.is_empty() {
            return Err(FsvError::config("utterance id must be non-empty"));
        }
        if embedding.dim() != self.dim {
            return Err(FsvError::DimMismatch(format!(
                "embedding for '{}' has dim {}, set expects {}",
                id,
                embedding.dim(),
                self.dim
            )));
        }
        if self.index.contains_key(&id) {
            return Err(FsvError::config(format!("duplicate utterance id '{id}'")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(embedding.as_slice());
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), self.row(i)))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extractor(&self) -> &str {
        &self.extractor
    }

    pub fn dereverb(&self) -> bool {
        self.dereverb
    }

    /// All vectors stacked row-major, in insertion order.
    pub fn matrix_data(&self) -> &[f64] {
        &self.data
    }
}
