use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;

use super::NetError;

/// Precomputed latents keyed by study id, read from JSONL lines of the form
/// `{"id": ..., "vector": [...]}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalLatents {
    vectors: HashMap<String, Vec<f32>>,
    dim: usize,
}

#[derive(Deserialize)]
struct Line {
    id: String,
    vector: Vec<f32>,
}

impl ExternalLatents {
    pub fn read<R: BufRead>(reader: R, dim: usize) -> Result<Self, NetError> {
        let mut vectors = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line).map_err(|e| NetError::Format {
                field: "latents",
                detail: format!("line {}: {e}", i + 1),
            })?;
            if l.vector.len() != dim {
                return Err(NetError::Format {
                    field: "latents",
                    detail: format!("line {}: vector has {} values, expected {dim}", i + 1, l.vector.len()),
                });
            }
            vectors.insert(l.id, l.vector);
        }
        Ok(ExternalLatents { vectors, dim })
    }

    pub fn load(path: impl AsRef<Path>, dim: usize) -> Result<Self, NetError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?), dim)
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}
