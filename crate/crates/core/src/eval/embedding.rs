//! Embedding-table expansion for the unified id space.
//!
//! Text rows are zero placeholders for weights that would come from a
//! pretrained language model. Base VQ, extended and special rows are drawn
//! i.i.d. from `N(0, std = sqrt(2 / d))` (He initialization).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{write_header, OffsetReader};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"VBPE";
pub const EMBEDDING_VERSION: u16 = 1;

/// Number of special rows (BOI, EOI) appended after the visual block.
pub const SPECIAL_ROWS: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub n_text: u32,
    pub base_k: u32,
    pub ext_size: u32,
    pub dim: u32,
    pub seed: u64,
}

impl EmbeddingSpec {
    pub fn total_rows(&self) -> u64 {
        self.n_text as u64 + self.visual_rows() + SPECIAL_ROWS
    }

    /// Rows for base VQ plus extended tokens.
    pub fn visual_rows(&self) -> u64 {
        self.base_k as u64 + self.ext_size as u64
    }

    pub fn he_std(&self) -> f64 {
        (2.0 / self.dim as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingTable {
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows `[start, end)` as one flat slice.
    pub fn block(&self, start: usize, end: usize) -> &[f32] {
        &self.data[start * self.dim..end * self.dim]
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, EMBEDDING_MAGIC, EMBEDDING_VERSION)?;
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = OffsetReader::new(r);
        r.header(EMBEDDING_MAGIC, EMBEDDING_VERSION)?;
        let rows = r.u32("row count")? as usize;
        let dim = r.u32("dimension")? as usize;
        let mut raw = vec![0u8; rows * dim * 4];
        r.exact(&mut raw, "embedding values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Self { rows, dim, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

pub fn expand_embeddings(spec: &EmbeddingSpec) -> Result<EmbeddingTable> {
    if spec.dim == 0 {
        return Err(Error::InvalidParameter(
            "embedding dimension must be >= 1".into(),
        ));
    }
    let rows = spec.total_rows();
    if rows > u32::MAX as u64 {
        return Err(Error::InvalidParameter(format!(
            "{rows} rows do not fit the file header"
        )));
    }
    let (rows, dim) = (rows as usize, spec.dim as usize);
    let normal =
        Normal::new(0.0f64, spec.he_std()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let text = spec.n_text as usize * dim;
    let mut data = vec![0.0f32; rows * dim];
    for x in &mut data[text..] {
        *x = normal.sample(&mut rng) as f32;
    }
    Ok(EmbeddingTable { rows, dim, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scale_arithmetic() {
        let spec = EmbeddingSpec {
            n_text: 32_000,
            base_k: 8_192,
            ext_size: 16_384,
            dim: 4096,
            seed: 0,
        };
        assert_eq!(spec.total_rows() - SPECIAL_ROWS, 56_576);
        assert!((spec.he_std() - 0.0221).abs() < 1e-4);
    }

    #[test]
    fn text_rows_are_zero_and_layout_matches() {
        let spec = EmbeddingSpec {
            n_text: 3,
            base_k: 4,
            ext_size: 2,
            dim: 8,
            seed: 1,
        };
        let t = expand_embeddings(&spec).unwrap();
        assert_eq!(t.rows(), 11);
        assert!(t.block(0, 3).iter().all(|&x| x == 0.0));
        assert!(t.block(3, 11).iter().all(|&x| x != 0.0));
        assert_eq!(t, expand_embeddings(&spec).unwrap());
    }

    #[test]
    fn zero_dim_rejected() {
        let spec = EmbeddingSpec {
            n_text: 1,
            base_k: 1,
            ext_size: 0,
            dim: 0,
            seed: 0,
        };
        assert!(matches!(
            expand_embeddings(&spec),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let spec = EmbeddingSpec {
            n_text: 2,
            base_k: 2,
            ext_size: 1,
            dim: 3,
            seed: 5,
        };
        let t = expand_embeddings(&spec).unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(&buf[..6], b"VBPE\x01\x00");
        assert_eq!(buf.len(), 14 + 7 * 3 * 4);
        assert_eq!(EmbeddingTable::read(&buf[..]).unwrap(), t);
    }
}
