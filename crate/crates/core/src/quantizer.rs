//! Nearest-codebook-entry quantizer plus a small Lloyd's k-means fitter.
//!
//! The fitter is a toy stand-in for a trained VQ-GAN codebook. It exists so
//! the pipeline can produce structured grids end to end; it makes no claim
//! to reproduce learned visual codes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::{write_header, OffsetReader};
use crate::grid::QuantGrid;

pub const CODEBOOK_MAGIC: &[u8; 4] = b"VBPC";
pub const CODEBOOK_VERSION: u16 = 1;

const LLOYD_MAX_ITERS: usize = 100;

/// `K` feature vectors of common dimension `z`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    entries: Vec<f32>,
}

impl Codebook {
    pub fn new(dim: usize, entries: Vec<f32>) -> Result<Self> {
        if dim == 0 || entries.is_empty() || !entries.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form a non-empty codebook of dimension {dim}",
                entries.len()
            )));
        }
        Ok(Self { dim, entries })
    }

    pub fn from_vectors(vectors: &[Vec<f32>]) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Shape("codebook vectors differ in dimension".into()));
        }
        Self::new(dim, vectors.concat())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.entries.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn entry(&self, k: usize) -> &[f32] {
        &self.entries[k * self.dim..(k + 1) * self.dim]
    }

    pub fn entries(&self) -> impl Iterator<Item = &[f32]> {
        self.entries.chunks_exact(self.dim)
    }

    /// Index of the closest entry under squared Euclidean distance; ties go
    /// to the lowest index.
    pub fn nearest(&self, v: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, e) in self.entries().enumerate() {
            let d = squared_distance(v, e);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Replaces every cell of `grid` by its codebook vector.
    pub fn to_patches(&self, grid: &QuantGrid) -> Result<PatchGrid> {
        let mut data = Vec::with_capacity(grid.len() * self.dim);
        for &q in grid.cells() {
            if q as usize >= self.len() {
                return Err(Error::IndexOutOfRange {
                    value: q as u64,
                    limit: self.len() as u64,
                });
            }
            data.extend_from_slice(self.entry(q as usize));
        }
        PatchGrid::new(grid.height(), grid.width(), self.dim, data)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, CODEBOOK_MAGIC, CODEBOOK_VERSION)?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for x in &self.entries {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = OffsetReader::new(r);
        r.header(CODEBOOK_MAGIC, CODEBOOK_VERSION)?;
        let k = r.u32("codebook size")? as usize;
        let z = r.u32("codebook dimension")? as usize;
        let mut raw = vec![0u8; k * z * 4];
        r.exact(&mut raw, "codebook entries")?;
        let entries = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new(z, entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

/// `height x width` patches, each a `dim`-vector, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    height: u32,
    width: u32,
    dim: usize,
    data: Vec<f32>,
}

impl PatchGrid {
    pub fn new(height: u32, width: u32, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height as usize * width as usize * dim {
            return Err(Error::Shape(format!(
                "{} values for {height}x{width} patches of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patches(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1))
    }
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Maps every patch to the index of its nearest codebook entry.
pub fn quantize(patches: &PatchGrid, codebook: &Codebook) -> Result<QuantGrid> {
    if patches.dim != codebook.dim() {
        return Err(Error::Shape(format!(
            "patch dimension {} does not match codebook dimension {}",
            patches.dim,
            codebook.dim()
        )));
    }
    let cells = patches
        .data
        .par_chunks_exact(patches.dim)
        .map(|p| codebook.nearest(p) as u32)
        .collect();
    QuantGrid::new(patches.height, patches.width, cells)
}

/// Lloyd's k-means with k-means++ seeding driven by `seed`.
pub fn fit_toy_codebook(patches: &[Vec<f32>], k: usize, seed: u64) -> Result<Codebook> {
    if patches.is_empty() {
        return Err(Error::EmptyCorpus("no patches to fit a codebook on"));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("codebook size must be >= 1".into()));
    }
    let dim = patches[0].len();
    if dim == 0 || patches.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape(
            "patches must share a non-zero dimension".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.random_range(0..patches.len());
    centroids.push(to_f64(&patches[first]));
    let mut nearest_d: Vec<f64> = patches
        .iter()
        .map(|p| sq_dist_f64(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = nearest_d.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = patches.len() - 1;
            for (i, &d) in nearest_d.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // float slack can run past the last positive weight
            if nearest_d[chosen] == 0.0 {
                chosen = nearest_d.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            // fewer distinct patches than k: duplicate
            rng.random_range(0..patches.len())
        };
        let c = to_f64(&patches[pick]);
        for (d, p) in nearest_d.iter_mut().zip(patches) {
            *d = d.min(sq_dist_f64(p, &c));
        }
        centroids.push(c);
    }

    let mut assignment = vec![usize::MAX; patches.len()];
    for _ in 0..LLOYD_MAX_ITERS {
        let next: Vec<usize> = patches
            .par_iter()
            .map(|p| nearest_f64(p, &centroids))
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in patches.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, &x) in sums[a].iter_mut().zip(p) {
                *s += x as f64;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            // empty clusters keep their previous centroid
            if n > 0 {
                *c = s.into_iter().map(|x| x / n as f64).collect();
            }
        }
    }

    let entries = centroids.into_iter().flatten().map(|x| x as f32).collect();
    Codebook::new(dim, entries)
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn sq_dist_f64(p: &[f32], c: &[f64]) -> f64 {
    p.iter()
        .zip(c)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

fn nearest_f64(p: &[f32], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist_f64(p, c);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}
