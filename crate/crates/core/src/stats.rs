//! Adjacency statistics over a corpus of token grids and the priority
//! score `P = F + alpha * S` used to rank merge candidates.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Orientation, TokenGrid, TokenId};

pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_SIGMA: f64 = 2.0;

/// Ordered pair: `left` sits to the left of / above `right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairKey {
    pub left: TokenId,
    pub right: TokenId,
}

impl PairKey {
    pub fn new(left: TokenId, right: TokenId) -> Self {
        Self { left, right }
    }
}

/// Orientation tallies for one pair. The accumulated relative position is
/// `sum_u = (vertical, horizontal)` since `u` is `(1,0)` or `(0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub horizontal: u64,
    pub vertical: u64,
}

impl PairCounts {
    #[inline]
    pub fn count(&self) -> u64 {
        self.horizontal + self.vertical
    }

    #[inline]
    pub fn add(&mut self, orientation: Orientation) {
        match orientation {
            Orientation::Horizontal => self.horizontal += 1,
            Orientation::Vertical => self.vertical += 1,
        }
    }

    #[inline]
    pub fn merge(&mut self, other: PairCounts) {
        self.horizontal += other.horizontal;
        self.vertical += other.vertical;
    }

    pub fn sum_u(&self) -> [f64; 2] {
        [self.vertical as f64, self.horizontal as f64]
    }

    /// Mean relative position `u_bar`.
    pub fn mean_u(&self) -> [f64; 2] {
        let n = self.count() as f64;
        [self.vertical as f64 / n, self.horizontal as f64 / n]
    }

    /// Orientation with the higher tally; horizontal on a tie.
    pub fn dominant(&self) -> Orientation {
        if self.horizontal >= self.vertical {
            Orientation::Horizontal
        } else {
            Orientation::Vertical
        }
    }
}

pub type PairTable = HashMap<PairKey, PairCounts>;

/// Every shape-compatible right and below neighbor of every region in one
/// grid. Occurrences may overlap.
pub fn scan_grid(grid: &TokenGrid, table: &mut PairTable) {
    let regions = grid.regions();
    for (i, r) in regions.iter().enumerate() {
        if let Some(j) = grid.right_neighbor(i) {
            table
                .entry(PairKey::new(r.token, regions[j].token))
                .or_default()
                .add(Orientation::Horizontal);
        }
        if let Some(j) = grid.below_neighbor(i) {
            table
                .entry(PairKey::new(r.token, regions[j].token))
                .or_default()
                .add(Orientation::Vertical);
        }
    }
}

fn merge_tables(a: PairTable, b: PairTable) -> PairTable {
    let (mut big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    for (k, v) in small {
        big.entry(k).or_default().merge(v);
    }
    big
}

/// Pair tallies over a whole corpus, scanned in parallel per grid.
pub fn scan_adjacencies(corpus: &[TokenGrid]) -> PairTable {
    corpus
        .par_iter()
        .fold(PairTable::new, |mut t, g| {
            scan_grid(g, &mut t);
            t
        })
        .reduce(PairTable::new, merge_tables)
}

pub fn total_pairs(table: &PairTable) -> u64 {
    table.values().map(PairCounts::count).sum()
}

/// `F = count / total_pairs`.
pub fn frequency(counts: &PairCounts, total_pairs: u64) -> Result<f64> {
    if total_pairs == 0 {
        return Err(Error::EmptyStatistics);
    }
    Ok(counts.count() as f64 / total_pairs as f64)
}

/// Mean Gaussian-kernel similarity of each occurrence's orientation vector
/// to the mean orientation.
///
/// With `n = h + v`, a horizontal occurrence sits at squared distance
/// `2 (v/n)^2` from `u_bar` and a vertical one at `2 (h/n)^2`, so
/// `S = (h exp(-(v/n)^2 / sigma^2) + v exp(-(h/n)^2 / sigma^2)) / n`.
pub fn spatial_consistency(counts: &PairCounts, sigma: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    let n = counts.count();
    if n == 0 {
        return Err(Error::EmptyStatistics);
    }
    let n = n as f64;
    let h = counts.horizontal as f64;
    let v = counts.vertical as f64;
    let s2 = sigma * sigma;
    let fh = h / n;
    let fv = v / n;
    Ok((h * (-(fv * fv) / s2).exp() + v * (-(fh * fh) / s2).exp()) / n)
}

/// Spatial kernel `d(u1, u2) = exp(-|u1 - u2|^2 / (2 sigma^2))`.
pub fn kernel(u1: [f64; 2], u2: [f64; 2], sigma: f64) -> f64 {
    let dx = u1[0] - u2[0];
    let dy = u1[1] - u2[1];
    (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
}

#[inline]
pub fn priority(frequency: f64, spatial: f64, alpha: f64) -> f64 {
    frequency + alpha * spatial
}

/// A scored merge candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub key: PairKey,
    pub counts: PairCounts,
    pub frequency: f64,
    pub spatial: f64,
    pub priority: f64,
}

impl PairScore {
    #[inline]
    pub fn orientation(&self) -> Orientation {
        self.counts.dominant()
    }

    /// Deterministic tie-break key: `(left, right, orientation)`.
    #[inline]
    pub fn tie_key(&self) -> (TokenId, TokenId, Orientation) {
        (self.key.left, self.key.right, self.orientation())
    }
}

/// Descending priority, then ascending `(left, right, orientation)`.
pub fn rank_order(a: &PairScore, b: &PairScore) -> Ordering {
    b.priority
        .total_cmp(&a.priority)
        .then_with(|| a.tie_key().cmp(&b.tie_key()))
}

/// Computes F, S and P for every pair in `table`, unsorted.
pub fn score_pairs(table: &PairTable, alpha: f64, sigma: f64) -> Result<Vec<PairScore>> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    let total = total_pairs(table);
    if total == 0 {
        return Err(Error::EmptyStatistics);
    }
    table
        .iter()
        .map(|(&key, &counts)| {
            let frequency = frequency(&counts, total)?;
            let spatial = spatial_consistency(&counts, sigma)?;
            Ok(PairScore {
                key,
                counts,
                frequency,
                spatial,
                priority: priority(frequency, spatial, alpha),
            })
        })
        .collect()
}

/// All pairs sorted by [`rank_order`].
pub fn ranked_pairs(table: &PairTable, alpha: f64, sigma: f64) -> Result<Vec<PairScore>> {
    let mut scores = score_pairs(table, alpha, sigma)?;
    scores.sort_by(rank_order);
    Ok(scores)
}

/// TSV dump of `scores` (already ranked): `left right h_count v_count F S P`.
pub fn write_tsv<W: Write>(mut w: W, scores: &[PairScore]) -> io::Result<()> {
    writeln!(w, "left\tright\th_count\tv_count\tF\tS\tP")?;
    for s in scores {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.key.left,
            s.key.right,
            s.counts.horizontal,
            s.counts.vertical,
            s.frequency,
            s.spatial,
            s.priority
        )?;
    }
    Ok(())
}
