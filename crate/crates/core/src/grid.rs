//! Grid data model: quantized images, rectangular token regions and the
//! global id space shared by text, base VQ and merged tokens.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into the global id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which of the id ranges a token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdKind {
    Text,
    BaseVq,
    Extended,
    Boi,
    Eoi,
}

/// Partition of the id space:
/// `[0, n_text)` text, `[n_text, n_text + K)` base VQ,
/// `[n_text + K, n_text + K + ext)` extended, followed by BOI and EOI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdLayout {
    pub n_text: u32,
    pub base_k: u32,
    pub ext_size: u32,
}

impl IdLayout {
    pub const DEFAULT_N_TEXT: u32 = 32_000;
    pub const DEFAULT_BASE_K: u32 = 8_192;
    pub const DEFAULT_EXT_SIZE: u32 = 8_192;

    pub fn new(n_text: u32, base_k: u32, ext_size: u32) -> Result<Self> {
        let layout = Self {
            n_text,
            base_k,
            ext_size,
        };
        let total = n_text as u64 + base_k as u64 + ext_size as u64 + 2;
        if total > u32::MAX as u64 {
            return Err(Error::InvalidParameter(format!(
                "id space of {total} ids does not fit in u32"
            )));
        }
        Ok(layout)
    }

    #[inline]
    pub fn vq_offset(&self) -> u32 {
        self.n_text
    }

    #[inline]
    pub fn ext_offset(&self) -> u32 {
        self.n_text + self.base_k
    }

    #[inline]
    pub fn boi(&self) -> TokenId {
        TokenId(self.ext_offset() + self.ext_size)
    }

    #[inline]
    pub fn eoi(&self) -> TokenId {
        TokenId(self.ext_offset() + self.ext_size + 1)
    }

    /// Total number of ids including the two specials.
    #[inline]
    pub fn total(&self) -> u32 {
        self.ext_offset() + self.ext_size + 2
    }

    /// Number of ids that can appear inside an image span.
    #[inline]
    pub fn visual_size(&self) -> u32 {
        self.base_k + self.ext_size
    }

    pub fn kind(&self, id: TokenId) -> Option<IdKind> {
        let v = id.0;
        if v < self.n_text {
            Some(IdKind::Text)
        } else if v < self.ext_offset() {
            Some(IdKind::BaseVq)
        } else if v < self.boi().0 {
            Some(IdKind::Extended)
        } else if v == self.boi().0 {
            Some(IdKind::Boi)
        } else if v == self.eoi().0 {
            Some(IdKind::Eoi)
        } else {
            None
        }
    }

    #[inline]
    pub fn is_visual(&self, id: TokenId) -> bool {
        matches!(self.kind(id), Some(IdKind::BaseVq | IdKind::Extended))
    }

    #[inline]
    pub fn base_token(&self, index: u32) -> TokenId {
        TokenId(self.n_text + index)
    }
}

impl Default for IdLayout {
    fn default() -> Self {
        Self {
            n_text: Self::DEFAULT_N_TEXT,
            base_k: Self::DEFAULT_BASE_K,
            ext_size: Self::DEFAULT_EXT_SIZE,
        }
    }
}

/// A quantized image: `height x width` base VQ indices in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantGrid {
    height: u32,
    width: u32,
    cells: Vec<u32>,
}

impl QuantGrid {
    pub fn new(height: u32, width: u32, cells: Vec<u32>) -> Result<Self> {
        if cells.len() as u64 != height as u64 * width as u64 {
            return Err(Error::Shape(format!(
                "{} cells for a {height}x{width} grid",
                cells.len()
            )));
        }
        Ok(Self {
            height,
            width,
            cells,
        })
    }

    /// Builds a grid from nested rows. Mostly useful in tests.
    pub fn from_rows<R: AsRef<[u32]>>(rows: &[R]) -> Result<Self> {
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.as_ref().len()) as u32;
        let mut cells = Vec::with_capacity((height * width) as usize);
        for row in rows {
            let row = row.as_ref();
            if row.len() as u32 != width {
                return Err(Error::Shape("ragged rows".into()));
            }
            cells.extend_from_slice(row);
        }
        Self::new(height, width, cells)
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn get(&self, row: u32, col: u32) -> u32 {
        self.cells[(row * self.width + col) as usize]
    }

    pub fn rows(&self) -> Vec<Vec<u32>> {
        if self.width == 0 {
            return vec![Vec::new(); self.height as usize];
        }
        self.cells
            .chunks(self.width as usize)
            .map(<[u32]>::to_vec)
            .collect()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.cells.iter().copied().max()
    }

    /// Fails with `IndexOutOfRange` if any cell is `>= base_k`.
    pub fn check_range(&self, base_k: u32) -> Result<()> {
        match self.cells.iter().find(|&&c| c >= base_k) {
            Some(&c) => Err(Error::IndexOutOfRange {
                value: c as u64,
                limit: base_k as u64,
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

impl Orientation {
    /// Relative-position vector `u`: `(0,1)` horizontal, `(1,0)` vertical.
    pub fn unit(self) -> [f64; 2] {
        match self {
            Orientation::Horizontal => [0.0, 1.0],
            Orientation::Vertical => [1.0, 0.0],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Horizontal => "horizontal",
            Orientation::Vertical => "vertical",
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rectangular extent of a token, in cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub rows: u32,
    pub cols: u32,
}

impl Shape {
    pub const UNIT: Shape = Shape { rows: 1, cols: 1 };

    #[inline]
    pub fn area(self) -> u64 {
        self.rows as u64 * self.cols as u64
    }

    /// Shape of `self` joined with `other` in `orientation`, or `None` if the
    /// two rectangles do not line up.
    pub fn compose(self, other: Shape, orientation: Orientation) -> Option<Shape> {
        match orientation {
            Orientation::Horizontal if self.rows == other.rows => Some(Shape {
                rows: self.rows,
                cols: self.cols + other.cols,
            }),
            Orientation::Vertical if self.cols == other.cols => Some(Shape {
                rows: self.rows + other.rows,
                cols: self.cols,
            }),
            _ => None,
        }
    }
}

/// One token instance placed on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Region {
    pub token: TokenId,
    pub row: u32,
    pub col: u32,
    pub shape: Shape,
}

impl Region {
    #[inline]
    pub fn anchor(&self) -> (u32, u32) {
        (self.row, self.col)
    }
}

/// A grid tiled by rectangular regions. Regions are kept in raster order of
/// their anchors, and `owner` maps every cell to the index of its region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    height: u32,
    width: u32,
    regions: Vec<Region>,
    owner: Vec<u32>,
}

impl TokenGrid {
    /// One 1x1 region per cell, with base tokens offset by `layout.n_text`.
    pub fn from_quant(grid: &QuantGrid, layout: &IdLayout) -> Self {
        let w = grid.width();
        let regions = grid
            .cells()
            .iter()
            .enumerate()
            .map(|(i, &q)| Region {
                token: layout.base_token(q),
                row: i as u32 / w.max(1),
                col: i as u32 % w.max(1),
                shape: Shape::UNIT,
            })
            .collect();
        let owner = (0..grid.len() as u32).collect();
        Self {
            height: grid.height(),
            width: w,
            regions,
            owner,
        }
    }

    /// Validates that `regions` tile the grid exactly.
    pub fn from_regions(height: u32, width: u32, mut regions: Vec<Region>) -> Result<Self> {
        regions.sort_by_key(Region::anchor);
        let owner = build_owner(height, width, &regions)?;
        Ok(Self {
            height,
            width,
            regions,
            owner,
        })
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn cell_count(&self) -> usize {
        self.owner.len()
    }

    /// Regions in raster order of anchors.
    #[inline]
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.regions.iter().map(|r| r.token)
    }

    /// Index of the region covering `(row, col)`.
    #[inline]
    pub fn owner_of(&self, row: u32, col: u32) -> usize {
        self.owner[(row * self.width + col) as usize] as usize
    }

    /// The region immediately to the right of region `idx`, if it spans
    /// exactly the same rows.
    pub fn right_neighbor(&self, idx: usize) -> Option<usize> {
        let r = &self.regions[idx];
        let c = r.col + r.shape.cols;
        if c >= self.width {
            return None;
        }
        let n = self.owner_of(r.row, c);
        let nr = &self.regions[n];
        (nr.row == r.row && nr.shape.rows == r.shape.rows).then_some(n)
    }

    /// The region immediately below region `idx`, if it spans exactly the
    /// same columns.
    pub fn below_neighbor(&self, idx: usize) -> Option<usize> {
        let r = &self.regions[idx];
        let row = r.row + r.shape.rows;
        if row >= self.height {
            return None;
        }
        let n = self.owner_of(row, r.col);
        let nr = &self.regions[n];
        (nr.col == r.col && nr.shape.cols == r.shape.cols).then_some(n)
    }

    #[inline]
    pub fn neighbor(&self, idx: usize, orientation: Orientation) -> Option<usize> {
        match orientation {
            Orientation::Horizontal => self.right_neighbor(idx),
            Orientation::Vertical => self.below_neighbor(idx),
        }
    }

    /// One greedy, non-overlapping raster pass replacing every
    /// `(left, right)` occurrence in `orientation` by a single `new_id`
    /// region. Returns the number of replacements.
    pub fn merge_pass(
        &mut self,
        left: TokenId,
        right: TokenId,
        orientation: Orientation,
        new_id: TokenId,
    ) -> usize {
        let n = self.regions.len();
        let mut consumed = vec![false; n];
        let mut merged_into: Vec<Option<usize>> = vec![None; n];
        let mut replaced = 0;
        for i in 0..n {
            if consumed[i] || self.regions[i].token != left {
                continue;
            }
            let Some(j) = self.neighbor(i, orientation) else {
                continue;
            };
            if consumed[j] || self.regions[j].token != right {
                continue;
            }
            consumed[i] = true;
            consumed[j] = true;
            merged_into[i] = Some(j);
            replaced += 1;
        }
        if replaced == 0 {
            return 0;
        }

        let mut out = Vec::with_capacity(n - replaced);
        for (i, region) in self.regions.iter().enumerate() {
            match merged_into[i] {
                // consumed as the right-hand member of a merge
                None if consumed[i] => {}
                Some(j) => {
                    let shape = region
                        .shape
                        .compose(self.regions[j].shape, orientation)
                        .expect("neighbor lookup guarantees compatible shapes");
                    out.push(Region {
                        token: new_id,
                        shape,
                        ..*region
                    });
                }
                None => out.push(*region),
            }
        }
        self.regions = out;
        self.rebuild_owner();
        replaced
    }

    fn rebuild_owner(&mut self) {
        for (idx, r) in self.regions.iter().enumerate() {
            for dr in 0..r.shape.rows {
                let base = ((r.row + dr) * self.width + r.col) as usize;
                self.owner[base..base + r.shape.cols as usize].fill(idx as u32);
            }
        }
    }
}

fn build_owner(height: u32, width: u32, regions: &[Region]) -> Result<Vec<u32>> {
    let cells = height as usize * width as usize;
    let mut owner = vec![u32::MAX; cells];
    for (idx, r) in regions.iter().enumerate() {
        if r.shape.rows == 0 || r.shape.cols == 0 {
            return Err(Error::Shape(format!("empty region at {:?}", r.anchor())));
        }
        if r.row + r.shape.rows > height || r.col + r.shape.cols > width {
            return Err(Error::Shape(format!(
                "region at {:?} with shape {}x{} leaves the {height}x{width} grid",
                r.anchor(),
                r.shape.rows,
                r.shape.cols
            )));
        }
        for dr in 0..r.shape.rows {
            for dc in 0..r.shape.cols {
                let cell = ((r.row + dr) * width + r.col + dc) as usize;
                if owner[cell] != u32::MAX {
                    return Err(Error::Shape(format!(
                        "regions overlap at ({}, {})",
                        r.row + dr,
                        r.col + dc
                    )));
                }
                owner[cell] = idx as u32;
            }
        }
    }
    if let Some(gap) = owner.iter().position(|&o| o == u32::MAX) {
        return Err(Error::Shape(format!(
            "cell ({}, {}) is not covered",
            gap as u32 / width,
            gap as u32 % width
        )));
    }
    Ok(owner)
}

/// Regions of `grid` sorted by `(row, col)` of their anchor.
pub fn region_raster_order(grid: &TokenGrid) -> Vec<Region> {
    // `TokenGrid` keeps regions sorted already; sorting again is cheap and
    // keeps this correct regardless of internal representation.
    let mut regions = grid.regions().to_vec();
    regions.sort_by_key(Region::anchor);
    regions
}
