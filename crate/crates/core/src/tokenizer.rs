//! Applying a trained vocabulary: encode grids into token sequences, decode
//! them back, and splice image spans into text with BOI/EOI markers.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{region_raster_order, IdKind, IdLayout, QuantGrid, TokenGrid, TokenId};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub layout: IdLayout,
}

impl TokenSequence {
    #[inline]
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Every id lies in the layout, and BOI/EOI markers alternate starting
    /// with BOI, with image ids appearing only inside a span.
    pub fn validate(&self) -> Result<()> {
        let mut open = false;
        for (pos, &id) in self.ids.iter().enumerate() {
            match self.layout.kind(id) {
                None => {
                    return Err(Error::LayoutViolation(format!(
                        "id {id} at position {pos} is outside the id space"
                    )))
                }
                Some(IdKind::Boi) if open => {
                    return Err(Error::LayoutViolation(format!(
                        "nested BOI at position {pos}"
                    )))
                }
                Some(IdKind::Boi) => open = true,
                Some(IdKind::Eoi) if !open => {
                    return Err(Error::LayoutViolation(format!(
                        "EOI without BOI at position {pos}"
                    )))
                }
                Some(IdKind::Eoi) => open = false,
                Some(IdKind::Text) if open => {
                    return Err(Error::LayoutViolation(format!(
                        "text id {id} inside an image span at position {pos}"
                    )))
                }
                Some(IdKind::BaseVq | IdKind::Extended) if !open => {
                    return Err(Error::LayoutViolation(format!(
                        "image id {id} outside an image span at position {pos}"
                    )))
                }
                _ => {}
            }
        }
        if open {
            return Err(Error::LayoutViolation("unterminated image span".into()));
        }
        Ok(())
    }

    pub fn raw(&self) -> Vec<u32> {
        self.ids.iter().map(|t| t.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub grid: TokenGrid,
    pub sequence: TokenSequence,
}

/// Replays every merge of `vocab` in training order on `grid`, then
/// serializes the surviving regions in raster order.
pub fn encode(grid: &QuantGrid, vocab: &Vocabulary) -> Result<Encoded> {
    grid.check_range(vocab.base_size())?;
    let layout = vocab.layout();
    let mut tg = TokenGrid::from_quant(grid, &layout);
    for rule in vocab.merges() {
        if tg.len() < 2 {
            break;
        }
        tg.merge_pass(rule.left, rule.right, rule.orientation, rule.id);
    }
    let ids: Vec<TokenId> = region_raster_order(&tg).iter().map(|r| r.token).collect();
    debug_assert!(ids.len() <= grid.len());
    Ok(Encoded {
        grid: tg,
        sequence: TokenSequence { ids, layout },
    })
}

pub fn encode_batch(grids: &[QuantGrid], vocab: &Vocabulary) -> Result<Vec<Encoded>> {
    grids.par_iter().map(|g| encode(g, vocab)).collect()
}

/// Inverse of [`encode`]: each token is placed at the first free cell in
/// raster order.
pub fn decode(ids: &[TokenId], vocab: &Vocabulary, height: u32, width: u32) -> Result<QuantGrid> {
    let (h, w) = (height as usize, width as usize);
    let cells = h * w;
    let mut out = vec![0u32; cells];
    let mut filled = vec![false; cells];
    let mut cursor = 0usize;
    for (pos, &id) in ids.iter().enumerate() {
        while cursor < cells && filled[cursor] {
            cursor += 1;
        }
        if cursor == cells {
            return Err(Error::MalformedSequence(format!(
                "{} ids left over after the {height}x{width} grid was filled",
                ids.len() - pos
            )));
        }
        let shape = vocab.shape_of(id)?;
        let (row, col) = (cursor / w, cursor % w);
        let (rows, cols) = (shape.rows as usize, shape.cols as usize);
        if row + rows > h || col + cols > w {
            return Err(Error::MalformedSequence(format!(
                "token {id} ({rows}x{cols}) at ({row}, {col}) leaves the {height}x{width} grid"
            )));
        }
        for r in row..row + rows {
            let span = &mut filled[r * w + col..r * w + col + cols];
            if span.iter().any(|&f| f) {
                return Err(Error::MalformedSequence(format!(
                    "token {id} at ({row}, {col}) overlaps an earlier token"
                )));
            }
            span.fill(true);
        }
        vocab.paint(id, &mut out, w, row, col)?;
    }
    if filled.iter().any(|&f| !f) {
        return Err(Error::MalformedSequence(format!(
            "{} ids do not cover the {height}x{width} grid",
            ids.len()
        )));
    }
    QuantGrid::new(height, width, out)
}

/// `text_ids ++ [BOI] ++ image_ids ++ [EOI]`.
pub fn assemble(
    text_ids: &[TokenId],
    image_ids: &[TokenId],
    layout: &IdLayout,
) -> Result<TokenSequence> {
    if let Some(bad) = text_ids
        .iter()
        .find(|&&t| layout.kind(t) != Some(IdKind::Text))
    {
        return Err(Error::LayoutViolation(format!("{bad} is not a text id")));
    }
    if let Some(bad) = image_ids.iter().find(|&&t| !layout.is_visual(t)) {
        return Err(Error::LayoutViolation(format!("{bad} is not an image id")));
    }
    let mut ids = Vec::with_capacity(text_ids.len() + image_ids.len() + 2);
    ids.extend_from_slice(text_ids);
    ids.push(layout.boi());
    ids.extend_from_slice(image_ids);
    ids.push(layout.eoi());
    Ok(TokenSequence {
        ids,
        layout: *layout,
    })
}

pub const RECORD_VERSION: u32 = 1;

/// One line of a `tokens.jsonl` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedRecord {
    pub version: u32,
    pub h: u32,
    pub w: u32,
    pub ids: Vec<u32>,
}

impl EncodedRecord {
    pub fn new(h: u32, w: u32, ids: &[TokenId]) -> Self {
        Self {
            version: RECORD_VERSION,
            h,
            w,
            ids: ids.iter().map(|t| t.0).collect(),
        }
    }

    pub fn token_ids(&self) -> Vec<TokenId> {
        self.ids.iter().copied().map(TokenId).collect()
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[EncodedRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<EncodedRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EncodedRecord = serde_json::from_str(&line)
            .map_err(|e| Error::MalformedSequence(format!("line {}: {e}", lineno + 1)))?;
        if rec.version != RECORD_VERSION {
            return Err(Error::MalformedSequence(format!(
                "line {}: unsupported record version {}",
                lineno + 1,
                rec.version
            )));
        }
        out.push(rec);
    }
    Ok(out)
}
