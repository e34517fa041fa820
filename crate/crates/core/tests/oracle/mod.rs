//! Reference implementations used by the test targets. Written against the
//! documented semantics with their own data structures, sharing nothing
//! with the library beyond its public value types.

#![allow(dead_code)]

use std::collections::BTreeMap;

use vbpe::stats::{priority, spatial_consistency};
use vbpe::vocab::MergeScores;
use vbpe::{Orientation, QuantGrid, TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub tok: u32,
    pub r: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

/// A grid as a label per cell plus a rectangle per label.
#[derive(Debug, Clone)]
pub struct LabelGrid {
    pub height: usize,
    pub width: usize,
    pub label: Vec<usize>,
    pub rects: Vec<Rect>,
}

impl LabelGrid {
    pub fn new(g: &QuantGrid, n_text: u32) -> Self {
        let (height, width) = (g.height() as usize, g.width() as usize);
        let rects = g
            .cells()
            .iter()
            .enumerate()
            .map(|(i, &v)| Rect {
                tok: n_text + v,
                r: i / width,
                c: i % width,
                h: 1,
                w: 1,
            })
            .collect();
        Self {
            height,
            width,
            label: (0..height * width).collect(),
            rects,
        }
    }

    fn at(&self, r: usize, c: usize) -> usize {
        self.label[r * self.width + c]
    }

    /// Label of the compatible neighbor of rect `i` in direction `o`.
    pub fn neighbor(&self, i: usize, o: Orientation) -> Option<usize> {
        let a = self.rects[i];
        let j = match o {
            Orientation::Horizontal if a.c + a.w < self.width => self.at(a.r, a.c + a.w),
            Orientation::Vertical if a.r + a.h < self.height => self.at(a.r + a.h, a.c),
            _ => return None,
        };
        let b = self.rects[j];
        let ok = match o {
            Orientation::Horizontal => b.r == a.r && b.h == a.h,
            Orientation::Vertical => b.c == a.c && b.w == a.w,
        };
        ok.then_some(j)
    }

    /// Labels in raster order of their top-left corners.
    pub fn raster(&self) -> Vec<usize> {
        let mut seen = vec![false; self.rects.len()];
        let mut out = Vec::new();
        for &l in &self.label {
            if !seen[l] {
                seen[l] = true;
                let rc = self.rects[l];
                // the first cell visited for a rectangle is its top-left corner
                debug_assert_eq!(self.label[rc.r * self.width + rc.c], l);
                out.push(l);
            }
        }
        out
    }

    pub fn tokens(&self) -> Vec<u32> {
        self.raster()
            .into_iter()
            .map(|l| self.rects[l].tok)
            .collect()
    }

    pub fn region_count(&self) -> usize {
        self.raster().len()
    }

    /// Greedy single pass. Returns the number of replacements.
    pub fn merge(&mut self, left: u32, right: u32, o: Orientation, new_tok: u32) -> usize {
        let order = self.raster();
        let mut used = vec![false; self.rects.len()];
        let mut done = 0;
        for i in order {
            if used[i] || self.rects[i].tok != left {
                continue;
            }
            let Some(j) = self.neighbor(i, o) else {
                continue;
            };
            if used[j] || self.rects[j].tok != right {
                continue;
            }
            used[i] = true;
            used[j] = true;
            let (a, b) = (self.rects[i], self.rects[j]);
            let merged = match o {
                Orientation::Horizontal => Rect {
                    tok: new_tok,
                    w: a.w + b.w,
                    ..a
                },
                Orientation::Vertical => Rect {
                    tok: new_tok,
                    h: a.h + b.h,
                    ..a
                },
            };
            for r in b.r..b.r + b.h {
                for c in b.c..b.c + b.w {
                    self.label[r * self.width + c] = i;
                }
            }
            self.rects[i] = merged;
            done += 1;
        }
        done
    }
}

/// `(left, right) -> (horizontal, vertical)` over every compatible adjacency.
pub fn count_pairs(grids: &[LabelGrid]) -> BTreeMap<(u32, u32), (u64, u64)> {
    let mut m = BTreeMap::new();
    for g in grids {
        for i in g.raster() {
            for o in [Orientation::Horizontal, Orientation::Vertical] {
                if let Some(j) = g.neighbor(i, o) {
                    let e = m.entry((g.rects[i].tok, g.rects[j].tok)).or_insert((0, 0));
                    match o {
                        Orientation::Horizontal => e.0 += 1,
                        Orientation::Vertical => e.1 += 1,
                    }
                }
            }
        }
    }
    m
}

/// Plain frequency-driven 2D BPE: highest count wins, ties to the smallest
/// `(left, right)`, merged in its majority orientation (horizontal on ties).
pub fn frequency_bpe(
    corpus: &[QuantGrid],
    n_text: u32,
    base_k: u32,
    merges: u32,
    sigma: f64,
) -> (Vocabulary, Vec<Vec<u32>>) {
    let mut grids: Vec<LabelGrid> = corpus.iter().map(|g| LabelGrid::new(g, n_text)).collect();
    let mut vocab = Vocabulary::new(n_text, base_k).unwrap();
    for step in 0..merges {
        let counts = count_pairs(&grids);
        let total: u64 = counts.values().map(|(h, v)| h + v).sum();
        if total == 0 {
            break;
        }
        // BTreeMap iterates in (left, right) order, so strict > keeps the smallest on ties
        let mut best: Option<((u32, u32), (u64, u64))> = None;
        for (&k, &hv) in &counts {
            if best.is_none_or(|(_, b)| hv.0 + hv.1 > b.0 + b.1) {
                best = Some((k, hv));
            }
        }
        let ((l, r), (h, v)) = best.unwrap();
        let o = if v > h {
            Orientation::Vertical
        } else {
            Orientation::Horizontal
        };
        let frequency = (h + v) as f64 / total as f64;
        let pc = vbpe::PairCounts {
            horizontal: h,
            vertical: v,
        };
        let spatial = spatial_consistency(&pc, sigma).unwrap();
        let new_tok = n_text + base_k + step;
        let id = vocab
            .push(
                TokenId(l),
                TokenId(r),
                o,
                MergeScores {
                    priority: priority(frequency, spatial, 0.0),
                    frequency,
                    spatial,
                },
            )
            .unwrap();
        assert_eq!(id.0, new_tok);
        for g in &mut grids {
            g.merge(l, r, o, new_tok);
        }
    }
    let tokens = grids.iter().map(LabelGrid::tokens).collect();
    (vocab, tokens)
}

/// Expansion by replaying the merge list into a table of base-index patches.
pub fn patches(vocab: &Vocabulary) -> BTreeMap<u32, Vec<Vec<u32>>> {
    let mut t = BTreeMap::new();
    for k in 0..vocab.base_size() {
        t.insert(vocab.n_text() + k, vec![vec![k]]);
    }
    for m in vocab.merges() {
        let a = t[&m.left.0].clone();
        let b = &t[&m.right.0];
        let p = match m.orientation {
            Orientation::Horizontal => a
                .into_iter()
                .zip(b)
                .map(|(mut x, y)| {
                    x.extend(y);
                    x
                })
                .collect(),
            Orientation::Vertical => a.into_iter().chain(b.iter().cloned()).collect(),
        };
        t.insert(m.id.0, p);
    }
    t
}

/// Decoding by painting patches onto the first unfilled cells in raster order.
pub fn paint_decode(ids: &[u32], vocab: &Vocabulary, h: usize, w: usize) -> Vec<u32> {
    let table = patches(vocab);
    let mut out = vec![u32::MAX; h * w];
    let mut cursor = 0;
    for id in ids {
        while out[cursor] != u32::MAX {
            cursor += 1;
        }
        let (r0, c0) = (cursor / w, cursor % w);
        for (dr, row) in table[id].iter().enumerate() {
            for (dc, &v) in row.iter().enumerate() {
                out[(r0 + dr) * w + c0 + dc] = v;
            }
        }
    }
    out
}
