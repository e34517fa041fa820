//! Extended vocabulary: an ordered list of merge rules over a base codebook.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{IdKind, IdLayout, Orientation, Shape, TokenId};

pub const VOCAB_FORMAT_VERSION: u32 = 1;

/// One minted token together with the scores it had when it was selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRule {
    pub id: TokenId,
    pub left: TokenId,
    pub right: TokenId,
    pub orientation: Orientation,
    pub priority: f64,
    pub frequency: f64,
    pub spatial: f64,
}

/// Scores attached to a merge rule at selection time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MergeScores {
    pub priority: f64,
    pub frequency: f64,
    pub spatial: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    n_text: u32,
    base_size: u32,
    merges: Vec<MergeRule>,
    shapes: Vec<Shape>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    n_text: u32,
    base_size: u32,
    ext_offset: u32,
    ext_size: u32,
    boi: u32,
    eoi: u32,
    merges: Vec<MergeRule>,
}

impl Vocabulary {
    pub fn new(n_text: u32, base_size: u32) -> Result<Self> {
        if base_size == 0 {
            return Err(Error::InvalidParameter("base_size must be >= 1".into()));
        }
        IdLayout::new(n_text, base_size, 0)?;
        Ok(Self {
            n_text,
            base_size,
            merges: Vec::new(),
            shapes: Vec::new(),
        })
    }

    #[inline]
    pub fn n_text(&self) -> u32 {
        self.n_text
    }

    #[inline]
    pub fn base_size(&self) -> u32 {
        self.base_size
    }

    #[inline]
    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    #[inline]
    pub fn ext_len(&self) -> u32 {
        self.merges.len() as u32
    }

    /// Layout whose extended range is exactly the rules defined so far.
    pub fn layout(&self) -> IdLayout {
        IdLayout {
            n_text: self.n_text,
            base_k: self.base_size,
            ext_size: self.ext_len(),
        }
    }

    #[inline]
    pub fn next_id(&self) -> TokenId {
        TokenId(self.n_text + self.base_size + self.ext_len())
    }

    #[inline]
    pub fn base_token(&self, index: u32) -> TokenId {
        TokenId(self.n_text + index)
    }

    pub fn is_base(&self, id: TokenId) -> bool {
        (self.n_text..self.n_text + self.base_size).contains(&id.0)
    }

    pub fn is_defined(&self, id: TokenId) -> bool {
        matches!(
            self.layout().kind(id),
            Some(IdKind::BaseVq | IdKind::Extended)
        )
    }

    /// The rule that minted `id`, if it is an extended token.
    pub fn rule(&self, id: TokenId) -> Option<&MergeRule> {
        let ext = id.0.checked_sub(self.n_text + self.base_size)?;
        self.merges.get(ext as usize)
    }

    pub fn shape_of(&self, id: TokenId) -> Result<Shape> {
        if self.is_base(id) {
            return Ok(Shape::UNIT);
        }
        let ext =
            id.0.checked_sub(self.n_text + self.base_size)
                .ok_or(Error::UnknownToken(id.0))?;
        self.shapes
            .get(ext as usize)
            .copied()
            .ok_or(Error::UnknownToken(id.0))
    }

    /// Appends a rule `(left, right, orientation)` and returns its new id.
    pub fn push(
        &mut self,
        left: TokenId,
        right: TokenId,
        orientation: Orientation,
        scores: MergeScores,
    ) -> Result<TokenId> {
        let ls = self.shape_of(left)?;
        let rs = self.shape_of(right)?;
        let shape = ls.compose(rs, orientation).ok_or_else(|| {
            Error::InvalidVocabulary(format!(
                "{orientation} merge of {left} ({}x{}) and {right} ({}x{}) is not rectangular",
                ls.rows, ls.cols, rs.rows, rs.cols
            ))
        })?;
        let id = self.next_id();
        if id.0 as u64 + 2 > u32::MAX as u64 {
            return Err(Error::InvalidParameter("id space exhausted".into()));
        }
        self.merges.push(MergeRule {
            id,
            left,
            right,
            orientation,
            priority: scores.priority,
            frequency: scores.frequency,
            spatial: scores.spatial,
        });
        self.shapes.push(shape);
        Ok(id)
    }

    /// Write the base indices covered by `id` into a row-major buffer of
    /// width `stride`, with the token's top-left corner at `(row, col)`.
    pub fn paint(
        &self,
        id: TokenId,
        buf: &mut [u32],
        stride: usize,
        row: usize,
        col: usize,
    ) -> Result<()> {
        if self.is_base(id) {
            buf[row * stride + col] = id.0 - self.n_text;
            return Ok(());
        }
        let rule = self.rule(id).ok_or(Error::UnknownToken(id.0))?;
        let ls = self.shape_of(rule.left)?;
        self.paint(rule.left, buf, stride, row, col)?;
        match rule.orientation {
            Orientation::Horizontal => {
                self.paint(rule.right, buf, stride, row, col + ls.cols as usize)
            }
            Orientation::Vertical => {
                self.paint(rule.right, buf, stride, row + ls.rows as usize, col)
            }
        }
    }

    /// Per-base-index counts of the cells `id` covers, sorted by index.
    pub fn base_multiset(&self, id: TokenId) -> Result<Vec<(u32, u32)>> {
        let shape = self.shape_of(id)?;
        let mut buf = vec![0u32; shape.area() as usize];
        self.paint(id, &mut buf, shape.cols as usize, 0, 0)?;
        buf.sort_unstable();
        let mut out: Vec<(u32, u32)> = Vec::new();
        for v in buf {
            match out.last_mut() {
                Some((last, n)) if *last == v => *n += 1,
                _ => out.push((v, 1)),
            }
        }
        Ok(out)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let layout = self.layout();
        let file = VocabFile {
            version: VOCAB_FORMAT_VERSION,
            n_text: self.n_text,
            base_size: self.base_size,
            ext_offset: layout.ext_offset(),
            ext_size: layout.ext_size,
            boi: layout.boi().0,
            eoi: layout.eoi().0,
            merges: self.merges.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and validates a vocabulary file: offsets must agree, ids must
    /// be consecutive and every rule may only reference earlier ids.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(s)?;
        if file.version != VOCAB_FORMAT_VERSION {
            return Err(Error::InvalidVocabulary(format!(
                "unsupported version {}",
                file.version
            )));
        }
        let mut vocab = Vocabulary::new(file.n_text, file.base_size)?;
        for (i, rule) in file.merges.into_iter().enumerate() {
            let expected = vocab.next_id();
            if rule.id != expected {
                return Err(Error::InvalidVocabulary(format!(
                    "merge {i} has id {} but {} was expected",
                    rule.id, expected
                )));
            }
            for side in [rule.left, rule.right] {
                if !vocab.is_defined(side) {
                    return Err(Error::InvalidVocabulary(format!(
                        "merge {i} references undefined id {side}"
                    )));
                }
            }
            vocab.push(
                rule.left,
                rule.right,
                rule.orientation,
                MergeScores {
                    priority: rule.priority,
                    frequency: rule.frequency,
                    spatial: rule.spatial,
                },
            )?;
        }
        let layout = vocab.layout();
        let header = (file.ext_offset, file.ext_size, file.boi, file.eoi);
        let derived = (
            layout.ext_offset(),
            layout.ext_size,
            layout.boi().0,
            layout.eoi().0,
        );
        if header != derived {
            return Err(Error::InvalidVocabulary(format!(
                "header offsets {header:?} disagree with merges {derived:?}"
            )));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_json_string()?.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut s = String::new();
        BufReader::new(File::open(path)?).read_to_string(&mut s)?;
        Self::from_json_str(&s)
    }
}

/// The rectangle of base VQ indices covered by `id`.
pub fn expand(vocab: &Vocabulary, id: TokenId) -> Result<Vec<Vec<u32>>> {
    let shape = vocab.shape_of(id)?;
    let (rows, cols) = (shape.rows as usize, shape.cols as usize);
    let mut buf = vec![0u32; rows * cols];
    vocab.paint(id, &mut buf, cols, 0, 0)?;
    Ok(buf.chunks(cols).map(<[u32]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: Orientation = Orientation::Horizontal;
    const V: Orientation = Orientation::Vertical;

    /// Independent expansion: replay the rules as a table of fully
    /// materialized rectangles, concatenating row vectors.
    fn replay_expand(vocab: &Vocabulary, id: TokenId) -> Vec<Vec<u32>> {
        let mut table: Vec<Vec<Vec<u32>>> = Vec::new();
        let lookup = |table: &Vec<Vec<Vec<u32>>>, t: TokenId| -> Vec<Vec<u32>> {
            if vocab.is_base(t) {
                vec![vec![t.0 - vocab.n_text()]]
            } else {
                table[(t.0 - vocab.n_text() - vocab.base_size()) as usize].clone()
            }
        };
        for rule in vocab.merges() {
            let l = lookup(&table, rule.left);
            let r = lookup(&table, rule.right);
            let joined = match rule.orientation {
                Orientation::Horizontal => l
                    .into_iter()
                    .zip(r)
                    .map(|(mut a, b)| {
                        a.extend(b);
                        a
                    })
                    .collect(),
                Orientation::Vertical => l.into_iter().chain(r).collect(),
            };
            table.push(joined);
        }
        lookup(&table, id)
    }

    #[test]
    fn base_expands_to_itself() {
        let v = Vocabulary::new(100, 16).unwrap();
        assert_eq!(expand(&v, TokenId(107)).unwrap(), vec![vec![7]]);
    }

    #[test]
    fn horizontal_and_nested_vertical() {
        let mut v = Vocabulary::new(0, 4).unwrap();
        let (a, b) = (TokenId(1), TokenId(2));
        let c1 = v.push(a, b, H, MergeScores::default()).unwrap();
        assert_eq!(c1, TokenId(4));
        assert_eq!(expand(&v, c1).unwrap(), vec![vec![1, 2]]);
        let c2 = v.push(c1, c1, V, MergeScores::default()).unwrap();
        let got = expand(&v, c2).unwrap();
        assert_eq!(got, replay_expand(&v, c2));
        assert_eq!(got, vec![vec![1, 2], vec![1, 2]]);
        assert_eq!(v.shape_of(c2).unwrap(), Shape { rows: 2, cols: 2 });
    }

    #[test]
    fn unknown_ids() {
        let v = Vocabulary::new(10, 4).unwrap();
        assert!(matches!(
            expand(&v, TokenId(3)),
            Err(Error::UnknownToken(3))
        ));
        assert!(matches!(
            expand(&v, TokenId(14)),
            Err(Error::UnknownToken(14))
        ));
    }

    #[test]
    fn non_rectangular_rule_rejected() {
        let mut v = Vocabulary::new(0, 4).unwrap();
        let c = v
            .push(TokenId(0), TokenId(1), H, MergeScores::default())
            .unwrap();
        assert!(v.push(c, TokenId(2), V, MergeScores::default()).is_err());
    }

    #[test]
    fn multiset_counts() {
        let mut v = Vocabulary::new(0, 4).unwrap();
        let c = v
            .push(TokenId(3), TokenId(1), H, MergeScores::default())
            .unwrap();
        let d = v.push(c, TokenId(3), H, MergeScores::default()).unwrap();
        assert_eq!(v.base_multiset(d).unwrap(), vec![(1, 1), (3, 2)]);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut v = Vocabulary::new(32, 8).unwrap();
        let s = MergeScores {
            priority: 0.871_428_571_428_571_4,
            frequency: 4.0 / 7.0,
            spatial: 1.0,
        };
        let c = v.push(TokenId(33), TokenId(34), H, s).unwrap();
        v.push(c, c, V, s).unwrap();
        let text = v.to_json_string().unwrap();
        let back = Vocabulary::from_json_str(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_json_string().unwrap(), text);

        let forward_ref = text.replacen("\"left\": 40", "\"left\": 41", 1);
        assert!(Vocabulary::from_json_str(&forward_ref).is_err());
        let bad_header = text.replacen("\"boi\": 42", "\"boi\": 43", 1);
        assert!(Vocabulary::from_json_str(&bad_header).is_err());
    }
}
