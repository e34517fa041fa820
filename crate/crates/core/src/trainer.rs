//! Priority-guided vocabulary training.
//!
//! Each iteration recomputes pair statistics from scratch, ranks pairs by
//! `P = F + alpha * S`, vetoes top-k candidates that duplicate an existing
//! extended token (multiset Jaccard over expanded base indices above `tau`),
//! mints a token for the best survivor and rewrites the corpus with one
//! greedy raster pass per grid.

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{IdLayout, Orientation, QuantGrid, TokenGrid, TokenId};
use crate::stats::{
    rank_order, scan_adjacencies, score_pairs, PairKey, PairScore, DEFAULT_ALPHA, DEFAULT_SIGMA,
};
use crate::vocab::{MergeScores, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub target_ext_size: u32,
    pub alpha: f64,
    pub sigma: f64,
    pub top_k: usize,
    pub tau: f64,
    /// Recorded for reproducibility. Training itself draws no random numbers.
    pub seed: u64,
    pub n_text: u32,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            target_ext_size: IdLayout::DEFAULT_EXT_SIZE,
            alpha: DEFAULT_ALPHA,
            sigma: DEFAULT_SIGMA,
            top_k: 32,
            tau: 0.9,
            seed: 0,
            n_text: IdLayout::DEFAULT_N_TEXT,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidParameter("top_k must be >= 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidParameter(format!(
                "tau must be in [0, 1], got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Sorted `(base index, multiplicity)` list.
type Multiset = Vec<(u32, u32)>;

fn multiset_union(a: &Multiset, b: &Multiset) -> Multiset {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Multiset Jaccard: `sum(min) / sum(max)`.
pub fn jaccard(a: &[(u32, u32)], b: &[(u32, u32)]) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                union += a[i].1 as u64;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                union += b[j].1 as u64;
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                inter += a[i].1.min(b[j].1) as u64;
                union += a[i].1.max(b[j].1) as u64;
                i += 1;
                j += 1;
            }
        }
    }
    union += a[i..].iter().map(|x| x.1 as u64).sum::<u64>();
    union += b[j..].iter().map(|x| x.1 as u64).sum::<u64>();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Base-index multisets of every extended token, kept in step with the
/// vocabulary during training.
#[derive(Debug, Clone)]
pub struct DiversityFilter {
    n_text: u32,
    base_size: u32,
    ext: Vec<(Multiset, u64)>,
}

impl DiversityFilter {
    pub fn new(vocab: &Vocabulary) -> Result<Self> {
        let mut f = Self {
            n_text: vocab.n_text(),
            base_size: vocab.base_size(),
            ext: Vec::with_capacity(vocab.merges().len()),
        };
        for rule in vocab.merges() {
            f.push(rule.left, rule.right);
        }
        Ok(f)
    }

    fn multiset(&self, id: TokenId) -> Multiset {
        let ext_start = self.n_text + self.base_size;
        if id.0 < ext_start {
            vec![(id.0 - self.n_text, 1)]
        } else {
            self.ext[(id.0 - ext_start) as usize].0.clone()
        }
    }

    /// Multiset of the token `(left, right)` would mint.
    pub fn candidate(&self, left: TokenId, right: TokenId) -> Multiset {
        multiset_union(&self.multiset(left), &self.multiset(right))
    }

    fn push(&mut self, left: TokenId, right: TokenId) {
        let m = self.candidate(left, right);
        let size = m.iter().map(|x| x.1 as u64).sum();
        self.ext.push((m, size));
    }

    /// Highest Jaccard similarity between `(left, right)` and any existing
    /// extended token. Stops early once `tau` is exceeded, so the result is
    /// exact only when it is `<= tau`.
    pub fn max_similarity(&self, left: TokenId, right: TokenId, tau: f64) -> f64 {
        let cand = self.candidate(left, right);
        let size: u64 = cand.iter().map(|x| x.1 as u64).sum();
        let mut best = 0.0f64;
        for (m, msize) in &self.ext {
            // Jaccard is bounded by the ratio of sizes
            let bound = size.min(*msize) as f64 / size.max(*msize) as f64;
            if bound <= best {
                continue;
            }
            let s = jaccard(&cand, m);
            if s > best {
                best = s;
                if best > tau {
                    break;
                }
            }
        }
        best
    }
}

/// Outcome of candidate selection for one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub score: PairScore,
    pub orientation: Orientation,
    /// Number of top-k candidates vetoed by the diversity filter.
    pub filtered: usize,
    /// Every top-k candidate was vetoed and the unfiltered best was taken.
    pub fallback: bool,
}

/// The `k` best pairs in rank order.
pub fn top_k(mut scores: Vec<PairScore>, k: usize) -> Vec<PairScore> {
    if scores.len() > k {
        scores.select_nth_unstable_by(k - 1, rank_order);
        scores.truncate(k);
    }
    scores.sort_by(rank_order);
    scores
}

/// Picks the best of the `top_k` ranked candidates that survives the
/// diversity filter. `ranked` must be in rank order.
pub fn select_candidate(
    ranked: &[PairScore],
    filter: &DiversityFilter,
    cfg: &TrainerConfig,
) -> Result<Selection> {
    let window = &ranked[..ranked.len().min(cfg.top_k.max(1))];
    let Some(best) = window.first() else {
        return Err(Error::ExhaustedPairs);
    };
    let mut filtered = 0;
    for cand in window {
        let sim = if cfg.tau >= 1.0 {
            0.0
        } else {
            filter.max_similarity(cand.key.left, cand.key.right, cfg.tau)
        };
        if sim > cfg.tau {
            filtered += 1;
            continue;
        }
        return Ok(Selection {
            score: *cand,
            orientation: cand.orientation(),
            filtered,
            fallback: false,
        });
    }
    Ok(Selection {
        score: *best,
        orientation: best.orientation(),
        filtered,
        fallback: true,
    })
}

/// Applies one merge to every grid. Returns the number of replacements.
pub fn apply_merge(
    grids: &mut [TokenGrid],
    pair: PairKey,
    orientation: Orientation,
    new_id: TokenId,
) -> usize {
    grids
        .par_iter_mut()
        .map(|g| g.merge_pass(pair.left, pair.right, orientation, new_id))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    pub new_id: TokenId,
    pub pair: PairKey,
    pub orientation: Orientation,
    pub priority: f64,
    pub replaced: usize,
    /// Total region count over the corpus after this iteration.
    pub regions: usize,
    pub filtered: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStatus {
    Complete,
    /// No mergeable pairs remained before the target size was reached.
    Exhausted {
        merges: u32,
    },
}

#[derive(Debug, Clone)]
pub struct Training {
    pub vocab: Vocabulary,
    pub grids: Vec<TokenGrid>,
    pub status: TrainStatus,
    pub history: Vec<IterationReport>,
}

impl Training {
    /// Iterations where every top-k candidate was filtered.
    pub fn fallbacks(&self) -> impl Iterator<Item = usize> + '_ {
        self.history
            .iter()
            .filter(|r| r.fallback)
            .map(|r| r.iteration)
    }
}

pub fn train(corpus: &[QuantGrid], base_k: u32, cfg: &TrainerConfig) -> Result<Training> {
    train_with_progress(corpus, base_k, cfg, |_| {})
}

pub fn train_with_progress<F>(
    corpus: &[QuantGrid],
    base_k: u32,
    cfg: &TrainerConfig,
    mut progress: F,
) -> Result<Training>
where
    F: FnMut(&IterationReport),
{
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("no grids to train on"));
    }
    for g in corpus {
        g.check_range(base_k)?;
    }
    let mut vocab = Vocabulary::new(cfg.n_text, base_k)?;
    let layout = vocab.layout();
    let mut grids: Vec<TokenGrid> = corpus
        .iter()
        .map(|g| TokenGrid::from_quant(g, &layout))
        .collect();
    let mut filter = DiversityFilter::new(&vocab)?;
    let mut history = Vec::with_capacity(cfg.target_ext_size as usize);
    let mut status = TrainStatus::Complete;

    for iteration in 0..cfg.target_ext_size as usize {
        let table = scan_adjacencies(&grids);
        if table.is_empty() {
            status = TrainStatus::Exhausted {
                merges: vocab.ext_len(),
            };
            break;
        }
        let ranked = top_k(score_pairs(&table, cfg.alpha, cfg.sigma)?, cfg.top_k);
        let sel = match select_candidate(&ranked, &filter, cfg) {
            Ok(sel) => sel,
            Err(Error::ExhaustedPairs) => {
                status = TrainStatus::Exhausted {
                    merges: vocab.ext_len(),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        if sel.fallback {
            debug!(
                "iteration {iteration}: all {} candidates filtered, taking unfiltered best",
                sel.filtered
            );
        }
        let pair = sel.score.key;
        let new_id = vocab.push(
            pair.left,
            pair.right,
            sel.orientation,
            MergeScores {
                priority: sel.score.priority,
                frequency: sel.score.frequency,
                spatial: sel.score.spatial,
            },
        )?;
        filter.push(pair.left, pair.right);
        let replaced = apply_merge(&mut grids, pair, sel.orientation, new_id);
        let report = IterationReport {
            iteration,
            new_id,
            pair,
            orientation: sel.orientation,
            priority: sel.score.priority,
            replaced,
            regions: grids.iter().map(TokenGrid::len).sum(),
            filtered: sel.filtered,
            fallback: sel.fallback,
        };
        progress(&report);
        history.push(report);
    }

    if let TrainStatus::Exhausted { merges } = status {
        warn!(
            "corpus ran out of mergeable pairs after {merges} of {} merges",
            cfg.target_ext_size
        );
    }
    Ok(Training {
        vocab,
        grids,
        status,
        history,
    })
}
