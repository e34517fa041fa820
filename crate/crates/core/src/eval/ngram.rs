//! Add-lambda smoothed unigram / bigram models scored per underlying grid
//! cell, so vocabularies with different compression stay comparable.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::QuantGrid;
use crate::tokenizer::encode;
use crate::vocab::Vocabulary;

/// Token ids of one image plus the number of base cells they cover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSequence {
    pub ids: Vec<u32>,
    pub cells: u64,
}

impl EvalSequence {
    pub fn raw(grid: &QuantGrid) -> Self {
        Self {
            ids: grid.cells().to_vec(),
            cells: grid.len() as u64,
        }
    }

    /// Encoded ids re-indexed to `[0, K + ext)`.
    pub fn encoded(grid: &QuantGrid, vocab: &Vocabulary) -> Result<Self> {
        let e = encode(grid, vocab)?;
        let offset = vocab.n_text();
        Ok(Self {
            ids: e.sequence.ids.iter().map(|t| t.0 - offset).collect(),
            cells: grid.len() as u64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllReport {
    pub total_nll: f64,
    pub tokens: u64,
    pub cells: u64,
}

impl NllReport {
    pub fn per_cell(&self) -> f64 {
        self.total_nll / self.cells as f64
    }

    pub fn per_token(&self) -> f64 {
        self.total_nll / self.tokens as f64
    }
}

#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    lambda: f64,
    vocab_size: u64,
    unigram: HashMap<u32, u64>,
    unigram_total: u64,
    bigram: HashMap<(u32, u32), u64>,
    context: HashMap<u32, u64>,
}

impl NgramModel {
    /// Fits counts on `train`. `vocab_size` is the support used for smoothing.
    pub fn fit(train: &[EvalSequence], order: usize, lambda: f64, vocab_size: u64) -> Result<Self> {
        if !(1..=2).contains(&order) {
            return Err(Error::InvalidParameter(format!(
                "order must be 1 or 2, got {order}"
            )));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be > 0, got {lambda}"
            )));
        }
        if vocab_size == 0 {
            return Err(Error::InvalidParameter("vocab_size must be >= 1".into()));
        }
        if train.iter().all(|s| s.ids.is_empty()) {
            return Err(Error::EmptyCorpus("training split has no tokens"));
        }
        let mut model = Self {
            order,
            lambda,
            vocab_size,
            unigram: HashMap::new(),
            unigram_total: 0,
            bigram: HashMap::new(),
            context: HashMap::new(),
        };
        for seq in train {
            for &t in &seq.ids {
                if t as u64 >= vocab_size {
                    return Err(Error::IndexOutOfRange {
                        value: t as u64,
                        limit: vocab_size,
                    });
                }
                *model.unigram.entry(t).or_default() += 1;
                model.unigram_total += 1;
            }
            if order == 2 {
                for w in seq.ids.windows(2) {
                    *model.bigram.entry((w[0], w[1])).or_default() += 1;
                    *model.context.entry(w[0]).or_default() += 1;
                }
            }
        }
        Ok(model)
    }

    fn unigram_logp(&self, t: u32) -> f64 {
        let c = self.unigram.get(&t).copied().unwrap_or(0) as f64;
        ((c + self.lambda) / (self.unigram_total as f64 + self.lambda * self.vocab_size as f64))
            .ln()
    }

    fn bigram_logp(&self, prev: u32, t: u32) -> f64 {
        let c = self.bigram.get(&(prev, t)).copied().unwrap_or(0) as f64;
        let ctx = self.context.get(&prev).copied().unwrap_or(0) as f64;
        ((c + self.lambda) / (ctx + self.lambda * self.vocab_size as f64)).ln()
    }

    /// Negative log-likelihood of one sequence, in nats. The first token of
    /// a bigram model is scored by the unigram.
    pub fn sequence_nll(&self, ids: &[u32]) -> f64 {
        let mut nll = 0.0;
        for (i, &t) in ids.iter().enumerate() {
            nll -= if self.order == 1 || i == 0 {
                self.unigram_logp(t)
            } else {
                self.bigram_logp(ids[i - 1], t)
            };
        }
        nll
    }

    pub fn evaluate(&self, eval: &[EvalSequence]) -> Result<NllReport> {
        let cells: u64 = eval.iter().map(|s| s.cells).sum();
        if eval.is_empty() || cells == 0 {
            return Err(Error::EmptyCorpus("evaluation split has no cells"));
        }
        let per_seq: Vec<f64> = eval.par_iter().map(|s| self.sequence_nll(&s.ids)).collect();
        Ok(NllReport {
            total_nll: per_seq.iter().sum(),
            tokens: eval.iter().map(|s| s.ids.len() as u64).sum(),
            cells,
        })
    }
}

/// Fits on `train`, scores `eval`; see [`NllReport::per_cell`].
pub fn ngram_nll(
    train: &[EvalSequence],
    eval: &[EvalSequence],
    order: usize,
    lambda: f64,
    vocab_size: u64,
) -> Result<NllReport> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus("training split is empty"));
    }
    NgramModel::fit(train, order, lambda, vocab_size)?.evaluate(eval)
}

/// First `ceil(frac * n)` items train, the rest evaluate.
pub fn split_train_eval<T>(items: &[T], train_frac: f64) -> (&[T], &[T]) {
    let cut = ((items.len() as f64 * train_frac).ceil() as usize).min(items.len());
    items.split_at(cut)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(ids: &[u32]) -> EvalSequence {
        EvalSequence {
            ids: ids.to_vec(),
            cells: ids.len() as u64,
        }
    }

    #[test]
    fn uniform_unigram_is_log_v() {
        let v = 8u32;
        let train = vec![seq(&(0..v).cycle().take(800).collect::<Vec<_>>())];
        let eval = vec![seq(&(0..v).collect::<Vec<_>>())];
        let r = ngram_nll(&train, &eval, 1, 1.0, v as u64).unwrap();
        assert!((r.per_token() - (v as f64).ln()).abs() < 1e-12);
        assert_eq!(r.per_token(), r.per_cell());
    }

    #[test]
    fn deterministic_sequence_bigram_nll_vanishes() {
        let ids: Vec<u32> = [0u32, 1, 2].iter().copied().cycle().take(30_000).collect();
        let r = ngram_nll(&[seq(&ids)], &[seq(&ids)], 2, 1e-9, 3).unwrap();
        assert!(r.per_token() < 1e-3, "{}", r.per_token());
    }

    #[test]
    fn per_cell_normalization() {
        let train = vec![seq(&[0, 1, 1, 0, 2])];
        let eval = vec![EvalSequence {
            ids: vec![1, 2],
            cells: 6,
        }];
        let r = ngram_nll(&train, &eval, 1, 0.5, 4).unwrap();
        assert_eq!(r.cells, 6);
        assert!((r.per_cell() * 6.0 - r.per_token() * 2.0).abs() < 1e-12);
        let doubled = vec![eval[0].clone(), eval[0].clone()];
        let r2 = ngram_nll(&train, &doubled, 1, 0.5, 4).unwrap();
        assert!((r.per_cell() - r2.per_cell()).abs() < 1e-12);
    }

    #[test]
    fn order_invariance() {
        let train = vec![seq(&[0, 1, 1, 2]), seq(&[2, 2, 0]), seq(&[1, 0, 0, 0, 1])];
        let eval = vec![seq(&[0, 0, 1]), seq(&[2, 1]), seq(&[1, 1, 1, 0])];
        let a = ngram_nll(&train, &eval, 2, 0.1, 3).unwrap();
        let mut tr = train.clone();
        tr.reverse();
        let mut ev = eval.clone();
        ev.rotate_left(1);
        let b = ngram_nll(&tr, &ev, 2, 0.1, 3).unwrap();
        assert!((a.total_nll - b.total_nll).abs() < 1e-12 * a.total_nll.abs().max(1.0));
    }

    #[test]
    fn parameter_and_split_errors() {
        let s = vec![seq(&[0])];
        assert!(matches!(
            ngram_nll(&[], &s, 1, 1.0, 2),
            Err(Error::EmptyCorpus(_))
        ));
        assert!(matches!(
            ngram_nll(&s, &[], 1, 1.0, 2),
            Err(Error::EmptyCorpus(_))
        ));
        assert!(matches!(
            ngram_nll(&s, &s, 3, 1.0, 2),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            ngram_nll(&s, &s, 1, 0.0, 2),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            ngram_nll(&[seq(&[5])], &s, 1, 1.0, 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn split_fraction() {
        let items: Vec<u32> = (0..10).collect();
        let (a, b) = split_train_eval(&items, 0.8);
        assert_eq!((a.len(), b.len()), (8, 2));
    }
}
