//! Synthetic 2D Markov grids.
//!
//! Cell `(0,0)` is uniform. Every other cell in row 0 and every interior
//! cell is drawn from the right-transition row of its left neighbor; cells
//! in column 0 below the first row are drawn from the down-transition row of
//! the cell above.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::QuantGrid;

const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovGridSource {
    n_symbols: usize,
    transition_right: Vec<Vec<f64>>,
    transition_down: Vec<Vec<f64>>,
    seed: u64,
}

fn check_stochastic(name: &str, m: &[Vec<f64>], n: usize) -> Result<()> {
    if m.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{name} has {} rows, expected {n}",
            m.len()
        )));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidParameter(format!(
                "{name} row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if row.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "{name} row {i} has a negative entry"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidParameter(format!(
                "{name} row {i} sums to {sum}, not 1"
            )));
        }
    }
    Ok(())
}

impl MarkovGridSource {
    pub fn new(
        transition_right: Vec<Vec<f64>>,
        transition_down: Vec<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        let n = transition_right.len();
        if n == 0 {
            return Err(Error::InvalidParameter("need at least one symbol".into()));
        }
        check_stochastic("transition_right", &transition_right, n)?;
        check_stochastic("transition_down", &transition_down, n)?;
        Ok(Self {
            n_symbols: n,
            transition_right,
            transition_down,
            seed,
        })
    }

    /// Symmetric "sticky" source: stay with probability `stay_right` /
    /// `stay_down`, otherwise move to one of the other symbols uniformly.
    pub fn sticky(n_symbols: usize, stay_right: f64, stay_down: f64, seed: u64) -> Result<Self> {
        let build = |stay: f64| -> Result<Vec<Vec<f64>>> {
            if !(0.0..=1.0).contains(&stay) {
                return Err(Error::InvalidParameter(format!(
                    "stay probability {stay} not in [0,1]"
                )));
            }
            if n_symbols == 1 {
                return Ok(vec![vec![1.0]]);
            }
            let off = (1.0 - stay) / (n_symbols - 1) as f64;
            Ok((0..n_symbols)
                .map(|i| {
                    (0..n_symbols)
                        .map(|j| if i == j { stay } else { off })
                        .collect()
                })
                .collect())
        };
        if n_symbols == 0 {
            return Err(Error::InvalidParameter("need at least one symbol".into()));
        }
        Self::new(build(stay_right)?, build(stay_down)?, seed)
    }

    #[inline]
    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn generate(&self, height: u32, width: u32, count: usize) -> Vec<QuantGrid> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..count)
            .map(|_| self.sample_grid(&mut rng, height, width))
            .collect()
    }

    fn sample_grid(&self, rng: &mut ChaCha8Rng, height: u32, width: u32) -> QuantGrid {
        let (h, w) = (height as usize, width as usize);
        let mut cells = vec![0u32; h * w];
        for i in 0..h {
            for j in 0..w {
                let sym = if i == 0 && j == 0 {
                    rng.random_range(0..self.n_symbols)
                } else if j > 0 {
                    sample_row(rng, &self.transition_right[cells[i * w + j - 1] as usize])
                } else {
                    sample_row(rng, &self.transition_down[cells[(i - 1) * w] as usize])
                };
                cells[i * w + j] = sym as u32;
            }
        }
        QuantGrid::new(height, width, cells).expect("cell count matches shape")
    }
}

fn sample_row(rng: &mut ChaCha8Rng, row: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left u above the cumulative sum: take the last reachable symbol
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
