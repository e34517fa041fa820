//! Multi-stage training plans: curriculum data-composition ratios and
//! progressive parameter-unfreezing masks. Plans are emitted as data; this
//! crate never trains a model.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PLAN_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_LAYER_FRACTION: f64 = 0.25;

const RATIO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DataType {
    /// Foundation: basic image-caption pairs.
    FD,
    /// Perception: detailed visual attributes.
    PD,
    /// Reasoning: complex visual QA.
    RD,
    /// Instruction: multi-turn interactions.
    ID,
}

impl DataType {
    pub const ALL: [DataType; 4] = [DataType::FD, DataType::PD, DataType::RD, DataType::ID];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnfreezeSpec {
    NewEmbeddingsOnly,
    LayersUpTo { fraction: f64 },
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: u8,
    pub ratios: BTreeMap<DataType, f64>,
    pub unfrozen: UnfreezeSpec,
}

impl StagePlan {
    pub fn new(stage: u8, ratios: [f64; 4], unfrozen: UnfreezeSpec) -> Result<Self> {
        let plan = Self {
            stage,
            ratios: DataType::ALL.into_iter().zip(ratios).collect(),
            unfrozen,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Ratios from unnormalized weights: `R_i = w_i / sum_j w_j`.
    pub fn from_weights(stage: u8, weights: [f64; 4], unfrozen: UnfreezeSpec) -> Result<Self> {
        if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::InvalidParameter(
                "weights must be finite and >= 0".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter("weights sum to zero".into()));
        }
        Self::new(stage, weights.map(|w| w / total), unfrozen)
    }

    pub fn ratio(&self, t: DataType) -> f64 {
        self.ratios.get(&t).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) {
            return Err(Error::InvalidParameter(format!(
                "stage {} not in 1..=3",
                self.stage
            )));
        }
        if self.ratios.values().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::InvalidParameter("ratios must lie in [0, 1]".into()));
        }
        let sum: f64 = self.ratios.values().sum();
        if (sum - 1.0).abs() > RATIO_TOL {
            return Err(Error::InvalidParameter(format!(
                "ratios sum to {sum}, not 1"
            )));
        }
        if let UnfreezeSpec::LayersUpTo { fraction } = self.unfrozen {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "layer fraction {fraction} not in (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Three stages: embedding alignment, selective fine-tuning of early layers,
/// full fine-tuning.
pub fn default_plan() -> Vec<StagePlan> {
    vec![
        StagePlan::new(1, [0.80, 0.20, 0.0, 0.0], UnfreezeSpec::NewEmbeddingsOnly),
        StagePlan::new(
            2,
            [0.40, 0.30, 0.20, 0.10],
            UnfreezeSpec::LayersUpTo {
                fraction: DEFAULT_LAYER_FRACTION,
            },
        ),
        StagePlan::new(3, [0.15, 0.15, 0.30, 0.40], UnfreezeSpec::All),
    ]
    .into_iter()
    .map(|p| p.expect("default ratios are valid"))
    .collect()
}

/// Which parameter groups a stage updates. `layers[i]` is layer `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterMask {
    /// Pretrained text embedding rows (ids below `n_text`).
    pub text_embeddings: bool,
    /// Newly added visual and special embedding rows (ids `>= n_text`).
    pub new_embeddings: bool,
    pub layers: Vec<bool>,
    /// Everything else: final norm, output head.
    pub head: bool,
}

impl ParameterMask {
    pub fn unfrozen_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, &u)| u.then_some(i + 1))
            .collect()
    }

    pub fn is_all(&self) -> bool {
        self.text_embeddings && self.new_embeddings && self.head && self.layers.iter().all(|&u| u)
    }

    /// Per-row mask over an embedding table of `total_rows` rows.
    pub fn embedding_rows(&self, n_text: usize, total_rows: usize) -> Vec<bool> {
        (0..total_rows)
            .map(|r| {
                if r < n_text {
                    self.text_embeddings
                } else {
                    self.new_embeddings
                }
            })
            .collect()
    }

    /// True if every group updatable here is also updatable in `other`.
    pub fn is_subset_of(&self, other: &ParameterMask) -> bool {
        let le = |a: bool, b: bool| !a || b;
        le(self.text_embeddings, other.text_embeddings)
            && le(self.new_embeddings, other.new_embeddings)
            && le(self.head, other.head)
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(&a, &b)| le(a, b))
    }
}

/// Number of leading layers a fraction unfreezes, rounded up.
pub fn layers_for_fraction(fraction: f64, n_layers: usize) -> usize {
    ((fraction * n_layers as f64).ceil() as usize).clamp(1, n_layers)
}

pub fn mask_spec(plan: &StagePlan, n_layers: usize) -> Result<ParameterMask> {
    if n_layers == 0 {
        return Err(Error::InvalidParameter("n_layers must be >= 1".into()));
    }
    Ok(match plan.unfrozen {
        UnfreezeSpec::NewEmbeddingsOnly => ParameterMask {
            text_embeddings: false,
            new_embeddings: true,
            layers: vec![false; n_layers],
            head: false,
        },
        UnfreezeSpec::LayersUpTo { fraction } => {
            let k = layers_for_fraction(fraction, n_layers);
            ParameterMask {
                text_embeddings: false,
                new_embeddings: true,
                layers: (0..n_layers).map(|i| i < k).collect(),
                head: false,
            }
        }
        UnfreezeSpec::All => ParameterMask {
            text_embeddings: true,
            new_embeddings: true,
            layers: vec![true; n_layers],
            head: true,
        },
    })
}

/// Draws items i.i.d.: a data type by its ratio, then uniformly within the
/// type's pool. One sampler per thread.
#[derive(Debug, Clone)]
pub struct CurriculumSampler {
    rng: ChaCha8Rng,
}

impl CurriculumSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample<T: Clone>(
        &mut self,
        pools: &BTreeMap<DataType, Vec<T>>,
        plan: &StagePlan,
        batch: usize,
    ) -> Result<Vec<T>> {
        plan.validate()?;
        let types = DataType::ALL;
        for t in types {
            if plan.ratio(t) > 0.0 && pools.get(&t).is_none_or(Vec::is_empty) {
                return Err(Error::PoolExhausted(format!("{t:?}")));
            }
        }
        if batch == 0 {
            return Ok(Vec::new());
        }
        let dist = WeightedIndex::new(types.map(|t| plan.ratio(t)))
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let pool = &pools[&types[dist.sample(&mut self.rng)]];
            out.push(pool[self.rng.random_range(0..pool.len())].clone());
        }
        Ok(out)
    }
}

pub fn sample_batch<T: Clone>(
    pools: &BTreeMap<DataType, Vec<T>>,
    plan: &StagePlan,
    batch: usize,
    seed: u64,
) -> Result<Vec<T>> {
    CurriculumSampler::new(seed).sample(pools, plan, batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: u8,
    pub ratios: BTreeMap<DataType, f64>,
    pub unfrozen: UnfreezeSpec,
    pub mask: ParameterMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub version: u32,
    pub n_layers: usize,
    pub stages: Vec<StageEntry>,
}

impl PlanFile {
    pub fn build(plans: &[StagePlan], n_layers: usize) -> Result<Self> {
        let stages = plans
            .iter()
            .map(|p| {
                Ok(StageEntry {
                    stage: p.stage,
                    ratios: p.ratios.clone(),
                    unfrozen: p.unfrozen,
                    mask: mask_spec(p, n_layers)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            version: PLAN_FORMAT_VERSION,
            n_layers,
            stages,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ratios_match_table() {
        let p = default_plan();
        let r = |s: &StagePlan| DataType::ALL.map(|t| s.ratio(t));
        assert_eq!(r(&p[0]), [0.80, 0.20, 0.0, 0.0]);
        assert_eq!(r(&p[1]), [0.40, 0.30, 0.20, 0.10]);
        assert_eq!(r(&p[2]), [0.15, 0.15, 0.30, 0.40]);
        for s in &p {
            assert!((s.ratios.values().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn stage_two_on_32_layers() {
        let m = mask_spec(&default_plan()[1], 32).unwrap();
        assert_eq!(m.unfrozen_layers(), (1..=8).collect::<Vec<_>>());
        assert!(m.new_embeddings && !m.text_embeddings && !m.head);
    }

    #[test]
    fn stage_two_rounds_up() {
        let m = mask_spec(&default_plan()[1], 10).unwrap();
        assert_eq!(m.unfrozen_layers(), vec![1, 2, 3]);
        let m1 = mask_spec(&default_plan()[1], 1).unwrap();
        assert_eq!(m1.unfrozen_layers(), vec![1]);
    }

    #[test]
    fn stage_one_and_three_masks() {
        let m1 = mask_spec(&default_plan()[0], 12).unwrap();
        assert!(m1.unfrozen_layers().is_empty());
        let rows = m1.embedding_rows(5, 9);
        assert_eq!(
            rows,
            vec![false, false, false, false, false, true, true, true, true]
        );
        for n in [1, 7, 32] {
            assert!(mask_spec(&default_plan()[2], n).unwrap().is_all());
        }
    }

    #[test]
    fn masks_are_monotone() {
        for n in 1..40 {
            let m: Vec<_> = default_plan()
                .iter()
                .map(|p| mask_spec(p, n).unwrap())
                .collect();
            assert!(m[0].is_subset_of(&m[1]));
            assert!(m[1].is_subset_of(&m[2]));
        }
    }

    #[test]
    fn zero_layers_rejected() {
        assert!(mask_spec(&default_plan()[0], 0).is_err());
    }

    #[test]
    fn weights_normalize() {
        let p = StagePlan::from_weights(2, [4.0, 3.0, 2.0, 1.0], UnfreezeSpec::All).unwrap();
        assert!((p.ratio(DataType::FD) - 0.4).abs() < 1e-15);
        assert!(StagePlan::new(1, [0.5, 0.4, 0.0, 0.0], UnfreezeSpec::All).is_err());
    }

    fn pools() -> BTreeMap<DataType, Vec<(DataType, usize)>> {
        DataType::ALL
            .into_iter()
            .map(|t| (t, (0..5).map(|i| (t, i)).collect()))
            .collect()
    }

    #[test]
    fn degenerate_ratio_draws_one_type() {
        let plan =
            StagePlan::new(1, [1.0, 0.0, 0.0, 0.0], UnfreezeSpec::NewEmbeddingsOnly).unwrap();
        let items = sample_batch(&pools(), &plan, 500, 3).unwrap();
        assert!(items.iter().all(|(t, _)| *t == DataType::FD));
    }

    #[test]
    fn empty_batch_and_missing_pool() {
        let plan = &default_plan()[1];
        assert!(sample_batch(&pools(), plan, 0, 0).unwrap().is_empty());
        let mut p = pools();
        p.get_mut(&DataType::RD).unwrap().clear();
        assert!(matches!(
            sample_batch(&p, plan, 10, 0),
            Err(Error::PoolExhausted(_))
        ));
        // stage 1 needs no RD
        assert!(sample_batch(&p, &default_plan()[0], 10, 0).is_ok());
    }

    #[test]
    fn sampling_is_seeded() {
        let plan = &default_plan()[2];
        assert_eq!(
            sample_batch(&pools(), plan, 100, 9).unwrap(),
            sample_batch(&pools(), plan, 100, 9).unwrap()
        );
    }

    #[test]
    fn plan_file_shape() {
        let f = PlanFile::build(&default_plan(), 32).unwrap();
        let v = serde_json::to_value(&f).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["stages"][0]["ratios"]["FD"], 0.8);
        assert_eq!(v["stages"][1]["unfrozen"]["kind"], "layers_up_to");
        assert_eq!(v["stages"][2]["mask"]["head"], true);
    }
}
