//! Perturbed Gibbs sampling.
//!
//! One PeGS pass visits the features in schema order and redraws feature `i`
//! from its perturbed conditional given `(x_1..x_{i-1}, s_{i+1}..s_M)`: the
//! already-resampled prefix and the untouched suffix of the seed. PeGS.rs
//! chains `B` passes from one seed and, after each pass, resets every visited
//! `(feature, key)` conditional to uniform for the rest of the block.

use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::blocks::BuildingBlocks;
use crate::data::{Category, Dataset, Schema};
use crate::error::{PegsError, Result};
use crate::privacy::{LDiversityCache, PrivacyCriterion, PrivacySpec};
use crate::rng::{sample_categorical, substream, Purpose, StreamRng};

/// Starting records for synthesis.
///
/// Either a set of records drawn uniformly with replacement, or independent
/// per-feature draws from stored marginal counts (used when only the
/// building blocks are at hand).
#[derive(Debug, Clone)]
pub struct SeedPool {
    schema: Arc<Schema>,
    source: PoolSource,
}

#[derive(Debug, Clone)]
enum PoolSource {
    Records(Dataset),
    Marginals(Vec<Vec<f64>>),
}

impl SeedPool {
    pub fn new(records: Dataset) -> Result<Self> {
        if records.is_empty() {
            return Err(PegsError::Data("seed pool is empty".into()));
        }
        if let Some(v) = records.validate().first() {
            return Err(PegsError::Data(format!("seed pool record invalid: {v}")));
        }
        Ok(SeedPool {
            schema: Arc::clone(records.schema_arc()),
            source: PoolSource::Records(records),
        })
    }

    /// Pool of independent draws from the marginals stored in `blocks`.
    pub fn from_marginals(blocks: &BuildingBlocks) -> Result<Self> {
        if blocks.n_rows() == 0 {
            return Err(PegsError::Data("building blocks hold no rows to derive seeds from".into()));
        }
        let probs = (0..blocks.n_features())
            .map(|i| {
                let m = blocks.marginal(i);
                let n: u64 = m.iter().sum();
                m.iter().map(|&c| c as f64 / n as f64).collect()
            })
            .collect();
        Ok(SeedPool {
            schema: Arc::clone(blocks.schema_arc()),
            source: PoolSource::Marginals(probs),
        })
    }

    /// Number of stored records; `None` for a marginal pool.
    pub fn n_records(&self) -> Option<usize> {
        match &self.source {
            PoolSource::Records(d) => Some(d.n_rows()),
            PoolSource::Marginals(_) => None,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Category> {
        match &self.source {
            PoolSource::Records(d) => d.row(rng.random_range(0..d.n_rows())).to_vec(),
            PoolSource::Marginals(probs) => probs.iter().map(|p| sample_categorical(p, rng) as Category).collect(),
        }
    }
}

/// `(feature, key)` pairs whose conditionals currently read as uniform.
#[derive(Debug, Clone, Default)]
pub struct ResetOverlay {
    reset: HashSet<(usize, u64)>,
}

impl ResetOverlay {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_reset(&self, feature: usize, key: u64) -> bool {
        self.reset.contains(&(feature, key))
    }

    pub fn mark(&mut self, feature: usize, key: u64) {
        self.reset.insert((feature, key));
    }

    pub fn len(&self) -> usize {
        self.reset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reset.is_empty()
    }

    /// Conditional as seen through the overlay.
    pub fn conditional_into(&self, blocks: &BuildingBlocks, i: usize, key: u64, alpha: f64, out: &mut Vec<f64>) -> Result<()> {
        if self.is_reset(i, key) {
            let c = blocks.schema().cardinality(i);
            out.clear();
            out.resize(c, 1.0 / c as f64);
            Ok(())
        } else {
            blocks.conditional_into(i, key, alpha, out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    pub feature: usize,
    pub key: u64,
    pub value: Category,
    pub changed: bool,
}

/// Seed, per-feature steps and final record of one pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynthesisTrace {
    pub seed: Vec<Category>,
    pub steps: Vec<TraceStep>,
}

impl SynthesisTrace {
    /// Applies the recorded steps to the seed.
    pub fn replay(&self) -> Vec<Category> {
        let mut record = self.seed.clone();
        for step in &self.steps {
            record[step.feature] = step.value;
        }
        record
    }

    /// JSON object with labelled seed, steps and final record.
    pub fn to_json(&self, schema: &Schema) -> serde_json::Value {
        let label = |i: usize, v: Category| schema.feature(i).categories[v as usize].clone();
        let labelled = |rec: &[Category]| -> serde_json::Map<String, serde_json::Value> {
            rec.iter()
                .enumerate()
                .map(|(i, &v)| (schema.feature(i).name.clone(), label(i, v).into()))
                .collect()
        };
        let steps: Vec<serde_json::Value> = self
            .steps
            .iter()
            .map(|s| {
                serde_json::json!({
                    "feature": schema.feature(s.feature).name,
                    "key": s.key,
                    "value": label(s.feature, s.value),
                    "changed": s.changed,
                })
            })
            .collect();
        serde_json::json!({
            "seed": labelled(&self.seed),
            "steps": steps,
            "final": labelled(&self.replay()),
        })
    }
}

/// One sequential pass over all features, in place on `state`.
///
/// `conditional` fills the distribution for `(feature, key)`. Returns the
/// visited keys in feature order.
fn gibbs_pass<F>(
    blocks: &BuildingBlocks,
    state: &mut [Category],
    rng: &mut StreamRng,
    mut conditional: F,
    mut trace: Option<&mut Vec<TraceStep>>,
) -> Result<Vec<u64>>
where
    F: FnMut(usize, u64, &mut Vec<f64>) -> Result<()>,
{
    let mut buf = Vec::with_capacity(blocks.schema().c_max());
    let mut visited = Vec::with_capacity(state.len());
    for i in 0..state.len() {
        let key = blocks.key_for(i, state);
        conditional(i, key, &mut buf)?;
        let value = sample_categorical(&buf, rng) as Category;
        if let Some(steps) = trace.as_deref_mut() {
            steps.push(TraceStep {
                feature: i,
                key,
                value,
                changed: value != state[i],
            });
        }
        state[i] = value;
        visited.push(key);
    }
    Ok(visited)
}

fn check_seed(blocks: &BuildingBlocks, seed: &[Category]) -> Result<()> {
    let schema = blocks.schema();
    if seed.len() != schema.len() || seed.iter().enumerate().any(|(i, &v)| v as usize >= schema.cardinality(i)) {
        return Err(PegsError::Data(format!("seed {seed:?} does not fit the schema")));
    }
    Ok(())
}

/// Single PeGS pass from `seed` with a fixed `alpha`.
pub fn pegs_sample(
    blocks: &BuildingBlocks,
    seed: &[Category],
    alpha: f64,
    rng: &mut StreamRng,
) -> Result<(Vec<Category>, SynthesisTrace)> {
    check_seed(blocks, seed)?;
    let mut state = seed.to_vec();
    let mut steps = Vec::with_capacity(seed.len());
    gibbs_pass(
        blocks,
        &mut state,
        rng,
        |i, key, buf| blocks.conditional_into(i, key, alpha, buf),
        Some(&mut steps),
    )?;
    Ok((
        state,
        SynthesisTrace {
            seed: seed.to_vec(),
            steps,
        },
    ))
}

/// PeGS pass where each conditional gets its own l-diversity `alpha`.
pub fn pegs_sample_ldiv(
    blocks: &BuildingBlocks,
    seed: &[Category],
    cache: &LDiversityCache,
    rng: &mut StreamRng,
) -> Result<(Vec<Category>, SynthesisTrace)> {
    check_seed(blocks, seed)?;
    let mut state = seed.to_vec();
    let mut steps = Vec::with_capacity(seed.len());
    gibbs_pass(
        blocks,
        &mut state,
        rng,
        |i, key, buf| {
            if blocks.count_row(i, key).is_none() {
                let c = blocks.schema().cardinality(i);
                buf.clear();
                buf.resize(c, 1.0 / c as f64);
                return Ok(());
            }
            let alpha = cache.alpha(blocks, i, key)?;
            blocks.conditional_into(i, key, alpha, buf)
        },
        Some(&mut steps),
    )?;
    Ok((
        state,
        SynthesisTrace {
            seed: seed.to_vec(),
            steps,
        },
    ))
}

/// A PeGS.rs block: `block_size` chained passes with reset.
///
/// Returns the records and the overlay as it stands after the block, so the
/// caller can inspect which conditionals were consumed.
pub fn pegs_rs_block_with_overlay(
    blocks: &BuildingBlocks,
    seed: &[Category],
    alpha: f64,
    block_size: usize,
    rng: &mut StreamRng,
) -> Result<(Vec<Vec<Category>>, ResetOverlay)> {
    if block_size == 0 {
        return Err(PegsError::Privacy("block size must be at least 1".into()));
    }
    check_seed(blocks, seed)?;
    let mut overlay = ResetOverlay::new();
    let mut state = seed.to_vec();
    let mut out = Vec::with_capacity(block_size);
    for _ in 0..block_size {
        let visited = gibbs_pass(
            blocks,
            &mut state,
            rng,
            |i, key, buf| overlay.conditional_into(blocks, i, key, alpha, buf),
            None,
        )?;
        for (i, key) in visited.into_iter().enumerate() {
            overlay.mark(i, key);
        }
        out.push(state.clone());
    }
    Ok((out, overlay))
}

pub fn pegs_rs_block(
    blocks: &BuildingBlocks,
    seed: &[Category],
    alpha: f64,
    block_size: usize,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<Category>>> {
    pegs_rs_block_with_overlay(blocks, seed, alpha, block_size, rng).map(|(records, _)| records)
}

/// Runs `units` independent work units per dataset, each yielding records
/// from its own stream, and assembles `k` datasets of `n_samples` rows.
pub(crate) fn synthesize_units<F>(
    schema: &Arc<Schema>,
    n_samples: usize,
    k: usize,
    seed: u64,
    per_unit: usize,
    unit: F,
) -> Result<Vec<Dataset>>
where
    F: Fn(&mut StreamRng) -> Result<Vec<Vec<Category>>> + Sync,
{
    if n_samples == 0 || k == 0 {
        return Err(PegsError::Data("n_samples and K must both be at least 1".into()));
    }
    let units = n_samples.div_ceil(per_unit);
    (0..k)
        .map(|d| {
            let chunks = (0..units)
                .into_par_iter()
                .map(|u| {
                    let mut rng = substream(seed, d as u64, Purpose::Synthesis, u as u64);
                    unit(&mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut ds = Dataset::empty(Arc::clone(schema));
            for record in chunks.into_iter().flatten().take(n_samples) {
                ds.push_row(&record)?;
            }
            Ok(ds)
        })
        .collect()
}

/// Produces `k` synthetic datasets of `n_samples` records.
///
/// Per-sample DP and l-diversity draw a fresh seed for every record;
/// per-block DP draws one seed per block of chained records, with a fresh
/// overlay for every block.
pub fn synthesize(
    blocks: &BuildingBlocks,
    privacy: &PrivacySpec,
    pool: &SeedPool,
    n_samples: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Dataset>> {
    if pool.schema() != blocks.schema() {
        return Err(PegsError::Schema("seed pool schema differs from the blocks schema".into()));
    }
    let schema = blocks.schema_arc();
    match privacy.criterion {
        PrivacyCriterion::DpPerSample { .. } => {
            let alpha = privacy.derived_alpha.expect("DP spec carries alpha");
            synthesize_units(schema, n_samples, k, seed, 1, |rng| {
                let s = pool.draw(rng);
                Ok(vec![pegs_sample(blocks, &s, alpha, rng)?.0])
            })
        }
        PrivacyCriterion::DpPerBlock { block_size, .. } => {
            let alpha = privacy.derived_alpha.expect("DP spec carries alpha");
            synthesize_units(schema, n_samples, k, seed, block_size, |rng| {
                let s = pool.draw(rng);
                pegs_rs_block(blocks, &s, alpha, block_size, rng)
            })
        }
        PrivacyCriterion::LDiversity { l } => {
            let cache = LDiversityCache::new(l);
            synthesize_units(schema, n_samples, k, seed, 1, |rng| {
                let s = pool.draw(rng);
                Ok(vec![pegs_sample_ldiv(blocks, &s, &cache, rng)?.0])
            })
        }
    }
}

/// Traces of the first `count` records of dataset 0 under per-sample DP;
/// same streams as [`synthesize`], so the final records match its output.
pub fn traces(
    blocks: &BuildingBlocks,
    alpha: f64,
    pool: &SeedPool,
    count: usize,
    seed: u64,
) -> Result<Vec<SynthesisTrace>> {
    (0..count)
        .map(|u| {
            let mut rng = substream(seed, 0, Purpose::Synthesis, u as u64);
            let s = pool.draw(&mut rng);
            pegs_sample(blocks, &s, alpha, &mut rng).map(|(_, t)| t)
        })
        .collect()
}
