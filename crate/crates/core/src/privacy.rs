//! Calibration of the Dirichlet perturbation `alpha`.
//!
//! For epsilon-differential privacy every one of the `M` conditionals may
//! shift by at most a factor `1 + 1/alpha` between neighbouring datasets, so
//! `M ln(1 + 1/alpha) <= epsilon`. We take the bound with equality.
//! Entropy l-diversity instead asks each perturbed conditional to reach
//! entropy `ln l`; the smallest such `alpha` is solved per count row.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::blocks::{perturbed_distribution, BuildingBlocks};
use crate::data::{Category, Dataset};
use crate::error::{PegsError, Result};

/// Upper limit of the l-diversity bracket search.
const ALPHA_CAP: f64 = (1u64 << 60) as f64;
/// Largest joint domain the ratio oracle will enumerate.
pub const ORACLE_DOMAIN_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PrivacyCriterion {
    /// epsilon-DP for each independently synthesised record.
    DpPerSample { epsilon: f64 },
    /// epsilon-DP for a whole block of `block_size` chained records.
    DpPerBlock { epsilon: f64, block_size: usize },
    /// Entropy l-diversity of every perturbed conditional.
    LDiversity { l: f64 },
}

/// A validated privacy request together with the derived `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub criterion: PrivacyCriterion,
    pub n_features: usize,
    /// Single `alpha` for the DP criteria; `None` for l-diversity where it is
    /// solved per count row.
    pub derived_alpha: Option<f64>,
}

impl PrivacySpec {
    pub fn new(criterion: PrivacyCriterion, n_features: usize) -> Result<Self> {
        let derived_alpha = match criterion {
            PrivacyCriterion::DpPerSample { epsilon } => Some(alpha_for_epsilon(epsilon, n_features)?),
            PrivacyCriterion::DpPerBlock { epsilon, block_size } => {
                Some(alpha_for_block(epsilon, n_features, block_size)?)
            }
            PrivacyCriterion::LDiversity { l } => {
                if !(l >= 1.0) || !l.is_finite() {
                    return Err(PegsError::Privacy(format!("l must be a finite value >= 1, got {l}")));
                }
                None
            }
        };
        Ok(PrivacySpec {
            criterion,
            n_features,
            derived_alpha,
        })
    }

    pub fn dp_per_sample(epsilon: f64, n_features: usize) -> Result<Self> {
        Self::new(PrivacyCriterion::DpPerSample { epsilon }, n_features)
    }

    pub fn dp_per_block(epsilon: f64, block_size: usize, n_features: usize) -> Result<Self> {
        Self::new(PrivacyCriterion::DpPerBlock { epsilon, block_size }, n_features)
    }

    pub fn l_diversity(l: f64, n_features: usize) -> Result<Self> {
        Self::new(PrivacyCriterion::LDiversity { l }, n_features)
    }

    /// Privacy cost attributed to each synthetic record, when defined.
    pub fn per_sample_epsilon(&self) -> Option<f64> {
        match self.criterion {
            PrivacyCriterion::DpPerSample { epsilon } => Some(epsilon),
            PrivacyCriterion::DpPerBlock { epsilon, block_size } => Some(epsilon / block_size as f64),
            PrivacyCriterion::LDiversity { .. } => None,
        }
    }
}

fn check_epsilon(epsilon: f64, n_features: usize) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(PegsError::Privacy(format!("epsilon must be > 0, got {epsilon}")));
    }
    if n_features == 0 {
        return Err(PegsError::Privacy("at least one feature is required".into()));
    }
    Ok(())
}

/// `alpha = 1 / (exp(epsilon / M) - 1)`: the least perturbation giving
/// epsilon-DP per synthesised record.
pub fn alpha_for_epsilon(epsilon: f64, n_features: usize) -> Result<f64> {
    check_epsilon(epsilon, n_features)?;
    Ok(1.0 / (epsilon / n_features as f64).exp_m1())
}

/// `alpha` for a block of `block_size` chained records sharing the total
/// budget `epsilon`. The per-record cost is `epsilon / block_size`.
pub fn alpha_for_block(epsilon: f64, n_features: usize, block_size: usize) -> Result<f64> {
    if block_size == 0 {
        return Err(PegsError::Privacy("block size must be at least 1".into()));
    }
    alpha_for_epsilon(epsilon, n_features)
}

/// Shannon entropy in nats; zero-probability terms contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum::<f64>()
}

fn perturbed_entropy(counts: &[u32], total: u64, alpha: f64, buf: &mut Vec<f64>) -> f64 {
    perturbed_distribution(counts, total, alpha, buf).expect("non-empty row");
    entropy(buf)
}

/// Smallest `alpha` whose perturbed conditional has entropy at least `ln l`.
///
/// Returns 0 when the raw counts already qualify. Fails when `l` exceeds the
/// number of categories, or equals it while the counts are not uniform
/// (entropy only approaches `ln C` asymptotically).
pub fn alpha_for_ldiversity(counts: &[u32], l: f64) -> Result<f64> {
    let c = counts.len();
    if !(l >= 1.0) || !l.is_finite() {
        return Err(PegsError::Privacy(format!("l must be a finite value >= 1, got {l}")));
    }
    if l > c as f64 {
        return Err(PegsError::Privacy(format!(
            "l = {l} exceeds the {c} available categories; entropy can never reach ln l"
        )));
    }
    let total: u64 = counts.iter().map(|&n| n as u64).sum();
    let uniform = counts.windows(2).all(|w| w[0] == w[1]);
    if total == 0 || uniform {
        return Ok(0.0);
    }
    let target = l.ln();
    let mut buf = Vec::with_capacity(c);
    if perturbed_entropy(counts, total, 0.0, &mut buf) >= target - 1e-12 {
        return Ok(0.0);
    }
    if l >= c as f64 {
        return Err(PegsError::Privacy(format!(
            "l = {l} equals the category count; non-uniform counts only reach ln l asymptotically"
        )));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while perturbed_entropy(counts, total, hi, &mut buf) < target {
        lo = hi;
        hi *= 2.0;
        if hi > ALPHA_CAP {
            return Err(PegsError::Privacy(format!(
                "l = {l} is not reachable below alpha = 2^60 (entropy asymptote)"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if perturbed_entropy(counts, total, mid, &mut buf) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Per-condition l-diversity `alpha`s, solved lazily and memoised.
#[derive(Debug, Default)]
pub struct LDiversityCache {
    l: f64,
    solved: std::sync::RwLock<HashMap<(usize, u64), f64>>,
}

impl LDiversityCache {
    pub fn new(l: f64) -> Self {
        LDiversityCache {
            l,
            solved: Default::default(),
        }
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    /// `alpha` for feature `i` at `key`; empty rows need none.
    pub fn alpha(&self, blocks: &BuildingBlocks, i: usize, key: u64) -> Result<f64> {
        if let Some(&a) = self.solved.read().expect("cache lock").get(&(i, key)) {
            return Ok(a);
        }
        let alpha = match blocks.count_row(i, key) {
            Some(row) => alpha_for_ldiversity(&row.counts, self.l)?,
            None => {
                if self.l > blocks.schema().cardinality(i) as f64 {
                    return Err(PegsError::Privacy(format!(
                        "l = {} exceeds the {} categories of feature {i}",
                        self.l,
                        blocks.schema().cardinality(i)
                    )));
                }
                0.0
            }
        };
        self.solved.write().expect("cache lock").insert((i, key), alpha);
        Ok(alpha)
    }
}

/// Exact probability that one PeGS pass turns `seed` into `output`.
///
/// Feature `i` is drawn conditioned on `(output[..i], seed[i+1..])`, so the
/// probability factorises into `M` perturbed conditionals.
pub fn pass_probability(blocks: &BuildingBlocks, seed: &[Category], output: &[Category], alpha: f64) -> Result<f64> {
    let mut state = seed.to_vec();
    let mut buf = Vec::new();
    let mut prob = 1.0;
    for i in 0..blocks.n_features() {
        let key = blocks.key_for(i, &state);
        blocks.conditional_into(i, key, alpha, &mut buf)?;
        prob *= buf[output[i] as usize];
        state[i] = output[i];
    }
    Ok(prob)
}

/// Decodes a joint-domain index into a record (last feature varies fastest).
pub fn decode_joint(mut index: u64, cardinalities: &[usize], out: &mut [Category]) {
    for (slot, &c) in out.iter_mut().zip(cardinalities).rev() {
        *slot = (index % c as u64) as Category;
        index /= c as u64;
    }
}

pub fn encode_joint(record: &[Category], cardinalities: &[usize]) -> u64 {
    record
        .iter()
        .zip(cardinalities)
        .fold(0u64, |acc, (&v, &c)| acc * c as u64 + v as u64)
}

/// Exact output distribution of one PeGS pass from `seed`, indexed by
/// [`encode_joint`]. Guarded by [`ORACLE_DOMAIN_LIMIT`].
pub fn exact_pass_distribution(blocks: &BuildingBlocks, seed: &[Category], alpha: f64) -> Result<Vec<f64>> {
    let schema = blocks.schema();
    let domain = schema.joint_domain_size();
    if domain > ORACLE_DOMAIN_LIMIT {
        return Err(PegsError::Data(format!(
            "joint domain of {domain} records exceeds the enumeration limit {ORACLE_DOMAIN_LIMIT}"
        )));
    }
    let cards = schema.cardinalities();
    let mut record = vec![0; cards.len()];
    (0..domain as u64)
        .map(|idx| {
            decode_joint(idx, &cards, &mut record);
            pass_probability(blocks, seed, &record, alpha)
        })
        .collect()
}

fn neighbouring(d1: &Dataset, d2: &Dataset) -> bool {
    let (small, large) = if d1.n_rows() <= d2.n_rows() { (d1, d2) } else { (d2, d1) };
    if large.n_rows() - small.n_rows() > 1 {
        return false;
    }
    let mut bag: HashMap<&[Category], i64> = HashMap::new();
    for r in large.rows() {
        *bag.entry(r).or_default() += 1;
    }
    for r in small.rows() {
        *bag.entry(r).or_default() -= 1;
    }
    let excess: i64 = bag.values().map(|v| v.abs()).sum();
    excess <= 1
}

/// Brute-force check of the differential-privacy ratio for one seed.
///
/// Both datasets are disintegrated with the hash layout derived from
/// `dataset1`, so only the perturbed counts differ. Every output record is
/// enumerated and the largest `|ln Pr_1(x|s) - ln Pr_2(x|s)|` is returned.
pub fn dp_ratio_oracle(dataset1: &Dataset, dataset2: &Dataset, seed: &[Category], alpha: f64, m: usize) -> Result<f64> {
    if dataset1.schema() != dataset2.schema() {
        return Err(PegsError::Data("datasets must share a schema".into()));
    }
    if !neighbouring(dataset1, dataset2) {
        return Err(PegsError::Data("datasets differ by more than one row".into()));
    }
    let specs = (0..dataset1.n_features())
        .map(|i| crate::hashing::build_hash_spec(dataset1, i, m))
        .collect::<Result<Vec<_>>>()?;
    let b1 = BuildingBlocks::from_specs(dataset1, specs.clone())?;
    let b2 = BuildingBlocks::from_specs(dataset2, specs)?;
    max_log_ratio(&b1, &b2, seed, alpha)
}

/// Largest absolute log-ratio between the exact pass distributions of two
/// block sets that share hash layouts.
pub fn max_log_ratio(b1: &BuildingBlocks, b2: &BuildingBlocks, seed: &[Category], alpha: f64) -> Result<f64> {
    let p1 = exact_pass_distribution(b1, seed, alpha)?;
    let p2 = exact_pass_distribution(b2, seed, alpha)?;
    for p in [&p1, &p2] {
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(PegsError::Data(format!("enumerated distribution sums to {s}, not 1")));
        }
    }
    let mut worst: f64 = 0.0;
    for (&a, &b) in p1.iter().zip(&p2) {
        let r = match (a > 0.0, b > 0.0) {
            (true, true) => (a.ln() - b.ln()).abs(),
            (false, false) => 0.0,
            _ => f64::INFINITY,
        };
        worst = worst.max(r);
    }
    Ok(worst)
}
