//! Compression of the conditioning vector `x_{-i}` into a small integer key.
//!
//! The key is the mixed-radix encoding of the `m` features sharing the most
//! mutual information with the target, followed by a single bit summarising
//! all remaining features:
//!
//! ```text
//! key = (x_o(1) :: ... :: x_o(m)) << 1 | tail_bit(x_o(m+1) .. x_o(M-1))
//! ```
//!
//! When `m = M - 1` nothing is left for the tail and the shift is dropped, so
//! the key is an injective encoding of the full condition.

use serde::{Deserialize, Serialize};

use crate::data::{Category, Dataset, Schema};
use crate::error::{PegsError, Result};

/// Initial state of the tail mixer (the 64-bit golden ratio).
pub const TAIL_SEED: u64 = 0x9E37_79B9_7F4A_7C15;
/// First multiplier of the tail mixer.
pub const MIX_MUL1: u64 = 0xBF58_476D_1CE4_E5B9;
/// Second multiplier of the tail mixer.
pub const MIX_MUL2: u64 = 0x94D0_49BB_1331_11EB;

/// SplitMix64 finaliser: xor-shift 30, multiply, xor-shift 27, multiply,
/// xor-shift 31.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_MUL1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_MUL2);
    z ^ (z >> 31)
}

/// One-bit summary of a value sequence.
///
/// Starting from [`TAIL_SEED`], each `(position, value)` pair is folded in as
/// `h = mix64(h ^ (position << 32 | value))`; the result is the low bit of
/// `h`. An empty sequence maps to 0.
pub fn one_bit_tail(values: &[Category]) -> u8 {
    if values.is_empty() {
        return 0;
    }
    let h = values
        .iter()
        .enumerate()
        .fold(TAIL_SEED, |h, (pos, &v)| mix64(h ^ ((pos as u64) << 32 | v as u64)));
    (h & 1) as u8
}

/// Plug-in (maximum likelihood) mutual information between two features, in nats.
pub fn mutual_information(dataset: &Dataset, i: usize, j: usize) -> f64 {
    let n = dataset.n_rows();
    if n == 0 || i == j {
        return if i == j { entropy_of_counts(&dataset.counts(i)) } else { 0.0 };
    }
    let ci = dataset.schema().cardinality(i);
    let cj = dataset.schema().cardinality(j);
    let mut joint = vec![0u64; ci * cj];
    for row in dataset.rows() {
        joint[row[i] as usize * cj + row[j] as usize] += 1;
    }
    let mut pi = vec![0u64; ci];
    let mut pj = vec![0u64; cj];
    for a in 0..ci {
        for b in 0..cj {
            let c = joint[a * cj + b];
            pi[a] += c;
            pj[b] += c;
        }
    }
    let n = n as f64;
    let mut mi = 0.0;
    for a in 0..ci {
        for b in 0..cj {
            let c = joint[a * cj + b];
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += c / n * (c * n / (pi[a] as f64 * pj[b] as f64)).ln();
        }
    }
    mi.max(0.0)
}

fn entropy_of_counts(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Hash layout for one target feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashSpec {
    pub target: usize,
    /// The other features, most informative about the target first.
    pub ordering: Vec<usize>,
    /// Number of leading features encoded exactly.
    pub m: usize,
    /// Category counts of `ordering[..m]`.
    pub radices: Vec<u64>,
    /// Number of distinct keys (H).
    pub key_space: u64,
}

impl HashSpec {
    /// Builds a spec from an explicit feature ordering.
    pub fn with_ordering(schema: &Schema, target: usize, ordering: Vec<usize>, m: usize) -> Result<Self> {
        let big_m = schema.len();
        if target >= big_m {
            return Err(PegsError::Schema(format!("target feature {target} out of range")));
        }
        let mut seen = vec![false; big_m];
        seen[target] = true;
        for &f in &ordering {
            if f >= big_m || seen[f] {
                return Err(PegsError::Schema(format!(
                    "ordering {ordering:?} is not a permutation of the non-target features"
                )));
            }
            seen[f] = true;
        }
        if ordering.len() != big_m - 1 {
            return Err(PegsError::Schema(format!(
                "ordering {ordering:?} is not a permutation of the non-target features"
            )));
        }
        if m == 0 || m > big_m - 1 {
            return Err(PegsError::Schema(format!("hash width m = {m} outside [1, {}]", big_m - 1)));
        }
        let radices: Vec<u64> = ordering[..m].iter().map(|&f| schema.cardinality(f) as u64).collect();
        let exact = radices
            .iter()
            .try_fold(1u64, |acc, &r| acc.checked_mul(r))
            .ok_or_else(|| PegsError::Schema("hash key space overflows 64 bits".into()))?;
        let key_space = if m == big_m - 1 {
            exact
        } else {
            exact
                .checked_mul(2)
                .ok_or_else(|| PegsError::Schema("hash key space overflows 64 bits".into()))?
        };
        Ok(HashSpec {
            target,
            ordering,
            m,
            radices,
            key_space,
        })
    }

    pub fn has_tail(&self) -> bool {
        self.m < self.ordering.len()
    }

    /// Key of the condition formed by every feature of `record` except the
    /// target (the target's own cell is ignored).
    #[inline]
    pub fn key_of_record(&self, record: &[Category]) -> u64 {
        let mut key = 0u64;
        for (&f, &radix) in self.ordering[..self.m].iter().zip(&self.radices) {
            key = key * radix + record[f] as u64;
        }
        if !self.has_tail() {
            return key;
        }
        let mut h = TAIL_SEED;
        for (pos, &f) in self.ordering[self.m..].iter().enumerate() {
            h = mix64(h ^ ((pos as u64) << 32 | record[f] as u64));
        }
        key << 1 | (h & 1)
    }

    /// Key of a condition given as `x_{-i}`: the `M - 1` non-target values in
    /// schema order.
    pub fn hash_condition(&self, x_minus_i: &[Category]) -> u64 {
        debug_assert_eq!(x_minus_i.len(), self.ordering.len());
        let mut key = 0u64;
        for (&f, &radix) in self.ordering[..self.m].iter().zip(&self.radices) {
            key = key * radix + x_minus_i[self.position(f)] as u64;
        }
        if !self.has_tail() {
            return key;
        }
        let tail: Vec<Category> = self.ordering[self.m..]
            .iter()
            .map(|&f| x_minus_i[self.position(f)])
            .collect();
        key << 1 | one_bit_tail(&tail) as u64
    }

    fn position(&self, feature: usize) -> usize {
        if feature < self.target {
            feature
        } else {
            feature - 1
        }
    }
}

/// Orders the non-target features by descending mutual information with the
/// target (ties by ascending index) and keeps the first `m` in the exact part
/// of the key. `m` above `M - 1` is clamped.
pub fn build_hash_spec(dataset: &Dataset, target: usize, m: usize) -> Result<HashSpec> {
    let schema = dataset.schema();
    let big_m = schema.len();
    if m == 0 {
        return Err(PegsError::Schema("hash width m must be at least 1".into()));
    }
    if target >= big_m {
        return Err(PegsError::Schema(format!("target feature {target} out of range")));
    }
    let mut scored: Vec<(usize, f64)> = (0..big_m)
        .filter(|&j| j != target)
        .map(|j| (j, mutual_information(dataset, target, j)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let ordering = scored.into_iter().map(|(j, _)| j).collect();
    HashSpec::with_ordering(schema, target, ordering, m.min(big_m - 1))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::data::FeatureSpec;

    fn schema(cards: &[usize]) -> Arc<Schema> {
        Arc::new(
            Schema::new(
                cards
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| FeatureSpec::categorical(format!("f{k}"), (0..c).map(|v| v.to_string())).unwrap())
                    .collect(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn copy_has_mi_equal_to_entropy() {
        let ds = Dataset::from_rows(schema(&[3, 3]), [[0, 0], [1, 1], [2, 2], [2, 2]]).unwrap();
        let h = -(0.25f64 * 0.25f64.ln() * 2.0 + 0.5 * 0.5f64.ln());
        approx::assert_relative_eq!(mutual_information(&ds, 0, 1), h, epsilon = 1e-12);
    }

    #[test]
    fn product_dataset_has_zero_mi() {
        let mut rows = Vec::new();
        for a in 0..3 {
            for b in 0..2 {
                rows.push([a, b]);
            }
        }
        let ds = Dataset::from_rows(schema(&[3, 2]), rows).unwrap();
        assert!(mutual_information(&ds, 0, 1).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_joint_matches_exact_sum() {
        // joint counts [[2,1],[1,2]] over 6 rows, marginals 1/2 each:
        // MI = 2 * (2/6) ln(4/3) + 2 * (1/6) ln(2/3)
        let rows = [[0, 0], [0, 0], [0, 1], [1, 0], [1, 1], [1, 1]];
        let ds = Dataset::from_rows(schema(&[2, 2]), rows).unwrap();
        let expected = (2.0 / 3.0) * (4.0f64 / 3.0).ln() + (1.0 / 3.0) * (2.0f64 / 3.0).ln();
        approx::assert_relative_eq!(mutual_information(&ds, 0, 1), expected, epsilon = 1e-14);
        approx::assert_relative_eq!(mutual_information(&ds, 1, 0), expected, epsilon = 1e-14);
        // 0.0566330122651324 from an independent fractions-based evaluation
        approx::assert_relative_eq!(expected, 0.056_633_012_265_132_43, epsilon = 1e-15);
    }

    #[test]
    fn m_equal_to_two_features_forces_single_feature_ordering() {
        let ds = Dataset::from_rows(schema(&[2, 3]), [[0, 1]]).unwrap();
        let spec = build_hash_spec(&ds, 0, 5).unwrap();
        assert_eq!(spec.ordering, vec![1]);
        assert_eq!(spec.m, 1);
        assert!(!spec.has_tail());
        assert_eq!(spec.key_space, 3);
        assert!(build_hash_spec(&ds, 0, 0).is_err());
    }

    #[test]
    fn constant_dataset_orders_by_index() {
        let ds = Dataset::from_rows(schema(&[2, 2, 2, 2]), [[1, 1, 1, 1], [1, 1, 1, 1]]).unwrap();
        let spec = build_hash_spec(&ds, 2, 1).unwrap();
        assert_eq!(spec.ordering, vec![0, 1, 3]);
    }

    #[test]
    fn ordering_follows_mutual_information() {
        // f1 copies f0; f2 agrees with f0 on 3 of 4 rows.
        let rows = [[0, 0, 0], [1, 1, 1], [0, 0, 1], [1, 1, 1]];
        let ds = Dataset::from_rows(schema(&[2, 2, 2]), rows).unwrap();
        let a = mutual_information(&ds, 0, 1);
        let b = mutual_information(&ds, 0, 2);
        assert!(a > b);
        assert_eq!(build_hash_spec(&ds, 0, 1).unwrap().ordering, vec![1, 2]);
    }

    #[test]
    fn zero_condition_without_tail_is_key_zero() {
        let s = schema(&[3, 4, 5]);
        let spec = HashSpec::with_ordering(&s, 1, vec![2, 0], 2).unwrap();
        assert_eq!(spec.hash_condition(&[0, 0]), 0);
        assert_eq!(spec.key_space, 15);
        // f2 is the most significant digit
        assert_eq!(spec.hash_condition(&[2, 4]), 4 * 3 + 2);
        assert_eq!(spec.key_of_record(&[2, 99, 4]), 14);
    }

    #[test]
    fn key_space_bound_for_width_two() {
        let s = schema(&[25, 25, 25, 3, 2]);
        let spec = HashSpec::with_ordering(&s, 0, vec![1, 2, 3, 4], 2).unwrap();
        assert_eq!(spec.key_space, 1250);
        assert!(spec.key_space <= 2 * 25u64.pow(2));
    }

    #[test]
    fn tail_bit_is_pinned() {
        assert_eq!(one_bit_tail(&[]), 0);
        assert_eq!(one_bit_tail(&[3, 1, 4]), one_bit_tail(&[3, 1, 4]));
        // Values produced by an independent Python evaluation of the mixer.
        assert_eq!(mix64(TAIL_SEED ^ 3), 0x910a_2dec_8902_5cc1);
        assert_eq!(one_bit_tail(&[3, 1, 4]), 0);
        assert_eq!(one_bit_tail(&[0, 0, 1]), 1);
    }
}
