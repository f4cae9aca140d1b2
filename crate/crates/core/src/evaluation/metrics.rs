use crate::data::Dataset;
use crate::error::{PegsError, Result};

pub(crate) fn check_pair(orig: &Dataset, synth: &Dataset) -> Result<()> {
    if orig.is_empty() || synth.is_empty() {
        return Err(PegsError::Data("distance metrics need two non-empty datasets".into()));
    }
    if orig.schema() != synth.schema() {
        return Err(PegsError::Schema("original and synthetic datasets use different schemas".into()));
    }
    Ok(())
}

/// Empirical category frequencies of feature `i`.
pub fn frequencies(dataset: &Dataset, i: usize) -> Vec<f64> {
    let n = dataset.n_rows() as f64;
    dataset.counts(i).into_iter().map(|c| c as f64 / n).collect()
}

/// `sum_x (P_synth(x) - P_orig(x))^2` over the categories of feature `i`.
pub fn marginal_distance(orig: &Dataset, synth: &Dataset, i: usize) -> Result<f64> {
    check_pair(orig, synth)?;
    let p = frequencies(orig, i);
    let q = frequencies(synth, i);
    Ok(p.iter().zip(&q).map(|(a, b)| (b - a) * (b - a)).sum())
}

fn joint_counts(dataset: &Dataset, i: usize, j: usize) -> (Vec<u64>, Vec<u64>) {
    let ci = dataset.schema().cardinality(i);
    let cj = dataset.schema().cardinality(j);
    let mut table = vec![0u64; ci * cj];
    let mut given = vec![0u64; cj];
    for r in dataset.rows() {
        let (xi, xj) = (r[i] as usize, r[j] as usize);
        table[xj * ci + xi] += 1;
        given[xj] += 1;
    }
    (table, given)
}

/// `sum_{x_j} sum_{x_i} (P_synth(x_i | x_j) - P_orig(x_i | x_j))^2`.
///
/// Conditioning categories that do not occur in both datasets contribute 0.
pub fn conditional_distance(orig: &Dataset, synth: &Dataset, i: usize, j: usize) -> Result<f64> {
    check_pair(orig, synth)?;
    if i == j {
        return Err(PegsError::Data("conditional distance needs two different features".into()));
    }
    let ci = orig.schema().cardinality(i);
    let (to, go) = joint_counts(orig, i, j);
    let (ts, gs) = joint_counts(synth, i, j);
    let mut total = 0.0;
    for xj in 0..go.len() {
        if go[xj] == 0 || gs[xj] == 0 {
            continue;
        }
        for xi in 0..ci {
            let po = to[xj * ci + xi] as f64 / go[xj] as f64;
            let ps = ts[xj * ci + xi] as f64 / gs[xj] as f64;
            total += (ps - po) * (ps - po);
        }
    }
    Ok(total)
}
