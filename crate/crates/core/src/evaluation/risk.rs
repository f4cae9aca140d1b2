use std::collections::HashMap;

use crate::data::{Category, Dataset};
use crate::error::{PegsError, Result};

fn project(row: &[Category], features: &[usize]) -> Vec<Category> {
    features.iter().map(|&f| row[f]).collect()
}

/// Number and fraction of rows whose quasi-identifier projection occurs
/// exactly once.
pub fn population_uniqueness(dataset: &Dataset, quasi_identifiers: &[usize]) -> Result<(usize, f64)> {
    if quasi_identifiers.is_empty() {
        return Err(PegsError::Data("population uniqueness needs at least one quasi-identifier".into()));
    }
    let mut groups: HashMap<Vec<Category>, usize> = HashMap::new();
    for r in dataset.rows() {
        *groups.entry(project(r, quasi_identifiers)).or_default() += 1;
    }
    let unique = groups.values().filter(|&&c| c == 1).count();
    let fraction = if dataset.is_empty() {
        0.0
    } else {
        unique as f64 / dataset.n_rows() as f64
    };
    Ok((unique, fraction))
}

fn check_attack(orig: &Dataset, synth: &Dataset, conditioning: &[usize]) -> Result<()> {
    if synth.is_empty() {
        return Err(PegsError::Data("attack simulation needs a non-empty synthetic dataset".into()));
    }
    if conditioning.is_empty() {
        return Err(PegsError::Data("attack simulation needs conditioning features".into()));
    }
    if orig.schema() != synth.schema() {
        return Err(PegsError::Schema("original and synthetic datasets use different schemas".into()));
    }
    Ok(())
}

fn mode(counts: &[u64]) -> usize {
    // max_by_key keeps the last maximum, so scan in reverse for lowest index
    counts
        .iter()
        .enumerate()
        .rev()
        .max_by_key(|&(_, &c)| c)
        .map(|(j, _)| j)
        .unwrap_or(0)
}

/// Misclassification rate of an intruder who infers `target` as the modal
/// synthetic value among rows matching the victim's `conditioning` values.
/// Ties go to the lowest category; an unmatched victim gets the global
/// synthetic mode.
pub fn attack_categorical(orig: &Dataset, synth: &Dataset, target: usize, conditioning: &[usize]) -> Result<f64> {
    check_attack(orig, synth, conditioning)?;
    if orig.is_empty() {
        return Ok(0.0);
    }
    let c = synth.schema().cardinality(target);
    let mut tables: HashMap<Vec<Category>, Vec<u64>> = HashMap::new();
    for r in synth.rows() {
        tables.entry(project(r, conditioning)).or_insert_with(|| vec![0; c])[r[target] as usize] += 1;
    }
    let global = mode(&synth.counts(target));
    let guesses: HashMap<&Vec<Category>, usize> = tables.iter().map(|(k, v)| (k, mode(v))).collect();
    let wrong = orig
        .rows()
        .filter(|r| {
            let guess = guesses.get(&project(r, conditioning)).copied().unwrap_or(global);
            guess != r[target] as usize
        })
        .count();
    Ok(wrong as f64 / orig.n_rows() as f64)
}

/// Mean absolute error of an intruder who infers the numeric `target` as
/// the mean representative among matching synthetic rows (global synthetic
/// mean when nothing matches). Rows whose target has no representative are
/// ignored on both sides.
pub fn attack_numeric(orig: &Dataset, synth: &Dataset, target: usize, conditioning: &[usize]) -> Result<f64> {
    check_attack(orig, synth, conditioning)?;
    let spec = synth.schema().feature(target);
    if !spec.has_representatives() {
        return Err(PegsError::Schema(format!(
            "attack target {:?} has no numeric representatives",
            spec.name
        )));
    }
    let mut sums: HashMap<Vec<Category>, (f64, u64)> = HashMap::new();
    let mut global = (0.0, 0u64);
    for r in synth.rows() {
        if let Some(v) = spec.representative(r[target] as usize) {
            let e = sums.entry(project(r, conditioning)).or_default();
            e.0 += v;
            e.1 += 1;
            global.0 += v;
            global.1 += 1;
        }
    }
    if global.1 == 0 {
        return Err(PegsError::Data(format!(
            "synthetic data has no numeric values for {:?}",
            spec.name
        )));
    }
    let global_mean = global.0 / global.1 as f64;
    let mut err = 0.0;
    let mut n = 0u64;
    for r in orig.rows() {
        let Some(truth) = spec.representative(r[target] as usize) else { continue };
        let guess = sums
            .get(&project(r, conditioning))
            .map_or(global_mean, |&(s, c)| s / c as f64);
        err += (guess - truth).abs();
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { err / n as f64 })
}
