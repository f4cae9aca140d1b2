use num_traits::{FromPrimitive, Num};

use crate::error::{PegsError, Result};

/// Combined inference over `K` synthetic datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct Combined<T> {
    /// Mean point estimate.
    pub q_bar: T,
    /// Between-dataset variance.
    pub b: T,
    /// Mean within-dataset variance.
    pub v_bar: T,
    /// `(1 + 1/K) b - v_bar`; may be negative.
    pub t_s: T,
}

/// Combining rules for fully synthetic data: point estimates `q` and their
/// variances `v` from `K >= 2` datasets. Generic so exact rational
/// arithmetic can be used.
pub fn combine_estimates<T>(q: &[T], v: &[T]) -> Result<Combined<T>>
where
    T: Num + FromPrimitive + PartialOrd + Clone + std::fmt::Debug,
{
    if q.len() != v.len() {
        return Err(PegsError::Data(format!(
            "{} estimates but {} variances",
            q.len(),
            v.len()
        )));
    }
    let k = q.len();
    if k < 2 {
        return Err(PegsError::Data(format!("combining rules need K >= 2 datasets, got {k}")));
    }
    let kt = T::from_usize(k).expect("K is representable");
    let sum = |xs: &[T]| xs.iter().cloned().fold(T::zero(), |a, b| a + b);
    let q_bar = sum(q) / kt.clone();
    let b = q
        .iter()
        .map(|qi| {
            let d = qi.clone() - q_bar.clone();
            d.clone() * d
        })
        .fold(T::zero(), |a, x| a + x)
        / (kt.clone() - T::one());
    let v_bar = sum(v) / kt.clone();
    let t_s = (kt.clone() + T::one()) * b.clone() / kt - v_bar.clone();
    if t_s < T::zero() {
        log::debug!("combined variance estimate T_s = {t_s:?} is negative");
    }
    Ok(Combined { q_bar, b, v_bar, t_s })
}
