//! Perturbed multiple imputation baseline.
//!
//! Each feature gets a multinomial logistic model on the one-hot encoding of
//! the other features, fitted with a fixed ridge penalty. At synthesis time
//! its softmax output `g` is perturbed as `(g_j + alpha) / (1 + C_i alpha)`,
//! the same virtual-sample perturbation PeGS applies to counts.

mod lbfgs;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Category, Dataset, Schema};
use crate::error::{PegsError, Result};
use crate::privacy::{PrivacyCriterion, PrivacySpec};
use crate::rng::{sample_categorical, StreamRng};
use crate::sampler::{synthesize_units, SeedPool};

pub use lbfgs::{minimize, LbfgsOptions, LbfgsResult};

pub const DEFAULT_LAMBDA: f64 = 1e-3;

/// Multinomial logistic conditional `Pr(x_i = j | x_{-i})`.
///
/// Weights are stored row-major, one row per category: column 0 is the
/// intercept `c_ij`, the remaining columns are `beta_ij` over the one-hot
/// encoding of every non-target feature (no reference category dropped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmConditional {
    pub target: usize,
    pub n_classes: usize,
    /// Offset of each feature's one-hot block; `None` for the target.
    pub offsets: Vec<Option<usize>>,
    /// Length of the one-hot predictor vector.
    pub dim: usize,
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl GlmConditional {
    fn row_width(&self) -> usize {
        self.dim + 1
    }

    pub fn intercept(&self, class: usize) -> f64 {
        self.weights[class * self.row_width()]
    }

    /// Coefficient of `feature = category` in the score of `class`.
    pub fn coefficient(&self, class: usize, feature: usize, category: Category) -> Option<f64> {
        let off = self.offsets[feature]?;
        Some(self.weights[class * self.row_width() + 1 + off + category as usize])
    }

    /// Softmax response `g` for a full record (the target cell is ignored).
    pub fn response_for_record(&self, record: &[Category], out: &mut Vec<f64>) {
        out.clear();
        let w = self.row_width();
        for j in 0..self.n_classes {
            let row = &self.weights[j * w..(j + 1) * w];
            let mut s = row[0];
            for (f, off) in self.offsets.iter().enumerate() {
                if let Some(off) = off {
                    s += row[1 + off + record[f] as usize];
                }
            }
            out.push(s);
        }
        softmax_in_place(out);
    }

    /// Softmax response for `x_{-i}` given as the `M - 1` non-target values
    /// in schema order.
    pub fn response(&self, x_minus_i: &[Category]) -> Vec<f64> {
        let mut record = Vec::with_capacity(x_minus_i.len() + 1);
        record.extend_from_slice(&x_minus_i[..self.target]);
        record.push(0);
        record.extend_from_slice(&x_minus_i[self.target..]);
        let mut out = Vec::with_capacity(self.n_classes);
        self.response_for_record(&record, &mut out);
        out
    }

    /// Mean training log-likelihood of `dataset` under the model.
    pub fn mean_log_likelihood(&self, dataset: &Dataset) -> f64 {
        let mut g = Vec::new();
        let total: f64 = dataset
            .rows()
            .map(|r| {
                self.response_for_record(r, &mut g);
                g[r[self.target] as usize].ln()
            })
            .sum();
        total / dataset.n_rows().max(1) as f64
    }
}

fn softmax_in_place(s: &mut [f64]) {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in s.iter_mut() {
        *v /= z;
    }
}

/// Perturbs a normalised response: `(g_j + alpha) / (1 + C alpha)`.
pub fn perturb_response(g: &mut [f64], alpha: f64) {
    let total: f64 = g.iter().sum();
    assert!(
        (total - 1.0).abs() < 1e-9,
        "GLM response must be a normalised probability vector (sums to {total})"
    );
    let denom = 1.0 + g.len() as f64 * alpha;
    for v in g.iter_mut() {
        *v = (*v + alpha) / denom;
    }
}

/// Perturbed response probabilities for `x_{-i}`.
pub fn pmi_probability(model: &GlmConditional, x_minus_i: &[Category], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(PegsError::Privacy(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let mut g = model.response(x_minus_i);
    perturb_response(&mut g, alpha);
    Ok(g)
}

/// Rows grouped by their predictor pattern, with per-class counts.
struct Patterns {
    n_classes: usize,
    width: usize,
    active: Vec<usize>,
    counts: Vec<f64>,
    totals: Vec<f64>,
    n_rows: f64,
}

impl Patterns {
    fn build(dataset: &Dataset, target: usize, offsets: &[Option<usize>]) -> Self {
        let c = dataset.schema().cardinality(target);
        let width = offsets.iter().flatten().count();
        let mut groups: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
        for r in dataset.rows() {
            let cols: Vec<usize> = offsets
                .iter()
                .enumerate()
                .filter_map(|(f, off)| off.map(|o| 1 + o + r[f] as usize))
                .collect();
            groups.entry(cols).or_insert_with(|| vec![0.0; c])[r[target] as usize] += 1.0;
        }
        let mut groups: Vec<_> = groups.into_iter().collect();
        groups.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let mut active = Vec::with_capacity(groups.len() * width);
        let mut counts = Vec::with_capacity(groups.len() * c);
        let mut totals = Vec::with_capacity(groups.len());
        for (cols, cnt) in groups {
            active.extend(cols);
            totals.push(cnt.iter().sum());
            counts.extend(cnt);
        }
        Patterns {
            n_classes: c,
            width,
            active,
            counts,
            totals,
            n_rows: dataset.n_rows() as f64,
        }
    }

    /// Penalised mean negative log-likelihood and its gradient.
    fn objective(&self, w: &[f64], row_width: usize, lambda: f64, grad: &mut [f64]) -> f64 {
        let c = self.n_classes;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut scores = vec![0.0; c];
        let mut nll = 0.0;
        for (p, &total) in self.totals.iter().enumerate() {
            let cols = &self.active[p * self.width..(p + 1) * self.width];
            let counts = &self.counts[p * c..(p + 1) * c];
            for (j, s) in scores.iter_mut().enumerate() {
                let row = &w[j * row_width..(j + 1) * row_width];
                *s = row[0] + cols.iter().map(|&col| row[col]).sum::<f64>();
            }
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            let log_z = max + z.ln();
            for j in 0..c {
                let n_pj = counts[j];
                if n_pj > 0.0 {
                    nll -= n_pj * (scores[j] - log_z);
                }
                let resid = total * (scores[j] - log_z).exp() - n_pj;
                if resid != 0.0 {
                    let row = &mut grad[j * row_width..(j + 1) * row_width];
                    row[0] += resid;
                    for &col in cols {
                        row[col] += resid;
                    }
                }
            }
        }
        let inv_n = 1.0 / self.n_rows;
        let mut penalty = 0.0;
        for j in 0..c {
            for col in 1..row_width {
                let idx = j * row_width + col;
                grad[idx] = grad[idx] * inv_n + lambda * w[idx];
                penalty += w[idx] * w[idx];
            }
            grad[j * row_width] *= inv_n;
        }
        nll * inv_n + 0.5 * lambda * penalty
    }
}

fn layout(schema: &Schema, target: usize) -> (Vec<Option<usize>>, usize) {
    let mut offsets = Vec::with_capacity(schema.len());
    let mut dim = 0;
    for f in 0..schema.len() {
        if f == target {
            offsets.push(None);
        } else {
            offsets.push(Some(dim));
            dim += schema.cardinality(f);
        }
    }
    (offsets, dim)
}

/// Fits the ridge-penalised multinomial logistic conditional of feature `i`
/// from a zero start. Non-convergence is reported through `converged` and a
/// logged warning; the last iterate is kept.
pub fn fit_glm_conditional(dataset: &Dataset, i: usize, lambda: f64) -> Result<GlmConditional> {
    fit_glm_with(dataset, i, lambda, LbfgsOptions::default())
}

pub fn fit_glm_with(dataset: &Dataset, i: usize, lambda: f64, opts: LbfgsOptions) -> Result<GlmConditional> {
    let schema = dataset.schema();
    if i >= schema.len() {
        return Err(PegsError::Schema(format!("feature {i} out of range")));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(PegsError::Data(format!("ridge strength must be finite and >= 0, got {lambda}")));
    }
    let c = schema.cardinality(i);
    if dataset.n_rows() < c {
        return Err(PegsError::Data(format!(
            "feature {:?}: {} rows cannot determine {c} categories",
            schema.feature(i).name,
            dataset.n_rows()
        )));
    }
    let (offsets, dim) = layout(schema, i);
    let patterns = Patterns::build(dataset, i, &offsets);
    let row_width = dim + 1;
    let result = lbfgs::minimize(
        |w, g| patterns.objective(w, row_width, lambda, g),
        vec![0.0; c * row_width],
        opts,
    );
    if !result.converged {
        log::warn!(
            "feature {:?}: GLM fit stopped after {} iterations with gradient norm {:.3e}",
            schema.feature(i).name,
            result.iterations,
            result.grad_norm
        );
    }
    Ok(GlmConditional {
        target: i,
        n_classes: c,
        offsets,
        dim,
        weights: result.x,
        lambda,
        converged: result.converged,
        iterations: result.iterations,
        grad_norm: result.grad_norm,
    })
}

/// Picks the ridge strength with the best held-out log-likelihood under
/// `folds`-fold cross-validation (row `r` belongs to fold `r % folds`).
/// Ties go to the earlier grid entry.
pub fn select_lambda_cv(dataset: &Dataset, i: usize, grid: &[f64], folds: usize) -> Result<f64> {
    if grid.is_empty() || folds < 2 {
        return Err(PegsError::Data("cross-validation needs a non-empty grid and at least 2 folds".into()));
    }
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &lambda in grid {
        let mut score = 0.0;
        for fold in 0..folds {
            let (train, test): (Vec<usize>, Vec<usize>) = (0..dataset.n_rows()).partition(|r| r % folds != fold);
            let model = fit_glm_conditional(&dataset.select_rows(&train), i, lambda)?;
            score += model.mean_log_likelihood(&dataset.select_rows(&test));
        }
        if score > best.0 {
            best = (score, lambda);
        }
    }
    Ok(best.1)
}

/// One fitted conditional per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmiModels {
    pub schema: Schema,
    pub models: Vec<GlmConditional>,
}

impl PmiModels {
    pub fn fit(dataset: &Dataset, lambda: f64) -> Result<Self> {
        let models = (0..dataset.n_features())
            .into_par_iter()
            .map(|i| fit_glm_conditional(dataset, i, lambda))
            .collect::<Result<Vec<_>>>()?;
        Ok(PmiModels {
            schema: dataset.schema().clone(),
            models,
        })
    }

    /// Fits every feature with its own cross-validated ridge strength.
    pub fn fit_cv(dataset: &Dataset, grid: &[f64], folds: usize) -> Result<Self> {
        let models = (0..dataset.n_features())
            .into_par_iter()
            .map(|i| {
                let lambda = select_lambda_cv(dataset, i, grid, folds)?;
                fit_glm_conditional(dataset, i, lambda)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PmiModels {
            schema: dataset.schema().clone(),
            models,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| PegsError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PegsError::io(path, e))?;
        let models: PmiModels = serde_json::from_str(&text)?;
        if models.models.len() != models.schema.len() {
            return Err(PegsError::Data(format!("{path:?}: one model per feature is required")));
        }
        Ok(models)
    }

    /// One perturbed pass over all features, in place on `state`.
    pub fn pass(&self, state: &mut [Category], alpha: f64, rng: &mut StreamRng) {
        let mut g = Vec::with_capacity(self.schema.c_max());
        for model in &self.models {
            model.response_for_record(state, &mut g);
            perturb_response(&mut g, alpha);
            state[model.target] = sample_categorical(&g, rng) as Category;
        }
    }
}

/// PMI synthesis of `k` datasets. Only per-sample differential privacy is
/// defined for this engine.
pub fn pmi_synthesize(
    models: &PmiModels,
    privacy: &PrivacySpec,
    pool: &SeedPool,
    n_samples: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Dataset>> {
    if pool.schema() != &models.schema {
        return Err(PegsError::Schema("seed pool schema differs from the model schema".into()));
    }
    let alpha = match privacy.criterion {
        PrivacyCriterion::DpPerSample { .. } => privacy.derived_alpha.expect("DP spec carries alpha"),
        _ => {
            return Err(PegsError::Privacy(
                "the PMI engine supports only per-sample differential privacy".into(),
            ))
        }
    };
    pmi_synthesize_alpha(models, alpha, pool, n_samples, k, seed)
}

/// PMI synthesis with an explicit `alpha` (0 gives plain GLM imputation).
pub fn pmi_synthesize_alpha(
    models: &PmiModels,
    alpha: f64,
    pool: &SeedPool,
    n_samples: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Dataset>> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(PegsError::Privacy(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let schema = Arc::new(models.schema.clone());
    synthesize_units(&schema, n_samples, k, seed, 1, |rng| {
        let mut state = pool.draw(rng);
        models.pass(&mut state, alpha, rng);
        Ok(vec![state])
    })
}
