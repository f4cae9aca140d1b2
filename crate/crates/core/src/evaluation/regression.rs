use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Schema};
use crate::error::{PegsError, Result};

const JITTER: f64 = 1e-8;
const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 100;
const ZERO_COEFFICIENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionKind {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub feature: String,
    /// Use the category's numeric representative instead of one-hot columns.
    #[serde(default)]
    pub numeric: bool,
}

impl Predictor {
    pub fn numeric(feature: impl Into<String>) -> Self {
        Predictor {
            feature: feature.into(),
            numeric: true,
        }
    }

    pub fn categorical(feature: impl Into<String>) -> Self {
        Predictor {
            feature: feature.into(),
            numeric: false,
        }
    }
}

/// A regression to fit on original and synthetic data alike.
///
/// The response is the target's numeric representative, or the indicator
/// `representative > threshold` when a threshold is given. A logistic model
/// without threshold needs a two-category target and uses its index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub name: String,
    pub kind: RegressionKind,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub predictors: Vec<Predictor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    /// Column names, `"(Intercept)"` first.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Estimated sampling variance of each coefficient.
    pub variances: Vec<f64>,
    /// Rows left after dropping those with missing numeric values.
    pub n_used: usize,
    pub converged: bool,
}

enum Column {
    Numeric(usize),
    /// One-hot indicator of `feature == category`.
    Dummy(usize, u32),
}

struct Design {
    names: Vec<String>,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

fn response(schema: &Schema, model: &RegressionModel, target: usize, category: u32) -> Result<Option<f64>> {
    let spec = schema.feature(target);
    match (model.threshold, model.kind) {
        (Some(t), _) => Ok(spec.representative(category as usize).map(|v| f64::from(u8::from(v > t)))),
        (None, RegressionKind::Linear) => Ok(spec.representative(category as usize)),
        (None, RegressionKind::Logistic) if spec.cardinality() == 2 => Ok(Some(f64::from(category))),
        (None, RegressionKind::Logistic) => Err(PegsError::Data(format!(
            "model {:?}: logistic target {:?} needs two categories or a threshold",
            model.name, spec.name
        ))),
    }
}

fn design(dataset: &Dataset, model: &RegressionModel) -> Result<Design> {
    let schema = dataset.schema();
    let target = schema.require(&model.target)?;
    let needs_reps = model.threshold.is_some() || model.kind == RegressionKind::Linear;
    if needs_reps && !schema.feature(target).has_representatives() {
        return Err(PegsError::Schema(format!(
            "model {:?}: target {:?} has no numeric representatives",
            model.name, model.target
        )));
    }
    let mut names = vec!["(Intercept)".to_string()];
    let mut columns = Vec::new();
    for p in &model.predictors {
        let f = schema.require(&p.feature)?;
        if f == target {
            return Err(PegsError::Data(format!(
                "model {:?}: predictor {:?} is the target",
                model.name, p.feature
            )));
        }
        let spec = schema.feature(f);
        if p.numeric {
            if !spec.has_representatives() {
                return Err(PegsError::Schema(format!(
                    "model {:?}: numeric predictor {:?} has no numeric representatives",
                    model.name, p.feature
                )));
            }
            names.push(p.feature.clone());
            columns.push(Column::Numeric(f));
        } else {
            for c in 1..spec.cardinality() {
                names.push(format!("{}{}", p.feature, spec.categories[c]));
                columns.push(Column::Dummy(f, c as u32));
            }
        }
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    'rows: for r in dataset.rows() {
        let Some(y) = response(schema, model, target, r[target])? else { continue };
        let start = xs.len();
        xs.push(1.0);
        for col in &columns {
            match *col {
                Column::Numeric(f) => match schema.feature(f).representative(r[f] as usize) {
                    Some(v) => xs.push(v),
                    None => {
                        xs.truncate(start);
                        continue 'rows;
                    }
                },
                Column::Dummy(f, c) => xs.push(f64::from(u8::from(r[f] == c))),
            }
        }
        ys.push(y);
    }
    let p = names.len();
    if ys.len() < p {
        return Err(PegsError::Data(format!(
            "model {:?}: {} usable rows for {p} coefficients",
            model.name,
            ys.len()
        )));
    }
    Ok(Design {
        names,
        x: DMatrix::from_row_slice(ys.len(), p, &xs),
        y: DVector::from_vec(ys),
    })
}

/// Solves the symmetric positive (semi)definite system `a z = b`, retrying
/// once with a small ridge on the diagonal.
fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    let jittered = a + DMatrix::identity(a.nrows(), a.ncols()) * JITTER;
    jittered
        .cholesky()
        .map(|ch| ch.solve(b))
        .ok_or_else(|| PegsError::Data(format!("{what}: design matrix is rank deficient")))
}

/// Diagonal of the inverse of an information matrix, or NaN when singular.
fn inverse_diagonal(a: &DMatrix<f64>) -> Vec<f64> {
    match a.clone().cholesky() {
        Some(ch) => ch.inverse().diagonal().iter().copied().collect(),
        None => vec![f64::NAN; a.nrows()],
    }
}

struct Estimate {
    beta: Vec<f64>,
    variances: Vec<f64>,
    converged: bool,
}

fn fit_linear(d: &Design, name: &str) -> Result<Estimate> {
    let xt = d.x.transpose();
    let gram = &xt * &d.x;
    let beta = spd_solve(&gram, &(&xt * &d.y), name)?;
    let (n, p) = d.x.shape();
    let resid = &d.y - &d.x * &beta;
    let sigma2 = if n > p { resid.norm_squared() / (n - p) as f64 } else { f64::NAN };
    Ok(Estimate {
        beta: beta.iter().copied().collect(),
        variances: inverse_diagonal(&gram).into_iter().map(|v| v * sigma2).collect(),
        converged: true,
    })
}

fn log_likelihood(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(y.iter())
        .map(|(&e, &yi)| {
            // log(1 + exp(e)) computed stably
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            yi * e - softplus
        })
        .sum()
}

fn information(d: &Design, xt: &DMatrix<f64>, prob: &DVector<f64>) -> DMatrix<f64> {
    let mut weighted = d.x.clone();
    for (r, &p) in prob.iter().enumerate() {
        weighted.row_mut(r).scale_mut(p * (1.0 - p));
    }
    xt * weighted
}

fn fit_logistic(d: &Design, name: &str) -> Result<Estimate> {
    let xt = d.x.transpose();
    let mut beta = DVector::zeros(d.x.ncols());
    let mut ll = log_likelihood(&d.x, &d.y, &beta);
    for _ in 0..NEWTON_MAX_ITER {
        let eta = &d.x * &beta;
        let prob = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let grad = &xt * (&d.y - &prob);
        if grad.amax() <= NEWTON_TOL {
            break;
        }
        let step = spd_solve(&information(d, &xt, &prob), &grad, name)?;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let candidate = &beta + &step * t;
            let cand_ll = log_likelihood(&d.x, &d.y, &candidate);
            if cand_ll >= ll {
                beta = candidate;
                ll = cand_ll;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let prob = (&d.x * &beta).map(|e| 1.0 / (1.0 + (-e).exp()));
    let grad = &xt * (&d.y - &prob);
    let converged = grad.amax() <= NEWTON_TOL;
    if !converged {
        log::warn!("model {name:?}: logistic fit did not converge (possible separation); keeping last iterate");
    }
    Ok(Estimate {
        beta: beta.iter().copied().collect(),
        variances: inverse_diagonal(&information(d, &xt, &prob)),
        converged,
    })
}

/// Fits `model` on `dataset`. Rows whose target or numeric predictors fall in
/// a category without representative are dropped.
pub fn fit_regression(dataset: &Dataset, model: &RegressionModel) -> Result<RegressionFit> {
    let d = design(dataset, model)?;
    let est = match model.kind {
        RegressionKind::Linear => fit_linear(&d, &model.name)?,
        RegressionKind::Logistic => fit_logistic(&d, &model.name)?,
    };
    Ok(RegressionFit {
        names: d.names,
        coefficients: est.beta,
        variances: est.variances,
        n_used: d.y.len(),
        converged: est.converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDistance {
    pub value: f64,
    /// Coefficient positions skipped because the original is near zero.
    pub skipped: Vec<usize>,
}

/// `sum_i |(beta_synth_i - beta_orig_i) / beta_orig_i|`, skipping (with a
/// warning) coefficients whose original magnitude is at most 1e-12.
pub fn regression_distance(beta_synth: &[f64], beta_orig: &[f64]) -> Result<RegressionDistance> {
    if beta_synth.len() != beta_orig.len() {
        return Err(PegsError::Data(format!(
            "coefficient layouts differ: {} vs {}",
            beta_synth.len(),
            beta_orig.len()
        )));
    }
    let mut value = 0.0;
    let mut skipped = Vec::new();
    for (k, (&s, &o)) in beta_synth.iter().zip(beta_orig).enumerate() {
        if o.abs() <= ZERO_COEFFICIENT {
            log::warn!("coefficient {k}: original value {o:e} is too close to zero, skipped");
            skipped.push(k);
            continue;
        }
        value += ((s - o) / o).abs();
    }
    Ok(RegressionDistance { value, skipped })
}
