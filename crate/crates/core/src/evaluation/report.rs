use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::combine::combine_estimates;
use super::metrics::{conditional_distance, marginal_distance};
use super::regression::{fit_regression, regression_distance, Predictor, RegressionKind, RegressionModel};
use super::risk::{attack_categorical, attack_numeric, population_uniqueness};
use crate::data::{Dataset, Schema};
use crate::error::{PegsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Marginal,
    Conditional,
    Regression,
    Attack,
    Uniqueness,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Marginal,
        Metric::Conditional,
        Metric::Regression,
        Metric::Attack,
        Metric::Uniqueness,
    ];

    pub fn parse(name: &str) -> Result<Metric> {
        match name.trim() {
            "marginal" => Ok(Metric::Marginal),
            "conditional" => Ok(Metric::Conditional),
            "regression" => Ok(Metric::Regression),
            "attack" | "attacks" => Ok(Metric::Attack),
            "uniqueness" => Ok(Metric::Uniqueness),
            other => Err(PegsError::Data(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub target: String,
    pub given: Vec<String>,
}

impl AttackSpec {
    pub fn name(&self) -> String {
        format!("{}|{}", self.target, self.given.join(","))
    }
}

/// What to measure when comparing synthetic data with the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "all_metrics")]
    pub metrics: Vec<Metric>,
    /// Conditioning features; every other feature is a conditional target.
    #[serde(default)]
    pub conditioning: Vec<String>,
    #[serde(default)]
    pub regressions: Vec<RegressionModel>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub quasi_identifiers: Vec<String>,
}

fn all_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig::hospital()
    }
}

impl EvalConfig {
    /// The hospital-discharge setup: conditionals given age and zip code,
    /// the high-charge logistic and charge linear models, the MDC and charge
    /// attacks, and uniqueness on age, sex and zip code.
    pub fn hospital() -> Self {
        let predictors = vec![
            Predictor::numeric("age.yrs"),
            Predictor::categorical("sev"),
            Predictor::categorical("cat"),
            Predictor::numeric("los"),
        ];
        EvalConfig {
            metrics: all_metrics(),
            conditioning: vec!["age.yrs".into(), "patzip".into()],
            regressions: vec![
                RegressionModel {
                    name: "I(charge>25K)".into(),
                    kind: RegressionKind::Logistic,
                    target: "charge".into(),
                    threshold: Some(25_000.0),
                    predictors: predictors.clone(),
                },
                RegressionModel {
                    name: "as.numeric(charge)".into(),
                    kind: RegressionKind::Linear,
                    target: "charge".into(),
                    threshold: None,
                    predictors,
                },
            ],
            attacks: vec![
                AttackSpec {
                    kind: AttackKind::Categorical,
                    target: "MDC".into(),
                    given: vec!["age.yrs".into(), "sex".into(), "patzip".into()],
                },
                AttackSpec {
                    kind: AttackKind::Numeric,
                    target: "charge".into(),
                    given: vec!["age.yrs".into(), "los".into(), "patzip".into()],
                },
            ],
            quasi_identifiers: vec!["age.yrs".into(), "sex".into(), "patzip".into()],
        }
    }

    /// Drops every item that names a feature missing from `schema` (or a
    /// numeric use of a feature without representatives).
    pub fn restrict_to(mut self, schema: &Schema) -> Self {
        let has = |n: &String| schema.index_of(n).is_some();
        let numeric = |n: &String| schema.index_of(n).is_some_and(|i| schema.feature(i).has_representatives());
        self.conditioning.retain(has);
        self.regressions.retain(|m| {
            numeric(&m.target) && m.predictors.iter().all(|p| if p.numeric { numeric(&p.feature) } else { has(&p.feature) })
        });
        self.attacks.retain(|a| {
            a.given.iter().all(has) && if a.kind == AttackKind::Numeric { numeric(&a.target) } else { has(&a.target) }
        });
        if !self.quasi_identifiers.iter().all(has) {
            self.quasi_identifiers.clear();
        }
        self
    }

    pub fn with_metrics(mut self, metrics: Vec<Metric>) -> Self {
        self.metrics = metrics;
        self
    }

    fn wants(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub names: Vec<String>,
    pub original: Vec<f64>,
    /// Mean coefficient over the synthetic datasets.
    pub synthetic: Vec<f64>,
    /// Combined variance `T_s` per coefficient (needs two or more datasets).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_s: Option<Vec<f64>>,
    pub distance: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

/// Utility and risk of one algorithm at one privacy level, averaged over its
/// synthetic datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: String,
    pub epsilon: Option<f64>,
    pub n_datasets: usize,
    #[serde(default)]
    pub marginal: BTreeMap<String, f64>,
    /// Keyed `"target|given"`.
    #[serde(default)]
    pub conditional: BTreeMap<String, f64>,
    #[serde(default)]
    pub regression: BTreeMap<String, RegressionSummary>,
    #[serde(default)]
    pub attacks: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniqueness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniqueness_original: Option<f64>,
}

impl EvalReport {
    /// Flat `(metric name, value)` list, per-item values followed by totals.
    pub fn metric_rows(&self) -> Vec<(String, f64)> {
        let mut rows = Vec::new();
        if !self.marginal.is_empty() {
            rows.extend(self.marginal.iter().map(|(k, v)| (format!("marginal:{k}"), *v)));
            rows.push(("marginal_total".into(), self.marginal.values().sum()));
        }
        if !self.conditional.is_empty() {
            rows.extend(self.conditional.iter().map(|(k, v)| (format!("conditional:{k}"), *v)));
            rows.push(("conditional_total".into(), self.conditional.values().sum()));
        }
        rows.extend(self.regression.iter().map(|(k, r)| (format!("regression:{k}"), r.distance)));
        rows.extend(self.attacks.iter().map(|(k, v)| (format!("attack:{k}"), *v)));
        if let Some(u) = self.uniqueness {
            rows.push(("uniqueness".into(), u));
        }
        rows
    }

    pub fn marginal_total(&self) -> f64 {
        self.marginal.values().sum()
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Evaluates the synthetic datasets `synths` of one algorithm against `orig`.
pub fn evaluate(
    orig: &Dataset,
    synths: &[Dataset],
    config: &EvalConfig,
    algorithm: &str,
    epsilon: Option<f64>,
) -> Result<EvalReport> {
    if synths.is_empty() {
        return Err(PegsError::Data("no synthetic datasets to evaluate".into()));
    }
    let schema = orig.schema();
    let mut report = EvalReport {
        algorithm: algorithm.to_string(),
        epsilon,
        n_datasets: synths.len(),
        marginal: BTreeMap::new(),
        conditional: BTreeMap::new(),
        regression: BTreeMap::new(),
        attacks: BTreeMap::new(),
        uniqueness: None,
        uniqueness_original: None,
    };

    if config.wants(Metric::Marginal) {
        for (i, f) in schema.features().iter().enumerate() {
            let d = synths.iter().map(|s| marginal_distance(orig, s, i)).collect::<Result<Vec<_>>>()?;
            report.marginal.insert(f.name.clone(), mean(d));
        }
    }

    if config.wants(Metric::Conditional) {
        for given in &config.conditioning {
            let j = schema.require(given)?;
            for (i, f) in schema.features().iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = synths
                    .iter()
                    .map(|s| conditional_distance(orig, s, i, j))
                    .collect::<Result<Vec<_>>>()?;
                report.conditional.insert(format!("{}|{given}", f.name), mean(d));
            }
        }
    }

    if config.wants(Metric::Regression) {
        for model in &config.regressions {
            let base = fit_regression(orig, model)?;
            let fits = synths.iter().map(|s| fit_regression(s, model)).collect::<Result<Vec<_>>>()?;
            let p = base.coefficients.len();
            let synthetic: Vec<f64> = (0..p).map(|k| mean(fits.iter().map(|f| f.coefficients[k]))).collect();
            let t_s = if fits.len() >= 2 {
                let mut out = Vec::with_capacity(p);
                for k in 0..p {
                    let q: Vec<f64> = fits.iter().map(|f| f.coefficients[k]).collect();
                    let v: Vec<f64> = fits.iter().map(|f| f.variances[k]).collect();
                    out.push(combine_estimates(&q, &v)?.t_s);
                }
                Some(out)
            } else {
                None
            };
            let dist = regression_distance(&synthetic, &base.coefficients)?;
            report.regression.insert(
                model.name.clone(),
                RegressionSummary {
                    skipped: dist.skipped.iter().map(|&k| base.names[k].clone()).collect(),
                    names: base.names,
                    original: base.coefficients,
                    synthetic,
                    t_s,
                    distance: dist.value,
                },
            );
        }
    }

    if config.wants(Metric::Attack) {
        for attack in &config.attacks {
            let target = schema.require(&attack.target)?;
            let given = attack.given.iter().map(|g| schema.require(g)).collect::<Result<Vec<_>>>()?;
            let values = synths
                .iter()
                .map(|s| match attack.kind {
                    AttackKind::Categorical => attack_categorical(orig, s, target, &given),
                    AttackKind::Numeric => attack_numeric(orig, s, target, &given),
                })
                .collect::<Result<Vec<_>>>()?;
            report.attacks.insert(attack.name(), mean(values));
        }
    }

    if config.wants(Metric::Uniqueness) && !config.quasi_identifiers.is_empty() {
        let qi = config
            .quasi_identifiers
            .iter()
            .map(|g| schema.require(g))
            .collect::<Result<Vec<_>>>()?;
        let u = synths
            .iter()
            .map(|s| population_uniqueness(s, &qi).map(|(_, f)| f))
            .collect::<Result<Vec<_>>>()?;
        report.uniqueness = Some(mean(u));
        report.uniqueness_original = Some(population_uniqueness(orig, &qi)?.1);
    }

    Ok(report)
}

/// One line of the long-format R-U table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuRow {
    pub algorithm: String,
    pub epsilon: Option<f64>,
    pub metric_name: String,
    pub value: f64,
}

/// Flattens reports into R-U rows in report order; duplicates are kept.
pub fn ru_map(reports: &[EvalReport]) -> Vec<RuRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.metric_rows().into_iter().map(move |(metric_name, value)| RuRow {
                algorithm: r.algorithm.clone(),
                epsilon: r.epsilon,
                metric_name,
                value,
            })
        })
        .collect()
}

/// Writes R-U rows as CSV; the header is written even when there are none.
pub fn write_ru_csv<W: Write>(rows: &[RuRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["algorithm", "epsilon", "metric_name", "value"])?;
    for r in rows {
        let eps = r.epsilon.map(|e| e.to_string()).unwrap_or_default();
        w.write_record([r.algorithm.as_str(), &eps, &r.metric_name, &r.value.to_string()])?;
    }
    w.flush().map_err(|e| PegsError::io("<ru-map>", e))?;
    Ok(())
}
